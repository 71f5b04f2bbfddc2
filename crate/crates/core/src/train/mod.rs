//! Training data and the NLL training loop.

mod dataset;
mod trainer;

pub use dataset::{dihedral, sample_batch, synthetic_image, CropDraw, Dataset, DatasetSpec, SyntheticSpec};
pub use trainer::{
    checkpoint_name, read_log, train_loop, train_step, train_step_with_lr, StepOutcome, TrainConfig,
    TrainOutcome, LOG_FILE,
};
