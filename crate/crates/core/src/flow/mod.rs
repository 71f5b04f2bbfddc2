//! Conditional normalizing flow: invertible layers, the composed model,
//! checkpoints and runtime verification.

mod checkpoint;
mod config;
mod layers;
mod model;
pub mod verify;

pub use checkpoint::{
    config_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::FlowConfig;
pub use layers::{
    actnorm, affine_coupling, conditioner, invmix, noise_injector, Direction, LayerKind, LayerSpec,
    LOG_SCALE_CLAMP,
};
pub use model::{flow_forward, flow_inverse, nll, Condition, FlowModel, Nll};
