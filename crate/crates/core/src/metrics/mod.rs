//! Evaluation: diversity score, LR-PSNR, sparsity and report files.

mod consistency;
mod diversity;
mod report;
mod sparsity;

pub use consistency::{lr_psnr, psnr};
pub use diversity::{
    distance_by_name, distance_matrix, diversity_from_distances, diversity_score, diversity_with,
    global_min_distance, patch_grid, Diversity, DiversityConfig, MeanAbs, Mse, PatchDistance,
};
pub use report::{
    evaluate, evaluate_image, evaluate_images, read_manifest, report_json, report_tsv, write_report,
    ImageMetrics, ManifestEntry, MetricsReport, TSV_COLUMNS,
};
pub use sparsity::{relative_sparsity, sparsity};
