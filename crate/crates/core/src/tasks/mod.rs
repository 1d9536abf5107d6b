//! End-to-end recovery pipelines.

mod config;
mod fit;
mod pipelines;
pub mod synth;
mod table;

pub use config::TaskConfig;
pub use fit::{fit, sparse_objective, FitProblem, FitResult, TraceRow};
pub use pipelines::{
    denoise_image, denoise_image_traced, hsi_mixed_denoise, hsi_mixed_denoise_traced,
    inpaint_image, reconstruct_transcriptomics, recover_pointcloud, HsiOutput, Recovered,
    ScatterOutput, SparseComponent,
};
pub use table::ObservationTable;
