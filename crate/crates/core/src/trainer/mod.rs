//! Training orchestration, configuration and ablation runs.

pub mod ablation;
pub mod config;
pub mod train;

pub use ablation::{
    mean_std, parse_axis, run_ablation, run_variants, summary_csv, sweep_variants, RunSummary, VariantSummary,
};
pub use config::{Flags, Preset, TrainConfig};
pub use train::{
    evaluate, heldout_dc, infer, train, train_with, DumpSpec, EvalPoint, IterationTrace, ReliabilityRow, TrainOptions,
    TrainOutcome,
};
