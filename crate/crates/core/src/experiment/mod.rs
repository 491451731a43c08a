//! Config files, synthetic datasets and the fusion-by-pattern ablation grid.

mod ablation;
mod config;
mod dataset;

pub use ablation::{
    evaluate, run_ablation, run_cell, train_two_phase, AblationReport, CellResult, TableRow,
    TestMetrics, TwoPhaseResult, GRID,
};
pub use config::{
    AblationSection, AdmmSection, DataSection, ExperimentConfig, LlrSection, TrainSection,
};
pub use dataset::{make_dataset, phantom_document, read_phantom, simulate, Dataset};
