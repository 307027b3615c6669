//! Training and the evaluation protocols: augmentation strategies, warmup,
//! k-fold augmentation, scarcity, occlusion, label fidelity, and ablations.

mod ablation;
mod augment;
mod config;
mod eval;
mod render;
mod run;
mod train;

pub use ablation::{
    ablation_cells, ablation_suite, ablation_suite_on, mean_stderr, AblationPlan, AblationReport, Cell, CellResult,
    SeedRun, TABLE_ROWS,
};
pub use augment::{augment_batch, one_hot, topk_count, AugmentedBatch, BatchView};
pub use config::{DataConfig, ExperimentConfig, LabelMode, Strategy};
pub use eval::{
    label_fidelity_eval, occlusion_eval, FidelityReport, FidelityRow, OcclusionTable, OCCLUSION_FRACTIONS,
};
pub use render::{render_bars, render_preview, save_png, PreviewRow};
pub use run::{run_dir, write_run};
pub use train::{
    batch_saliency, calibrate_for, collect_maps, evaluate, metrics_csv, prepare_data, train, train_on,
    CalibrationInfo, Evaluation, MetricsRecord, TrainOutcome, METRICS_HEADER,
};
