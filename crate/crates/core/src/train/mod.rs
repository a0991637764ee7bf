//! Training loop, run configuration and the experiment commands.

mod commands;
mod config;
mod metrics;
mod scopes;
mod trainer;

pub use commands::{
    ablation_csv, cmd_ablate, cmd_eval, cmd_export_decisions, cmd_random_ops, cmd_train,
    initial_model, train_on, trial_seed, Ablation, AblationRow, RandomOpsReport, TrainOutcome,
    TrialResult, ABLATION_HEADER, BEST_CHECKPOINT, CONFIG_FILE, FINAL_CHECKPOINT,
    INITIAL_CHECKPOINT, METRICS_FILE, TIMING_FILE,
};
pub use config::{DatasetKind, RunConfig};
pub use metrics::{read_metrics, JsonlWriter, MetricsRecord, TimingRecord};
pub use scopes::{all_scopes, cmd_gradcheck, COMPOSITE_SCOPES, OP_SCOPES};
pub use trainer::{
    argmax_rows, augment_config, data_dir, evaluate, load_splits, EvalReport, Splits, StepStats,
    Trainer, DATA_DIR_ENV,
};
