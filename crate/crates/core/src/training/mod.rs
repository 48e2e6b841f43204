//! The alternating D → G → E optimization loop, evaluation, the identity
//! probe, and cross-validation over subject-exclusive folds.

mod config;
mod dataset;
mod evaluate;
pub mod probe;
mod run;
mod session;
mod step;

pub use config::{Precision, SpuriousConfig, TrainConfig};
pub use dataset::{evaluation_batch, make_batch, training_batch, Dataset, FoldData};
pub use evaluate::{argmax, evaluate, generate, predict, score, EvalReport};
pub use probe::{identity_probe, ProbeReport};
pub use run::{
    evaluate_checkpoint, identity_probes, run_cross_validation, train_to_dir, write_file, CvReport, EvalSummary,
    FoldResult, RunManifest, CHECKPOINT_DIR, CONFIG_FILE, FINAL_CHECKPOINT, METRICS_FILE, RUN_MANIFEST_FILE,
};
pub use session::{labelled_crops, Session, Snapshot};
pub use step::{
    baseline_update, d_update, e_update, eval_l1, g_update, train_step, Batch, Optimizers, StepMetrics, Update,
};
