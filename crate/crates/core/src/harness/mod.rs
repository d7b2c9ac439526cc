//! Desk-scale synthetic detector used to exercise the miner end to end.

pub mod eval;
pub mod model;
pub mod scene;
pub mod train;

pub use eval::{average_precision, evaluate_ap, mean_average_precision, ApReport, Detection, GroundTruth};
pub use model::ToyModel;
pub use scene::{generate_scene, Candidate, SceneSpec, SyntheticScene};
pub use train::{
    build_records, eval_scenes, evaluate_run, ohem_config, sohem_config, train, train_observed, MetricsTrace,
    TrainerSpec, TrainingRun, WindowStats, AP_THRESHOLDS, DIVERGENCE_LIMIT, HARNESS_BETA,
};
