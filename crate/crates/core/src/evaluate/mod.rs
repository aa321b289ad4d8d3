//! Tracking metrics, the observation-noise harness and the ablation grid.

pub mod ablation;
pub mod metrics;
pub mod policy;
pub mod robustness;

pub use ablation::{
    run_ablation, AblationGrid, AblationRow, AblationTable, Cell, CellTrainer, Recipe, Section, TrainedPolicy, TABLE_COLUMNS,
};
pub use metrics::{
    evaluate_clip, evaluate_suite, read_rows_csv, replay_trajectory, run_episode, tracking_metrics, write_rows_csv,
    Aggregate, ClipRow, EvalConfig, MetricMeans, Outcome, TrackingMetrics, TrackingReport, Trajectory,
};
pub use policy::{apply_noise, NoiseSpec, Policy, PolicyInput, Proprio};
pub use robustness::{robustness_sweep, RobustnessRow, RobustnessTable};
