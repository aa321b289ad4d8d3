//! Oracle tracking policy: privileged observations, the tracking reward with
//! a penalty curriculum, and PPO over parallel simulated episodes.

pub mod env;
pub mod obs;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod train;

pub use env::{EnvStep, TrackingEnv};
pub use obs::{build_oracle_obs, OracleObs};
pub use policy::{ObservationKind, TeacherNetConfig, TeacherPolicy, TEACHER_FORMAT_VERSION};
pub use ppo::{gae, ppo_update, PpoBatch, PpoHyper, PpoOptimizer, PpoStats, RolloutBatch, StepEnd};
pub use reward::{compute_reward, Curriculum, RewardBreakdown, RewardWeights};
pub use train::{quick_eval, train_teacher, TeacherConfig, TeacherLogRecord, TeacherRun};
