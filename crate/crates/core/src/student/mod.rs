//! Deployable student: history-stacked proprioception and a future reference
//! window feed a conditional VAE whose prior replaces the oracle-conditioned
//! encoder at deployment. Trained by online DAgger against the teacher.

pub mod cvae;
pub mod obs;
pub mod train;

pub use cvae::{
    batch_noise, batch_noise_for_tests, CvaeHeads, CvaeNetConfig, DistillBatch, DistillLoss, ForwardMode, LatentMode, StudentArch, StudentOutput,
    StudentPolicy, STUDENT_FORMAT_VERSION,
};
pub use obs::{build_deploy_obs, DeployObs, DeployObsConfig};
pub use train::{
    distill_step, student_quick_eval, teacher_labels, train_student, DistillHyper, StudentConfig, StudentLogRecord,
    StudentRun,
};
