//! Reference motion: clip representation and file format, synthetic clip
//! generation, curation, and two-stage retargeting from source skeletons.

pub mod clip;
pub mod curate;
pub mod generate;
pub mod retarget;

pub use clip::{ClipFrame, ClipSource, MotionClip};
pub use curate::{curate, CurationPolicy, Rejection, RejectionRule};
pub use generate::{generate_clip, ClipKind, ClipParams};
pub use retarget::{fit_shape, retarget_sequence, RetargetRegularization, SourceMotion, SourceSkeleton};
