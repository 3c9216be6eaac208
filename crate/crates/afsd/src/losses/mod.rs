//! Label assignment and training objectives.

mod assign;
mod bcl;
mod detection;

pub use assign::{assign, Assignment, CoarseTarget, RefinedTarget};
pub use bcl::{
    activation_guided_loss, bcl_eligibility, boundary_contrastive_loss, boundary_indicators, rearrange_clip,
    Eligibility, Rearranged,
};
pub use detection::{build_targets, detection_loss, focal_cls_loss, LossReport, Targets};
