//! Gradual magnitude pruning with magnitude attention.

mod attention;
mod mask;
mod rules;
mod schedule;
mod state;

pub use attention::{attention_values, compute_attention, retention, NormKind, NormScope};
pub use mask::{compute_mask, compute_threshold, mask_change_ratio, prune_count, Threshold};
pub use rules::{backward_scale, forward_effective, UpdateRule};
pub use schedule::GradualSchedule;
pub use state::{MaskEvent, PruneState};
