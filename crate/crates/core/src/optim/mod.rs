//! Test-time refinement: Adam over per-pixel depth parameters coupled with
//! egomotion re-estimation, and ground-plane scale recovery.

mod adam;
mod coupled;
mod depth_params;
mod scale;

pub use adam::{adam_step, AdamState};
pub use coupled::{
    average_depths, optimize_minibatch, tightly_coupled_optimize, EpochRecord, PftConfig, PftResult, PftSample,
    PftSource,
};
pub use depth_params::{depth_from_activation, realize_depth, DepthParams};
pub use scale::{
    fit_ground_plane, median_filter, scale_from_ground_plane, PlaneFit, PLANE_INLIER_FRACTION, PLANE_MIN_INLIERS,
    PLANE_ROUNDS,
};
