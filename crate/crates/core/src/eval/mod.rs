//! Trajectory and depth metrics, loss curves and the sweep experiments.

mod curve;
mod depth;
mod experiment;
mod odometry;
mod trajectory;

pub use curve::{curve_grid, curve_to_text, loss_curve_1d, pose_on_axis, CurveAxis, YAW_HALF_RANGE};
pub use depth::{depth_error, DepthReport};
pub use experiment::{
    pose_errors, run_experiment, ExperimentConfig, ExperimentKind, PoseErrors, ResultTable, SequenceData,
};
pub use odometry::{odometry_error, segments, LengthError, OdomReport, Segment, DEFAULT_LENGTHS};
pub use trajectory::{align_scale, rescale_trajectory, Trajectory};
