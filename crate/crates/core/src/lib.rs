//! Self-supervised monocular depth and egomotion on synthetic scenes:
//! se(3) geometry, view synthesis, the photometric objective with analytic
//! gradients, an iterative feedback-coupled egomotion estimator, test-time
//! depth/pose refinement and trajectory evaluation.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod egomotion;
pub mod error;
pub mod eval;
pub mod geom;
pub mod image;
pub mod io;
pub mod loss;
pub mod optim;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
pub use geom::{Intrinsics, Point3, Pose, Tangent};
pub use image::{DepthMap, ImageBuf};
pub use loss::{LossReport, LossWeights, MaskConfig};
pub use warp::{synthesize_view, WarpResult};
