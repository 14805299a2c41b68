//! The self-supervised objective: photometric reconstruction, edge-aware
//! smoothness, geometric consistency and the depth prior, together with pixel
//! masking and analytic gradients.

mod objective;
pub mod ssim;
mod terms;

pub use objective::{
    evaluate, loss_and_gradients, loss_gradients, total_loss, Branches, DepthPrior, Evaluation, Gradient,
    LossGradients, Sample, SourceView, Wrt,
};
pub use terms::{compose_masks, depth_prior_loss, geometric_consistency_loss, photometric_loss, smoothness_loss};

use crate::error::{invalid, Result};

/// Term weights of the total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// SSIM share of the photometric term.
    pub alpha: f64,
    pub photo: f64,
    pub smooth: f64,
    pub gc: f64,
    pub prior: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.85,
            photo: 1.0,
            smooth: 0.05,
            gc: 0.15,
            prior: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        for (name, v) in [
            ("photo", self.photo),
            ("smooth", self.smooth),
            ("gc", self.gc),
            ("prior", self.prior),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn zero() -> Self {
        LossWeights {
            alpha: 0.85,
            photo: 0.0,
            smooth: 0.0,
            gc: 0.0,
            prior: 0.0,
        }
    }
}

/// Which pixel-rejection mechanisms are applied to the photometric term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskConfig {
    /// Drop pixels better explained by the unwarped source.
    pub use_automask: bool,
    /// Keep only the best source per pixel.
    pub use_min_reprojection: bool,
    /// Weight pixels by `1 - r` where `r` is the depth inconsistency ratio.
    pub use_self_discovered: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            use_automask: true,
            use_min_reprojection: true,
            use_self_discovered: true,
        }
    }
}

impl MaskConfig {
    pub fn none() -> Self {
        MaskConfig {
            use_automask: false,
            use_min_reprojection: false,
            use_self_discovered: false,
        }
    }
}

/// Per-term values of one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub photo: f64,
    pub smooth: f64,
    pub gc: f64,
    pub prior: f64,
    /// Photometric residual per target pixel (forward direction).
    pub residual_map: Vec<f64>,
    /// Weight actually applied per target pixel (forward direction).
    pub mask: Vec<f64>,
}

impl LossReport {
    /// Flat `(name, value)` record.
    pub fn record(&self) -> [(&'static str, f64); 5] {
        [
            ("total", self.total),
            ("photo", self.photo),
            ("smooth", self.smooth),
            ("gc", self.gc),
            ("prior", self.prior),
        ]
    }

    /// `total=... photo=... smooth=... gc=... prior=...`
    pub fn to_record_string(&self) -> String {
        self.record()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Sign with a dead zone, so numerically exact matches count as stationary.
#[inline]
pub(crate) fn sign_dz(x: f64) -> i8 {
    if x > 1e-12 {
        1
    } else if x < -1e-12 {
        -1
    } else {
        0
    }
}

/// `|x|` continued along the branch recorded in `sign`.
#[inline]
pub(crate) fn abs_on(x: f64, sign: i8) -> f64 {
    match sign {
        1 => x,
        -1 => -x,
        _ => x.abs(),
    }
}

/// Clamp state of `(1 − SSIM)/2` into `[0, 1]`: -1 below, 0 inside, 1 above.
#[inline]
pub(crate) fn dssim_state(ssim: f64) -> i8 {
    let v = 0.5 * (1.0 - ssim);
    if v < 0.0 {
        -1
    } else if v > 1.0 {
        1
    } else {
        0
    }
}

#[inline]
pub(crate) fn dssim_on(ssim: f64, state: i8) -> f64 {
    match state {
        -1 => 0.0,
        1 => 1.0,
        _ => 0.5 * (1.0 - ssim),
    }
}
