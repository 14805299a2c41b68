use crate::error::{Error, Result};
use crate::image::DepthMap;

/// Per-pixel depth parameters: `raw` is unconstrained and squashed to
/// `o = σ(raw)` before the inverse-depth map
/// `1/D = 1/d_min + (1/d_max − 1/d_min)·o`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthParams {
    pub width: usize,
    pub height: usize,
    pub raw: Vec<f64>,
    pub d_min: f64,
    pub d_max: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_bounds(d_min: f64, d_max: f64) -> Result<()> {
    if !(d_min > 0.0 && d_min < d_max && d_max.is_finite()) {
        return Err(Error::InvalidBounds { d_min, d_max });
    }
    Ok(())
}

/// Depth for activation `o ∈ [0, 1]`.
pub fn depth_from_activation(o: f64, d_min: f64, d_max: f64) -> f64 {
    1.0 / (1.0 / d_min + (1.0 / d_max - 1.0 / d_min) * o)
}

impl DepthParams {
    /// Parameters whose realization reproduces `depth` (clamped into the
    /// open bounds).
    pub fn from_depth(depth: &DepthMap, d_min: f64, d_max: f64) -> Result<Self> {
        check_bounds(d_min, d_max)?;
        let span = 1.0 / d_max - 1.0 / d_min;
        let raw = depth
            .data()
            .iter()
            .map(|d| {
                let o = ((1.0 / d - 1.0 / d_min) / span).clamp(1e-9, 1.0 - 1e-9);
                (o / (1.0 - o)).ln()
            })
            .collect();
        Ok(DepthParams {
            width: depth.width(),
            height: depth.height(),
            raw,
            d_min,
            d_max,
        })
    }

    pub fn activations(&self) -> Vec<f64> {
        self.raw.iter().map(|r| sigmoid(*r)).collect()
    }

    /// `∂D/∂raw` per pixel.
    pub fn depth_derivative(&self) -> Vec<f64> {
        let span = 1.0 / self.d_max - 1.0 / self.d_min;
        self.raw
            .iter()
            .map(|r| {
                let o = sigmoid(*r);
                let d = depth_from_activation(o, self.d_min, self.d_max);
                -d * d * span * o * (1.0 - o)
            })
            .collect()
    }
}

pub fn realize_depth(p: &DepthParams) -> Result<DepthMap> {
    check_bounds(p.d_min, p.d_max)?;
    let data = p
        .raw
        .iter()
        .map(|r| depth_from_activation(sigmoid(*r), p.d_min, p.d_max).clamp(p.d_min, p.d_max))
        .collect();
    DepthMap::new(p.width, p.height, data)
}
