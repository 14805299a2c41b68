use crate::error::{invalid, Result};
use crate::geom::Pose;
use crate::loss::{total_loss, LossWeights, MaskConfig, Sample};

/// Single degree of freedom swept by [`loss_curve_1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveAxis {
    /// Forward (z) translation over `t_z ± 3|t_z|`.
    ForwardTranslation,
    /// Yaw offset over `±YAW_HALF_RANGE` radians.
    Yaw,
}

pub const YAW_HALF_RANGE: f64 = 0.02;

impl CurveAxis {
    pub fn name(self) -> &'static str {
        match self {
            CurveAxis::ForwardTranslation => "translation",
            CurveAxis::Yaw => "yaw",
        }
    }

    /// Default grid size per axis.
    pub fn default_points(self) -> usize {
        match self {
            CurveAxis::ForwardTranslation => 200,
            CurveAxis::Yaw => 100,
        }
    }
}

/// Evenly spaced grid over the axis range around `base`. Translation values
/// are absolute `t_z`; yaw values are offsets applied on the left of the
/// base rotation.
pub fn curve_grid(base: &Pose, axis: CurveAxis, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(invalid("a loss curve needs at least two points"));
    }
    let (lo, hi) = match axis {
        CurveAxis::ForwardTranslation => {
            let tz = base.translation.z;
            if tz == 0.0 || !tz.is_finite() {
                return Err(invalid("forward translation sweep needs a non-zero base t_z"));
            }
            (tz - 3.0 * tz.abs(), tz + 3.0 * tz.abs())
        }
        CurveAxis::Yaw => (-YAW_HALF_RANGE, YAW_HALF_RANGE),
    };
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect())
}

pub fn pose_on_axis(base: &Pose, axis: CurveAxis, value: f64) -> Pose {
    match axis {
        CurveAxis::ForwardTranslation => {
            let mut p = *base;
            p.translation.z = value;
            p
        }
        CurveAxis::Yaw => Pose {
            rotation: Pose::yaw(value).rotation * base.rotation,
            translation: base.translation,
        },
    }
}

/// Photometric loss of the sample's first source as one pose parameter is
/// swept, every other parameter held at `base` (target-to-source). No masks
/// are applied so every grid point sees the same loss definition.
pub fn loss_curve_1d(
    sample: &Sample,
    base: &Pose,
    axis: CurveAxis,
    n: usize,
    weights: &LossWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if sample.sources.is_empty() {
        return Err(invalid("loss curve needs a source view"));
    }
    weights.validate()?;
    let grid = curve_grid(base, axis, n)?;
    let w = LossWeights {
        photo: 1.0,
        alpha: weights.alpha,
        ..LossWeights::zero()
    };
    let losses = grid
        .iter()
        .map(|&v| {
            let mut s = sample.clone();
            s.sources.truncate(1);
            s.sources[0].pose = pose_on_axis(base, axis, v);
            s.prior = None;
            Ok(total_loss(&s, &w, &MaskConfig::none(), false)?.photo)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, losses))
}

/// Two-column plain text, one `parameter loss` pair per line.
pub fn curve_to_text(params: &[f64], losses: &[f64]) -> String {
    params.iter().zip(losses).map(|(p, l)| format!("{p} {l}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Tangent;

    #[test]
    fn grid_spans_the_requested_range() {
        let base = Pose::from_translation(nalgebra::Vector3::new(0.0, 0.0, -0.3));
        let g = curve_grid(&base, CurveAxis::ForwardTranslation, 200).unwrap();
        assert_eq!(g.len(), 200);
        assert!((g[0] + 1.2).abs() < 1e-15 && (g[199] - 0.6).abs() < 1e-15);
        let y = curve_grid(&base, CurveAxis::Yaw, 2).unwrap();
        assert_eq!(y, vec![-0.02, 0.02]);
        assert!(curve_grid(&base, CurveAxis::Yaw, 1).is_err());
        assert!(curve_grid(&Pose::identity(), CurveAxis::ForwardTranslation, 5).is_err());
    }

    #[test]
    fn axis_poses_change_one_parameter() {
        let base = Tangent::from_array([0.1, 0.0, 0.3, 0.0, 0.01, 0.0]).exp().unwrap();
        let p = pose_on_axis(&base, CurveAxis::ForwardTranslation, 0.7);
        assert_eq!(
            (p.translation.x, p.translation.y, p.translation.z),
            (base.translation.x, base.translation.y, 0.7)
        );
        assert_eq!(p.rotation, base.rotation);
        let y = pose_on_axis(&base, CurveAxis::Yaw, 0.01);
        assert_eq!(y.translation, base.translation);
        assert!((y.rotation_angle() - 0.02).abs() < 1e-12);
    }
}
