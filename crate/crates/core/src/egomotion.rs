//! Iterative egomotion with feedback: the source view is re-synthesized with
//! the current pose estimate, a correction is estimated from the synthesized
//! view and the target, and the correction is compounded into the pose.
//!
//! The correction estimator is damped Gauss–Newton on the robust photometric
//! residual between the synthesized view and the target.

use std::fmt::Write as _;

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geom::{hat, Intrinsics, Pose, Tangent, MIN_Z};
use crate::image::{CubicTaps, DepthMap, ImageBuf};
use crate::loss::photometric_loss;
use crate::warp::{synthesize_view_cubic, WarpResult};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub max_inner_steps: usize,
    /// Inner loop stops once an accepted step is shorter than this.
    pub step_tolerance: f64,
    pub damping_init: f64,
    pub damping_bounds: [f64; 2],
    /// Scale of the Cauchy weight on intensity residuals.
    pub robust_scale: f64,
    /// Target pixels whose depth differs from a neighbour within
    /// `edge_radius` by more than this relative amount are left out.
    pub edge_threshold: f64,
    pub edge_radius: usize,
    /// SSIM share of the photometric loss recorded in traces.
    pub alpha: f64,
    /// Gaussian presmoothing of both views before alignment, in pixels
    /// (0 disables it).
    pub blur_sigma: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            max_inner_steps: 10,
            step_tolerance: 1e-7,
            damping_init: 1e-4,
            damping_bounds: [1e-10, 1e8],
            robust_scale: 0.01,
            edge_threshold: 0.1,
            edge_radius: 2,
            alpha: 0.85,
            blur_sigma: 0.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_inner_steps == 0 {
            return Err(invalid("max_inner_steps must be at least 1"));
        }
        let [lo, hi] = self.damping_bounds;
        if !(self.step_tolerance > 0.0 && self.damping_init > 0.0 && lo > 0.0 && lo <= hi && self.robust_scale > 0.0) {
            return Err(invalid("estimator tolerances and damping must be positive"));
        }
        if !(self.edge_threshold > 0.0) {
            return Err(invalid("edge_threshold must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("estimator alpha outside [0, 1]"));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(invalid("blur_sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// Correction applied on the left of the pose (zero when rejected).
    pub delta: Tangent,
    pub pose: Pose,
    /// Robust photometric cost minimized by the estimator.
    pub loss: f64,
    /// SSIM + L1 photometric loss of the synthesized view.
    pub photometric: f64,
    pub valid_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationTrace {
    /// Robust photometric cost at the initial pose.
    pub initial_loss: f64,
    pub initial_photometric: f64,
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("iteration,d_rho_x,d_rho_y,d_rho_z,d_phi_x,d_phi_y,d_phi_z,loss,valid_fraction,photometric\n");
        for (i, r) in self.records.iter().enumerate() {
            let d = &r.delta.0;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                i + 1,
                d[0],
                d[1],
                d[2],
                d[3],
                d[4],
                d[5],
                r.loss,
                r.valid_fraction,
                r.photometric
            );
        }
        out
    }
}

/// Normal equations of the photometric residual around one correction.
struct Linearization {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    /// Robust cost per target pixel, NaN where the pixel took no part.
    costs: Vec<f64>,
}

/// Summed costs of two linearizations over the pixels both include, so a
/// pixel crossing the support boundary does not decide acceptance.
fn common_costs(a: &Linearization, b: &Linearization) -> (f64, f64) {
    a.costs
        .iter()
        .zip(&b.costs)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .fold((0.0, 0.0), |(sa, sb), (x, y)| (sa + x, sb + y))
}

struct Problem<'a> {
    image: ImageBuf,
    target: ImageBuf,
    points: Vec<Option<Vector3<f64>>>,
    /// Pixels of `image` that may be sampled.
    valid: Vec<bool>,
    k: &'a Intrinsics,
    /// Squared Cauchy scale.
    c2: f64,
}

impl<'a> Problem<'a> {
    fn taps(&self, u: f64, v: f64) -> Option<CubicTaps> {
        let w = self.k.width;
        let taps = CubicTaps::at(u, v, w, self.k.height)?;
        (taps.y0..taps.y0 + 4)
            .all(|y| self.valid[y * w + taps.x0..y * w + taps.x0 + 4].iter().all(|b| *b))
            .then_some(taps)
    }

    fn new(
        image: &ImageBuf,
        valid: Option<&[bool]>,
        target: &ImageBuf,
        depth: &DepthMap,
        k: &'a Intrinsics,
        cfg: &EstimatorConfig,
    ) -> Result<Self> {
        let (w, h) = (k.width, k.height);
        if !image.same_shape(target) || image.width() != w || image.height() != h {
            return Err(invalid("estimator inputs differ in shape"));
        }
        if depth.width() != w || depth.height() != h {
            return Err(invalid("estimator depth does not match intrinsics"));
        }
        let n = w * h;
        let valid_at = |i: usize| valid.is_none_or(|v| v[i]);
        let dd = depth.data();
        let r = cfg.edge_radius as i64;
        let smooth_at = |i: usize| {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            (y - r..=y + r)
                .filter(|ny| (0..h as i64).contains(ny))
                .flat_map(|ny| {
                    (x - r..=x + r)
                        .filter(|nx| (0..w as i64).contains(nx))
                        .map(move |nx| ny as usize * w + nx as usize)
                })
                .all(|j| (dd[j] / dd[i] - 1.0).abs() <= cfg.edge_threshold)
        };
        let points = (0..n)
            .map(|i| (valid_at(i) && smooth_at(i)).then(|| k.ray((i % w) as f64, (i / w) as f64) * dd[i]))
            .collect();
        let valid: Vec<bool> = (0..n).map(valid_at).collect();
        Ok(Problem {
            image: image.blurred(cfg.blur_sigma, Some(&valid)),
            target: target.blurred(cfg.blur_sigma, None),
            points,
            valid,
            k,
            c2: cfg.robust_scale * cfg.robust_scale,
        })
    }

    fn linearize(&self, corr: &Pose) -> Option<Linearization> {
        let (w, h) = (self.k.width, self.k.height);
        let n = w * h;
        let c2 = self.c2;
        let mut hm = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut costs = vec![f64::NAN; n];
        let mut count = 0usize;
        for (i, p) in self.points.iter().enumerate() {
            let Some(p) = p else { continue };
            let q = corr.transform(p);
            if !(q.z > MIN_Z) {
                continue;
            }
            let (u, v) = self.k.project_unchecked(&q);
            let Some(taps) = self.taps(u, v) else { continue };
            let (ju, jv) = self.k.project_jacobian(&q);
            let qx = hat(&q);
            let mut cost = 0.0;
            for c in 0..self.image.channels() {
                let (val, ix, iy) = taps.sample(self.image.plane(c), w);
                let r = val - self.target.plane(c)[i];
                let dq = Vector3::new(
                    ix * ju[0] + iy * jv[0],
                    ix * ju[1] + iy * jv[1],
                    ix * ju[2] + iy * jv[2],
                );
                // ∂q/∂ξ = [I, −[q]×]
                let rot = -(qx.transpose() * dq);
                let j = Vector6::new(dq.x, dq.y, dq.z, rot.x, rot.y, rot.z);
                let q = r * r / c2;
                let (wt, rho) = (1.0 / (1.0 + q), 0.5 * c2 * q.ln_1p());
                hm += j * j.transpose() * wt;
                g += j * (wt * r);
                cost += rho;
            }
            costs[i] = cost;
            count += 1;
        }
        (count > 0).then_some(Linearization { h: hm, g, costs })
    }
}

/// Mean robust cost per target pixel of a synthesized view, over the pixels
/// the estimator would use.
pub fn robust_photometric_cost(
    warp: &WarpResult,
    target: &ImageBuf,
    depth: &DepthMap,
    k: &Intrinsics,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let problem = Problem::new(&warp.image, Some(&warp.valid), target, depth, k, cfg)?;
    let lin = problem
        .linearize(&Pose::identity())
        .ok_or_else(|| Error::EmptySupport("no overlap between synthesized view and target".into()))?;
    let (sum, n) = lin
        .costs
        .iter()
        .filter(|c| c.is_finite())
        .fold((0.0, 0usize), |(s, n), c| (s + c, n + 1));
    Ok(sum / n as f64)
}

/// Estimates the correction `δ` such that sampling the synthesized view at
/// `π(exp(δ)·P)` best matches the target, where `P` are the target points.
pub fn estimate_correction(
    warped: &ImageBuf,
    target: &ImageBuf,
    depth: &DepthMap,
    k: &Intrinsics,
    cfg: &EstimatorConfig,
) -> Result<Tangent> {
    estimate_correction_masked(warped, None, target, depth, k, cfg)
}

/// As [`estimate_correction`], restricted to pixels where `valid` holds.
pub fn estimate_correction_masked(
    warped: &ImageBuf,
    valid: Option<&[bool]>,
    target: &ImageBuf,
    depth: &DepthMap,
    k: &Intrinsics,
    cfg: &EstimatorConfig,
) -> Result<Tangent> {
    cfg.validate()?;
    let problem = Problem::new(warped, valid, target, depth, k, cfg)?;
    let mut corr = Pose::identity();
    let Some(mut lin) = problem.linearize(&corr) else {
        return Err(Error::EmptySupport(
            "no overlap between synthesized view and target".into(),
        ));
    };
    let [lo, hi] = cfg.damping_bounds;
    let mut lambda = cfg.damping_init.clamp(lo, hi);
    for _ in 0..cfg.max_inner_steps {
        let scale = lin.h.diagonal().max();
        if !(scale > 1e-14) || lin.g.norm() <= 1e-14 * scale.max(1.0) {
            break;
        }
        let mut a = lin.h;
        for d in 0..6 {
            a[(d, d)] += lambda * lin.h[(d, d)].max(1e-9 * scale);
        }
        let Some(chol) = a.cholesky() else {
            lambda = (lambda * 10.0).min(hi);
            continue;
        };
        let step = Tangent(-chol.solve(&lin.g));
        let candidate = step.exp()?.compose(&corr);
        let next = problem.linearize(&candidate).filter(|next| {
            let (before, after) = common_costs(&lin, next);
            after < before
        });
        match next {
            Some(next) => {
                corr = candidate;
                lin = next;
                lambda = (lambda / 10.0).max(lo);
                if step.norm() < cfg.step_tolerance {
                    break;
                }
            }
            _ => {
                if lambda >= hi {
                    break;
                }
                lambda = (lambda * 10.0).min(hi);
            }
        }
    }
    crate::geom::log_map(&corr)
}

/// Runs `iterations` rounds of synthesize → estimate → compound, starting
/// from `init` (identity for a null initialization). Every round re-warps
/// the original source with the cumulative pose.
pub fn iterative_egomotion(
    source: &ImageBuf,
    target: &ImageBuf,
    depth: &DepthMap,
    k: &Intrinsics,
    init: &Pose,
    iterations: usize,
    cfg: &EstimatorConfig,
) -> Result<(Pose, IterationTrace)> {
    if iterations == 0 {
        return Err(invalid("iterations must be at least 1"));
    }
    cfg.validate()?;
    let mut pose = *init;
    let mut warp = synthesize_view_cubic(source, depth, &pose, k)?;
    let mut loss = robust_photometric_cost(&warp, target, depth, k, cfg)?;
    let mut photometric = photometric_loss(&warp, target, cfg.alpha)?.0;
    let mut trace = IterationTrace {
        initial_loss: loss,
        initial_photometric: photometric,
        records: Vec::with_capacity(iterations),
    };
    for _ in 0..iterations {
        let local = estimate_correction_masked(&warp.image, Some(&warp.valid), target, depth, k, cfg)?;
        // Pose · exp(δ) written as a left update.
        let delta = Tangent(pose.adjoint() * local.0);
        let candidate = delta.exp()?.compose(&pose).orthonormalized();
        let cand_warp = synthesize_view_cubic(source, depth, &candidate, k)?;
        let applied = match robust_photometric_cost(&cand_warp, target, depth, k, cfg) {
            Ok(l) if l <= loss => {
                pose = candidate;
                photometric = photometric_loss(&cand_warp, target, cfg.alpha)?.0;
                warp = cand_warp;
                loss = l;
                delta
            }
            _ => Tangent::zero(),
        };
        trace.records.push(IterationRecord {
            delta: applied,
            pose,
            loss,
            photometric,
            valid_fraction: warp.valid_fraction(),
        });
    }
    Ok((pose, trace))
}

/// Estimates every consecutive pair of a sequence with null initialization.
/// Pair `i` uses frame `i` as the source and frame `i + 1` (with its depth)
/// as the target, so the returned poses are the relative motions
/// `C_i⁻¹·C_{i+1}`. Pairs run in parallel; output order follows the frames.
pub fn estimate_sequence(
    images: &[ImageBuf],
    depths: &[DepthMap],
    k: &Intrinsics,
    iterations: usize,
    cfg: &EstimatorConfig,
) -> Result<(Vec<Pose>, Vec<IterationTrace>)> {
    if images.len() != depths.len() {
        return Err(invalid("one depth map per frame is required"));
    }
    let pairs: Vec<(Pose, IterationTrace)> = (0..images.len().saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            iterative_egomotion(
                &images[i],
                &images[i + 1],
                &depths[i + 1],
                k,
                &Pose::identity(),
                iterations,
                cfg,
            )
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Perturbs the forward translation and the yaw of `pose` uniformly within
/// the given ranges.
pub fn perturb_pose(pose: &Pose, trans_range: f64, yaw_range: f64, seed: u64) -> Result<Pose> {
    if !(trans_range >= 0.0 && yaw_range >= 0.0) {
        return Err(invalid("perturbation ranges must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = rng.random_range(-trans_range..=trans_range);
    let dyaw = rng.random_range(-yaw_range..=yaw_range);
    let mut out = *pose;
    out.translation.z += dt;
    if dyaw != 0.0 {
        out.rotation = Pose::yaw(dyaw).rotation * pose.rotation;
    }
    Ok(out)
}

/// `exp(Σ δ)·init`, the first-order alternative to composing corrections
/// one by one. Kept for comparison against the exact product.
pub fn summed_composition(corrections: &[Tangent], init: &Pose) -> Result<Pose> {
    let sum = corrections.iter().fold(Vector6::zeros(), |acc, d| acc + d.0);
    Ok(Tangent(sum).exp()?.compose(init))
}

pub fn exact_composition(corrections: &[Tangent], init: &Pose) -> Result<Pose> {
    corrections.iter().try_fold(*init, |acc, d| Ok(d.exp()?.compose(&acc)))
}
