use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use super::curve::{loss_curve_1d, CurveAxis};
use super::{align_scale, odometry_error, OdomReport, Trajectory, DEFAULT_LENGTHS};
use crate::egomotion::{estimate_sequence, iterative_egomotion, perturb_pose, EstimatorConfig};
use crate::error::{invalid, Error, Result};
use crate::geom::{Intrinsics, Pose};
use crate::image::{DepthMap, ImageBuf};
use crate::loss::{LossWeights, Sample, SourceView};
use crate::synth::{make_sequence, SceneSpec};

/// Frames, target depths and ground-truth camera-to-world poses.
#[derive(Clone, Debug)]
pub struct SequenceData {
    pub images: Vec<ImageBuf>,
    pub depths: Vec<DepthMap>,
    pub gt: Trajectory,
    pub intrinsics: Intrinsics,
}

impl SequenceData {
    pub fn new(images: Vec<ImageBuf>, depths: Vec<DepthMap>, gt: Trajectory, intrinsics: Intrinsics) -> Result<Self> {
        if images.len() != depths.len() || images.len() != gt.len() {
            return Err(invalid("frames, depths and poses differ in count"));
        }
        Ok(SequenceData {
            images,
            depths,
            gt,
            intrinsics,
        })
    }

    pub fn render(spec: &SceneSpec, traj: &Trajectory) -> Result<Self> {
        let frames = make_sequence(spec, traj, &spec.intrinsics, 1)?;
        let (images, depths) = frames.into_iter().map(|f| (f.image, f.depth)).unzip();
        SequenceData::new(images, depths, traj.clone(), spec.intrinsics)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Gaussian image noise, seeded per frame from `seed`.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Self {
        let images = self
            .images
            .iter()
            .enumerate()
            .map(|(i, im)| im.with_noise(sigma, seed.wrapping_add(i as u64)))
            .collect();
        SequenceData { images, ..self.clone() }
    }

    pub fn subsample(&self, stride: usize) -> Result<Self> {
        let gt = self.gt.subsample(stride)?;
        Ok(SequenceData {
            images: self.images.iter().step_by(stride).cloned().collect(),
            depths: self.depths.iter().step_by(stride).cloned().collect(),
            gt,
            intrinsics: self.intrinsics,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    LossCurve,
    PerturbationSweep,
    DepthScaleSweep,
    FrameSkipSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::LossCurve,
        ExperimentKind::PerturbationSweep,
        ExperimentKind::DepthScaleSweep,
        ExperimentKind::FrameSkipSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LossCurve => "loss-curve",
            ExperimentKind::PerturbationSweep => "perturbation-sweep",
            ExperimentKind::DepthScaleSweep => "depth-scale-sweep",
            ExperimentKind::FrameSkipSweep => "frame-skip-sweep",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown experiment kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Iteration counts reported per sweep point.
    pub iterations: Vec<usize>,
    pub estimator: EstimatorConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub lengths: Vec<f64>,
    /// Scale-align estimated trajectories to ground truth before odometry.
    pub align: bool,
    /// Forward-translation perturbation ranges (scene units).
    pub translation_ranges: Vec<f64>,
    /// Yaw perturbation ranges in degrees.
    pub yaw_ranges_deg: Vec<f64>,
    /// Iterations run after the perturbed first prediction.
    pub extra_iterations: usize,
    pub depth_scales: Vec<f64>,
    pub strides: Vec<usize>,
    /// Pair index used for loss curves (frame `i` source, `i + 1` target).
    pub curve_pair: usize,
    pub curve_points: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            iterations: vec![1, 2, 3, 4],
            estimator: EstimatorConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            lengths: DEFAULT_LENGTHS.to_vec(),
            align: false,
            translation_ranges: vec![0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5],
            yaw_ranges_deg: vec![0.0, 0.1, 0.25, 0.5, 1.0, 3.0, 5.0],
            extra_iterations: 2,
            depth_scales: vec![0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3],
            strides: vec![1, 2, 3],
            curve_pair: 0,
            curve_points: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.weights.validate()?;
        if self.iterations.is_empty() || self.iterations.contains(&0) {
            return Err(invalid("iteration counts must be non-empty and at least 1"));
        }
        if self.strides.contains(&0) {
            return Err(invalid("strides must be at least 1"));
        }
        if self.depth_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("depth scales must be positive"));
        }
        if self
            .translation_ranges
            .iter()
            .chain(&self.yaw_ranges_deg)
            .any(|r| !(*r >= 0.0))
        {
            return Err(invalid("perturbation ranges must be non-negative"));
        }
        Ok(())
    }

    fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(1)
    }
}

/// A CSV-ready table; rows are in sweep-parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ResultTable {
    fn new(header: &[&str]) -> Self {
        ResultTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric value of `name` in every row.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| invalid(format!("no column '{name}'")))?;
        self.rows
            .iter()
            .map(|r| {
                r[c].parse()
                    .map_err(|_| Error::Parse(format!("'{}' is not a number", r[c])))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }
}

/// Accuracy of a chained estimate against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseErrors {
    pub odometry: OdomReport,
    /// Mean per-pair translation error norm.
    pub pair_t_err: f64,
    /// Mean per-pair rotation error in degrees.
    pub pair_r_err: f64,
}

pub fn pose_errors(relatives: &[Pose], gt: &Trajectory, lengths: &[f64], align: bool) -> Result<PoseErrors> {
    let gt_rel = gt.relatives();
    if relatives.len() != gt_rel.len() || relatives.is_empty() {
        return Err(invalid("estimate and ground truth differ in pair count"));
    }
    let n = relatives.len() as f64;
    let (mut t, mut r) = (0.0, 0.0);
    for (e, g) in relatives.iter().zip(&gt_rel) {
        t += (e.translation - g.translation).norm();
        r += e.inverse().compose(g).rotation_angle().to_degrees();
    }
    let mut est = Trajectory::from_relative(gt.poses()[0], relatives);
    if align {
        est = align_scale(&est, gt)?.0;
    }
    Ok(PoseErrors {
        odometry: odometry_error(&est, gt, lengths)?,
        pair_t_err: t / n,
        pair_r_err: r / n,
    })
}

fn f(v: f64) -> String {
    format!("{v}")
}

pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig, data: &SequenceData) -> Result<ResultTable> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(invalid("experiments need at least two frames"));
    }
    match kind {
        ExperimentKind::LossCurve => loss_curves(cfg, data),
        ExperimentKind::PerturbationSweep => perturbation_sweep(cfg, data),
        ExperimentKind::DepthScaleSweep => depth_scale_sweep(cfg, data),
        ExperimentKind::FrameSkipSweep => frame_skip_sweep(cfg, data),
    }
}

fn loss_curves(cfg: &ExperimentConfig, data: &SequenceData) -> Result<ResultTable> {
    let i = cfg.curve_pair;
    if i + 1 >= data.len() {
        return Err(invalid(format!("curve pair {i} outside the sequence")));
    }
    let base = data.gt.relative(i);
    let sample = Sample {
        target: &data.images[i + 1],
        target_depth: &data.depths[i + 1],
        sources: vec![SourceView {
            image: &data.images[i],
            depth: None,
            pose: base,
        }],
        intrinsics: &data.intrinsics,
        prior: None,
    };
    let mut table = ResultTable::new(&["axis", "parameter", "loss"]);
    for axis in [CurveAxis::ForwardTranslation, CurveAxis::Yaw] {
        let n = cfg.curve_points.unwrap_or_else(|| axis.default_points());
        let (params, losses) = loss_curve_1d(&sample, &base, axis, n, &cfg.weights)?;
        for (p, l) in params.into_iter().zip(losses) {
            table.push(vec![axis.name().to_string(), f(p), f(l)]);
        }
    }
    Ok(table)
}

/// Each pair's first-iteration prediction is perturbed (per-pair seed), then
/// refined for up to `extra_iterations` more rounds.
fn perturbation_sweep(cfg: &ExperimentConfig, data: &SequenceData) -> Result<ResultTable> {
    let mut table = ResultTable::new(&[
        "axis",
        "range",
        "iterations",
        "t_err",
        "r_err",
        "pair_t_err",
        "pair_r_err",
    ]);
    let k = &data.intrinsics;
    let first: Vec<Pose> = (0..data.len() - 1)
        .into_par_iter()
        .map(|i| {
            let (p, _) = iterative_egomotion(
                &data.images[i],
                &data.images[i + 1],
                &data.depths[i + 1],
                k,
                &Pose::identity(),
                1,
                &cfg.estimator,
            )?;
            Ok(p)
        })
        .collect::<Result<_>>()?;
    let settings = cfg
        .translation_ranges
        .iter()
        .map(|&r| ("translation", r, r, 0.0))
        .chain(cfg.yaw_ranges_deg.iter().map(|&r| ("yaw", r, 0.0, r.to_radians())));
    for (axis, range, trans, yaw) in settings {
        // runs[i][e] = pose of pair i after e extra iterations.
        let runs: Vec<Vec<Pose>> = first
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let start = perturb_pose(p, trans, yaw, cfg.seed.wrapping_add(i as u64))?;
                let mut poses = vec![start];
                if cfg.extra_iterations > 0 {
                    let (_, trace) = iterative_egomotion(
                        &data.images[i],
                        &data.images[i + 1],
                        &data.depths[i + 1],
                        k,
                        &start,
                        cfg.extra_iterations,
                        &cfg.estimator,
                    )?;
                    poses.extend(trace.records.iter().map(|r| r.pose));
                }
                Ok(poses)
            })
            .collect::<Result<_>>()?;
        for e in 0..=cfg.extra_iterations {
            let rel: Vec<Pose> = runs.iter().map(|r| r[e]).collect();
            let err = pose_errors(&rel, &data.gt, &cfg.lengths, cfg.align)?;
            table.push(vec![
                axis.to_string(),
                f(range),
                (1 + e).to_string(),
                f(err.odometry.t_err),
                f(err.odometry.r_err),
                f(err.pair_t_err),
                f(err.pair_r_err),
            ]);
        }
    }
    Ok(table)
}

/// Poses of every pair after each iteration count in `cfg.iterations`.
fn poses_per_count(cfg: &ExperimentConfig, data: &SequenceData, depths: &[DepthMap]) -> Result<Vec<Vec<Pose>>> {
    let (_, traces) = estimate_sequence(
        &data.images,
        depths,
        &data.intrinsics,
        cfg.max_iterations(),
        &cfg.estimator,
    )?;
    Ok(cfg
        .iterations
        .iter()
        .map(|&it| traces.iter().map(|t| t.records[it - 1].pose).collect())
        .collect())
}

fn depth_scale_sweep(cfg: &ExperimentConfig, data: &SequenceData) -> Result<ResultTable> {
    let mut table = ResultTable::new(&["scale", "iterations", "norm_ratio", "t_err", "r_err"]);
    let reference = poses_per_count(cfg, data, &data.depths)?;
    let norm_sum = |poses: &[Pose]| poses.iter().map(|p| p.translation.norm()).sum::<f64>();
    for &s in &cfg.depth_scales {
        let scaled = data.depths.iter().map(|d| d.scaled(s)).collect::<Result<Vec<_>>>()?;
        let runs = if s == 1.0 {
            reference.clone()
        } else {
            poses_per_count(cfg, data, &scaled)?
        };
        for ((it, rel), base) in cfg.iterations.iter().zip(&runs).zip(&reference) {
            let err = pose_errors(rel, &data.gt, &cfg.lengths, cfg.align)?;
            table.push(vec![
                f(s),
                it.to_string(),
                f(norm_sum(rel) / norm_sum(base)),
                f(err.odometry.t_err),
                f(err.odometry.r_err),
            ]);
        }
    }
    Ok(table)
}

fn frame_skip_sweep(cfg: &ExperimentConfig, data: &SequenceData) -> Result<ResultTable> {
    let mut table = ResultTable::new(&["stride", "iterations", "t_err", "r_err", "pair_t_err", "pair_r_err"]);
    for &stride in &cfg.strides {
        let sub = data.subsample(stride)?;
        if sub.len() < 2 {
            return Err(invalid(format!("stride {stride} leaves fewer than two frames")));
        }
        for (it, rel) in cfg.iterations.iter().zip(poses_per_count(cfg, &sub, &sub.depths)?) {
            let err = pose_errors(&rel, &sub.gt, &cfg.lengths, cfg.align)?;
            table.push(vec![
                stride.to_string(),
                it.to_string(),
                f(err.odometry.t_err),
                f(err.odometry.r_err),
                f(err.pair_t_err),
                f(err.pair_r_err),
            ]);
        }
    }
    Ok(table)
}
