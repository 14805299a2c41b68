use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::adam::AdamState;
use super::depth_params::{realize_depth, DepthParams};
use super::scale::scale_from_ground_plane;
use crate::egomotion::{iterative_egomotion, EstimatorConfig};
use crate::error::{invalid, Error, Result};
use crate::geom::{Intrinsics, Pose};
use crate::image::{DepthMap, ImageBuf};
use crate::io::{encode_raw, RawGrid};
use crate::loss::{
    loss_and_gradients, total_loss, DepthPrior, LossReport, LossWeights, MaskConfig, Sample, SourceView,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PftConfig {
    pub epochs: usize,
    pub average_last: usize,
    pub lambda_prior: f64,
    pub recompute_egomotion_each_epoch: bool,
    pub egomotion_iterations: usize,
    /// Adam step size on the raw depth parameters.
    pub lr: f64,
    /// Samples optimized concurrently by [`optimize_minibatch`].
    pub minibatch: usize,
    pub masks: MaskConfig,
    /// Camera height for the per-epoch ground-plane scale column.
    pub camera_height: Option<f64>,
}

impl Default for PftConfig {
    fn default() -> Self {
        PftConfig {
            epochs: 20,
            average_last: 5,
            lambda_prior: 0.1,
            recompute_egomotion_each_epoch: true,
            egomotion_iterations: 4,
            lr: 0.05,
            minibatch: 4,
            masks: MaskConfig::default(),
            camera_height: None,
        }
    }
}

impl PftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.average_last == 0 || (self.epochs > 0 && self.average_last > self.epochs) {
            return Err(invalid(format!(
                "average_last = {} must be in 1..={}",
                self.average_last, self.epochs
            )));
        }
        if self.egomotion_iterations == 0 {
            return Err(invalid("egomotion_iterations must be at least 1"));
        }
        if !(self.lambda_prior >= 0.0 && self.lambda_prior.is_finite()) {
            return Err(invalid("lambda_prior must be finite and >= 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr must be positive"));
        }
        if self.minibatch == 0 {
            return Err(invalid("minibatch must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PftSource<'a> {
    pub image: &'a ImageBuf,
    /// Enables geometric consistency and the inverse direction.
    pub depth: Option<&'a DepthMap>,
}

#[derive(Clone, Debug)]
pub struct PftSample<'a> {
    pub target: &'a ImageBuf,
    pub sources: Vec<PftSource<'a>>,
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub report: LossReport,
    /// Target-to-source poses used in this epoch.
    pub poses: Vec<Pose>,
    pub lr: f64,
    pub scale: Option<f64>,
    /// The epoch's loss was non-finite and its parameters were rolled back.
    pub rolled_back: bool,
}

#[derive(Clone, Debug)]
pub struct PftResult {
    pub depth: DepthMap,
    pub poses: Vec<Pose>,
    pub epochs: Vec<EpochRecord>,
    /// Depths realized in the epochs that were averaged into `depth`.
    pub averaged: Vec<DepthMap>,
    /// Loss of the averaged depth with the final poses.
    pub final_report: LossReport,
    pub params: DepthParams,
}

impl PftResult {
    pub fn reports(&self) -> Vec<&LossReport> {
        self.epochs.iter().map(|e| &e.report).collect()
    }

    /// `epoch,total,photo,gc,prior,pose_t_norm,scale`, one row per epoch.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,total,photo,gc,prior,pose_t_norm,scale\n");
        for (i, e) in self.epochs.iter().enumerate() {
            let r = &e.report;
            let scale = e.scale.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{scale}",
                r.total,
                r.photo,
                r.gc,
                r.prior,
                mean_translation(&e.poses)
            );
        }
        s
    }

    /// Raw parameter grid in the RFLT format.
    pub fn checkpoint(&self) -> Result<Vec<u8>> {
        encode_raw(&RawGrid {
            width: self.params.width,
            height: self.params.height,
            channels: 1,
            data: self.params.raw.clone(),
        })
    }
}

fn mean_translation(poses: &[Pose]) -> f64 {
    if poses.is_empty() {
        return 0.0;
    }
    poses.iter().map(|p| p.translation.norm()).sum::<f64>() / poses.len() as f64
}

fn estimate_poses(
    sample: &PftSample,
    depth: &DepthMap,
    k: &Intrinsics,
    iterations: usize,
    ecfg: &EstimatorConfig,
) -> Result<Vec<Pose>> {
    sample
        .sources
        .iter()
        .map(|s| Ok(iterative_egomotion(s.image, sample.target, depth, k, &Pose::identity(), iterations, ecfg)?.0))
        .collect()
}

struct Objective<'a> {
    sample: &'a PftSample<'a>,
    k: &'a Intrinsics,
    weights: LossWeights,
    masks: MaskConfig,
    init: &'a DepthMap,
    d_max: f64,
    bidirectional: bool,
}

impl<'a> Objective<'a> {
    fn sample(&self, depth: &'a DepthMap, poses: &[Pose]) -> Sample<'a> {
        Sample {
            target: self.sample.target,
            target_depth: depth,
            sources: self
                .sample
                .sources
                .iter()
                .zip(poses)
                .map(|(s, p)| SourceView {
                    image: s.image,
                    depth: s.depth,
                    pose: *p,
                })
                .collect(),
            intrinsics: self.k,
            prior: Some(DepthPrior {
                init: self.init,
                d_max: self.d_max,
            }),
        }
    }

    fn loss(&self, depth: &'a DepthMap, poses: &[Pose]) -> Result<LossReport> {
        total_loss(
            &self.sample(depth, poses),
            &self.weights,
            &self.masks,
            self.bidirectional,
        )
    }

    fn loss_and_depth_gradient(&self, depth: &'a DepthMap, poses: &[Pose]) -> Result<(LossReport, Vec<f64>)> {
        let (report, g) = loss_and_gradients(
            &self.sample(depth, poses),
            &self.weights,
            &self.masks,
            self.bidirectional,
        )?;
        Ok((report, g.target_depth))
    }
}

/// Refines per-pixel depth with Adam, re-estimating egomotion through the
/// feedback loop after every epoch. The smoothness term is replaced by the
/// depth prior against the initial depth.
pub fn tightly_coupled_optimize(
    sample: &PftSample,
    init: &DepthParams,
    k: &Intrinsics,
    weights: &LossWeights,
    cfg: &PftConfig,
    ecfg: &EstimatorConfig,
) -> Result<PftResult> {
    cfg.validate()?;
    ecfg.validate()?;
    weights.validate()?;
    if sample.sources.is_empty() {
        return Err(invalid("a sample needs at least one source frame"));
    }
    if init.width != k.width || init.height != k.height {
        return Err(invalid("depth parameters do not match intrinsics"));
    }
    let init_depth = realize_depth(init)?;
    let objective = Objective {
        sample,
        k,
        weights: LossWeights {
            smooth: 0.0,
            prior: cfg.lambda_prior,
            ..*weights
        },
        masks: cfg.masks,
        init: &init_depth,
        d_max: init.d_max,
        bidirectional: sample.sources.iter().all(|s| s.depth.is_some()),
    };

    let mut params = init.clone();
    let mut last_good = params.raw.clone();
    let mut adam = AdamState::new(params.raw.len()).with_lr(cfg.lr);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut window: VecDeque<DepthMap> = VecDeque::with_capacity(cfg.average_last);
    let mut frozen_poses: Option<Vec<Pose>> = None;

    for _ in 0..cfg.epochs {
        let depth = realize_depth(&params)?;
        if depth.data().iter().any(|d| !(*d >= params.d_min && *d <= params.d_max)) {
            return Err(Error::InvalidDepth("realized depth left its bounds".into()));
        }
        let poses = match (&frozen_poses, cfg.recompute_egomotion_each_epoch) {
            (Some(p), false) => p.clone(),
            _ => estimate_poses(sample, &depth, k, cfg.egomotion_iterations, ecfg)?,
        };
        frozen_poses.get_or_insert_with(|| poses.clone());
        let (report, grad_d) = objective.loss_and_depth_gradient(&depth, &poses)?;
        let scale = cfg
            .camera_height
            .and_then(|h| scale_from_ground_plane(&depth, k, h).ok());
        let grad: Vec<f64> = grad_d
            .iter()
            .zip(params.depth_derivative())
            .map(|(g, d)| g * d)
            .collect();
        let rolled_back = if report.total.is_finite() {
            match adam.step(&grad) {
                Ok(update) => {
                    last_good.clone_from(&params.raw);
                    for (p, u) in params.raw.iter_mut().zip(update) {
                        *p += u;
                    }
                    false
                }
                Err(Error::RejectedStep(_)) => true,
                Err(e) => return Err(e),
            }
        } else {
            true
        };
        if rolled_back {
            params.raw.clone_from(&last_good);
            adam.lr *= 0.5;
        } else {
            if window.len() == cfg.average_last {
                window.pop_front();
            }
            window.push_back(depth);
        }
        epochs.push(EpochRecord {
            report,
            poses,
            lr: adam.lr,
            scale,
            rolled_back,
        });
    }

    let depth = if window.is_empty() {
        init_depth.clone()
    } else {
        average_depths(window.make_contiguous())?
    };
    let poses = match (&frozen_poses, cfg.recompute_egomotion_each_epoch) {
        (Some(p), false) => p.clone(),
        _ => estimate_poses(sample, &depth, k, cfg.egomotion_iterations, ecfg)?,
    };
    let final_report = objective.loss(&depth, &poses)?;
    Ok(PftResult {
        depth,
        poses,
        epochs,
        averaged: window.into(),
        final_report,
        params,
    })
}

/// Arithmetic per-pixel mean.
pub fn average_depths(depths: &[DepthMap]) -> Result<DepthMap> {
    let first = depths.first().ok_or_else(|| invalid("nothing to average"))?;
    let mut acc = vec![0.0; first.len()];
    for d in depths {
        if d.width() != first.width() || d.height() != first.height() {
            return Err(invalid("depth maps differ in shape"));
        }
        for (a, v) in acc.iter_mut().zip(d.data()) {
            *a += v;
        }
    }
    let n = depths.len() as f64;
    DepthMap::new(first.width(), first.height(), acc.into_iter().map(|a| a / n).collect())
}

/// Independent runs over several samples, `cfg.minibatch` at a time.
/// Results keep the input order.
pub fn optimize_minibatch(
    samples: &[(PftSample, DepthParams)],
    k: &Intrinsics,
    weights: &LossWeights,
    cfg: &PftConfig,
    ecfg: &EstimatorConfig,
) -> Result<Vec<PftResult>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(cfg.minibatch) {
        let res: Vec<Result<PftResult>> = chunk
            .par_iter()
            .map(|(s, p)| tightly_coupled_optimize(s, p, k, weights, cfg, ecfg))
            .collect();
        for r in res {
            out.push(r?);
        }
    }
    Ok(out)
}
