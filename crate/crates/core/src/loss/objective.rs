use nalgebra::{Vector3, Vector6};

use super::terms::{filled_planes, photo_backward, photo_eval, prior_eval, raw_planes, select_terms, smooth_eval};
use super::{abs_on, sign_dz, LossReport, LossWeights, MaskConfig};
use crate::error::{invalid, Error, Result};
use crate::geom::{Intrinsics, Pose};
use crate::image::{bilinear_in_cell, bilinear_weights, Cell, DepthMap, ImageBuf};
use crate::warp::synthesize_view_with_cells;

/// One source frame of a training sample.
#[derive(Clone, Copy, Debug)]
pub struct SourceView<'a> {
    pub image: &'a ImageBuf,
    pub depth: Option<&'a DepthMap>,
    /// Target-to-source transform.
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug)]
pub struct DepthPrior<'a> {
    pub init: &'a DepthMap,
    pub d_max: f64,
}

/// A target frame, its depth, and the source frames it is reconstructed from.
#[derive(Clone, Debug)]
pub struct Sample<'a> {
    pub target: &'a ImageBuf,
    pub target_depth: &'a DepthMap,
    pub sources: Vec<SourceView<'a>>,
    pub intrinsics: &'a Intrinsics,
    pub prior: Option<DepthPrior<'a>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrt {
    Depth,
    Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gradient {
    Depth(Vec<f64>),
    Pose(Vec<Vector6<f64>>),
}

/// Analytic gradients of the total loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients {
    pub target_depth: Vec<f64>,
    /// Present for sources that carry a depth map.
    pub source_depths: Vec<Option<Vec<f64>>>,
    /// Left-perturbation gradient per target-to-source pose.
    pub poses: Vec<Vector6<f64>>,
}

/// Every discrete choice made while evaluating the loss: bilinear cells,
/// absolute-value signs, clamp states and the kept photometric terms.
/// Replaying a record keeps the loss on one smooth piece, which is what
/// finite-difference checks across kinks need.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Branches {
    forward: DirectionBranches,
    inverse: Vec<DirectionBranches>,
    prior_clamp: Vec<i8>,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct DirectionBranches {
    cells: Vec<Vec<Option<Cell>>>,
    l1_sign: Vec<Vec<i8>>,
    ssim_clamp: Vec<Vec<i8>>,
    gc_sign: Vec<Vec<i8>>,
    active: Vec<Vec<bool>>,
    smooth_x: Vec<i8>,
    smooth_y: Vec<i8>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: LossReport,
    pub branches: Branches,
    pub gradients: Option<LossGradients>,
}

struct Direction<'a> {
    target: &'a ImageBuf,
    depth: &'a DepthMap,
    sources: Vec<(&'a ImageBuf, Option<&'a DepthMap>, Pose)>,
}

#[derive(Clone, Copy)]
struct Seeds {
    photo: f64,
    smooth: f64,
    gc: f64,
}

struct DirectionGrad {
    depth: Vec<f64>,
    source_depths: Vec<Option<Vec<f64>>>,
    poses: Vec<Vector6<f64>>,
}

struct DirectionResult {
    photo: f64,
    smooth: f64,
    gc: f64,
    residual: Vec<f64>,
    mask: Vec<f64>,
    branches: DirectionBranches,
    grad: Option<DirectionGrad>,
}

fn eval_direction(
    dir: &Direction,
    k: &Intrinsics,
    alpha: f64,
    cfg: &MaskConfig,
    frozen: Option<&DirectionBranches>,
    seeds: Option<Seeds>,
) -> Result<DirectionResult> {
    let (w, h) = (k.width, k.height);
    let n = w * h;
    let target = dir.target;
    if target.width() != w || target.height() != h {
        return Err(invalid("target image does not match intrinsics"));
    }
    let s_count = dir.sources.len();
    if let Some(f) = frozen {
        if f.cells.len() != s_count {
            return Err(invalid("branch record does not match the sample"));
        }
    }
    for (img, _, _) in &dir.sources {
        if img.channels() != target.channels() {
            return Err(invalid("source and target differ in channel count"));
        }
    }

    let mut warps = Vec::with_capacity(s_count);
    let mut filled = Vec::with_capacity(s_count);
    let mut photos = Vec::with_capacity(s_count);
    let mut reprojection = Vec::with_capacity(s_count);
    let mut identity = Vec::new();
    let mut ratios: Vec<Option<Vec<f64>>> = Vec::with_capacity(s_count);
    let mut branches = DirectionBranches::default();

    for (j, (img, sd, pose)) in dir.sources.iter().enumerate() {
        let warp = synthesize_view_with_cells(img, dir.depth, pose, k, *sd, frozen.map(|f| &f.cells[j][..]))?;
        let planes = filled_planes(&warp.image, &warp.valid, target);
        let pe = photo_eval(
            &planes,
            target,
            alpha,
            frozen.map(|f| (&f.l1_sign[j][..], &f.ssim_clamp[j][..])),
        );
        reprojection.push(
            pe.e.iter()
                .zip(&warp.valid)
                .map(|(e, ok)| if *ok { *e } else { f64::INFINITY })
                .collect::<Vec<_>>(),
        );
        if cfg.use_automask && frozen.is_none() {
            identity.push(photo_eval(&raw_planes(img), target, alpha, None).e);
        }
        let mut gc_sign = vec![0i8; n];
        let ratio = warp.warped_depth.as_ref().map(|wd| {
            let mut r = vec![0.0; n];
            for i in 0..n {
                if warp.valid[i] {
                    let (z, s) = (warp.transformed_z[i], wd[i]);
                    let sg = frozen.map_or_else(|| sign_dz(z - s), |f| f.gc_sign[j][i]);
                    gc_sign[i] = sg;
                    r[i] = abs_on(z - s, sg) / (z + s);
                }
            }
            r
        });
        ratios.push(ratio);
        branches.cells.push(warp.cells.clone());
        branches.l1_sign.push(pe.l1_sign.clone());
        branches.ssim_clamp.push(pe.clamp.clone());
        branches.gc_sign.push(gc_sign);
        warps.push(warp);
        filled.push(planes);
        photos.push(pe);
    }

    let active = match frozen {
        Some(f) => f.active.clone(),
        None => select_terms(cfg, &reprojection, &identity),
    };
    let weight = |j: usize, i: usize| match (&ratios[j], cfg.use_self_discovered) {
        (Some(r), true) => 1.0 - r[i],
        _ => 1.0,
    };

    let mut photo_sum = 0.0;
    let mut n_active = 0usize;
    let mut gc_sum = 0.0;
    let mut n_gc = 0usize;
    let mut residual = vec![0.0; n];
    let mut mask = vec![0.0; n];
    for i in 0..n {
        let mut valid = 0usize;
        let mut e_valid = 0.0;
        let mut e_min = f64::INFINITY;
        let mut e_active = 0.0;
        let mut w_sum = 0.0;
        let mut a_count = 0usize;
        for j in 0..s_count {
            if !warps[j].valid[i] {
                continue;
            }
            let e = photos[j].e[i];
            valid += 1;
            e_valid += e;
            e_min = e_min.min(e);
            if let Some(r) = &ratios[j] {
                gc_sum += r[i];
                n_gc += 1;
            }
            if active[j][i] {
                let wgt = weight(j, i);
                photo_sum += wgt * e;
                n_active += 1;
                e_active += e;
                w_sum += wgt;
                a_count += 1;
            }
        }
        if cfg.use_min_reprojection {
            residual[i] = if a_count > 0 {
                e_active / a_count as f64
            } else if valid > 0 {
                e_min
            } else {
                0.0
            };
            mask[i] = w_sum;
        } else if valid > 0 {
            residual[i] = e_valid / valid as f64;
            mask[i] = w_sum / valid as f64;
        }
    }
    if n_active == 0 {
        return Err(Error::EmptySupport("no photometric terms survive masking".into()));
    }
    let photo = photo_sum / n_active as f64;
    let has_depth = ratios.iter().any(|r| r.is_some());
    if has_depth && n_gc == 0 {
        return Err(Error::EmptySupport("no overlap for geometric consistency".into()));
    }
    let gc = if has_depth { gc_sum / n_gc as f64 } else { 0.0 };

    let mut depth_grad = seeds.map(|_| vec![0.0; n]);
    let smooth = smooth_eval(
        target,
        dir.depth,
        frozen.map(|f| (&f.smooth_x[..], &f.smooth_y[..])),
        match (seeds, depth_grad.as_mut()) {
            (Some(s), Some(g)) => Some((s.smooth, g.as_mut_slice())),
            _ => None,
        },
    )?;
    branches.smooth_x = smooth.sx;
    branches.smooth_y = smooth.sy;
    branches.active = active.clone();

    let grad = match (seeds, depth_grad) {
        (Some(seeds), Some(mut g_depth)) => {
            let a_photo = seeds.photo / n_active as f64;
            let a_gc = if n_gc > 0 { seeds.gc / n_gc as f64 } else { 0.0 };
            let mut g_sd = Vec::with_capacity(s_count);
            let mut g_pose = Vec::with_capacity(s_count);
            for (j, (img, sd, pose)) in dir.sources.iter().enumerate() {
                let warp = &warps[j];
                let mut de = vec![0.0; n];
                let mut dr = vec![0.0; n];
                for i in 0..n {
                    if active[j][i] {
                        de[i] = a_photo * weight(j, i);
                        if cfg.use_self_discovered && ratios[j].is_some() {
                            dr[i] -= a_photo * photos[j].e[i];
                        }
                    }
                    if ratios[j].is_some() && warp.valid[i] {
                        dr[i] += a_gc;
                    }
                }
                let g_planes = photo_backward(&filled[j], target, alpha, &photos[j], &de);
                let mut gsd = sd.map(|_| vec![0.0; n]);
                let mut gp = Vector6::zeros();
                for y in 0..h {
                    for x in 0..w {
                        let i = y * w + x;
                        let Some(cell) = warp.cells[i] else { continue };
                        if !warp.valid[i] {
                            continue;
                        }
                        let [u, v] = warp.coords[i];
                        let (mut gu, mut gv) = (0.0, 0.0);
                        for (c, gpl) in g_planes.iter().enumerate() {
                            if gpl[i] != 0.0 {
                                let (_, dx, dy) = bilinear_in_cell(img.plane(c), w, h, cell, u, v);
                                gu += gpl[i] * dx;
                                gv += gpl[i] * dy;
                            }
                        }
                        let ray = k.ray(x as f64, y as f64);
                        let q = pose.transform(&(ray * dir.depth.data()[i]));
                        let mut gz = 0.0;
                        if let (Some(sdm), Some(gs_out)) = (sd, gsd.as_mut()) {
                            if dr[i] != 0.0 {
                                let (s, sdx, sdy) = bilinear_in_cell(sdm.data(), w, h, cell, u, v);
                                let z = q.z;
                                let sg = branches.gc_sign[j][i] as f64;
                                let a = abs_on(z - s, branches.gc_sign[j][i]);
                                let den = z + s;
                                let dr_dz = sg / den - a / (den * den);
                                let dr_ds = -sg / den - a / (den * den);
                                gz = dr[i] * dr_dz;
                                let gs = dr[i] * dr_ds;
                                gu += gs * sdx;
                                gv += gs * sdy;
                                let (idx, wts) = bilinear_weights(w, h, cell, u, v);
                                for (q_idx, wt) in idx.iter().zip(wts) {
                                    gs_out[*q_idx] += gs * wt;
                                }
                            }
                        }
                        if gu == 0.0 && gv == 0.0 && gz == 0.0 {
                            continue;
                        }
                        let (ju, jv) = k.project_jacobian(&q);
                        let g_q = Vector3::new(
                            gu * ju[0] + gv * jv[0],
                            gu * ju[1] + gv * jv[1],
                            gu * ju[2] + gv * jv[2] + gz,
                        );
                        g_depth[i] += g_q.dot(&(pose.rotation * ray));
                        let rot = q.cross(&g_q);
                        gp += Vector6::new(g_q.x, g_q.y, g_q.z, rot.x, rot.y, rot.z);
                    }
                }
                g_sd.push(gsd);
                g_pose.push(gp);
            }
            Some(DirectionGrad {
                depth: g_depth,
                source_depths: g_sd,
                poses: g_pose,
            })
        }
        _ => None,
    };

    Ok(DirectionResult {
        photo,
        smooth: smooth.value,
        gc,
        residual,
        mask,
        branches,
        grad,
    })
}

/// Evaluates the total loss, optionally replaying a branch record and
/// computing analytic gradients.
pub fn evaluate(
    sample: &Sample,
    weights: &LossWeights,
    cfg: &MaskConfig,
    bidirectional: bool,
    frozen: Option<&Branches>,
    with_gradients: bool,
) -> Result<Evaluation> {
    weights.validate()?;
    if sample.sources.is_empty() {
        return Err(invalid("a sample needs at least one source frame"));
    }
    let k = sample.intrinsics;
    if sample.target_depth.width() != k.width || sample.target_depth.height() != k.height {
        return Err(invalid("target depth does not match intrinsics"));
    }
    if bidirectional && sample.sources.iter().any(|s| s.depth.is_none()) {
        return Err(invalid("bidirectional evaluation needs a depth map for every source"));
    }
    let n = k.num_pixels();
    let s_count = sample.sources.len();
    let fwd_share = if bidirectional { 0.5 } else { 1.0 };
    let inv_share = 0.5 / s_count as f64;
    let seeds = |share: f64| {
        with_gradients.then_some(Seeds {
            photo: share * weights.photo,
            smooth: share * weights.smooth,
            gc: share * weights.gc,
        })
    };

    let forward = Direction {
        target: sample.target,
        depth: sample.target_depth,
        sources: sample.sources.iter().map(|s| (s.image, s.depth, s.pose)).collect(),
    };
    let fwd = eval_direction(
        &forward,
        k,
        weights.alpha,
        cfg,
        frozen.map(|b| &b.forward),
        seeds(fwd_share),
    )?;
    let mut photo = fwd_share * fwd.photo;
    let mut smooth = fwd_share * fwd.smooth;
    let mut gc = fwd_share * fwd.gc;

    let mut grads = fwd.grad.map(|g| LossGradients {
        target_depth: g.depth,
        source_depths: sample
            .sources
            .iter()
            .zip(g.source_depths)
            .map(|(s, gs)| gs.or_else(|| s.depth.map(|_| vec![0.0; n])))
            .collect(),
        poses: g.poses,
    });

    let mut branches = Branches {
        forward: fwd.branches,
        ..Default::default()
    };

    if bidirectional {
        for (j, src) in sample.sources.iter().enumerate() {
            let inverse = Direction {
                target: src.image,
                depth: src.depth.expect("checked above"),
                sources: vec![(sample.target, Some(sample.target_depth), src.pose.inverse())],
            };
            let res = eval_direction(
                &inverse,
                k,
                weights.alpha,
                cfg,
                frozen.map(|b| &b.inverse[j]),
                seeds(inv_share),
            )?;
            photo += inv_share * res.photo;
            smooth += inv_share * res.smooth;
            gc += inv_share * res.gc;
            if let (Some(acc), Some(g)) = (grads.as_mut(), res.grad) {
                if let Some(sd) = acc.source_depths[j].as_mut() {
                    for (a, b) in sd.iter_mut().zip(&g.depth) {
                        *a += b;
                    }
                }
                if let Some(td) = &g.source_depths[0] {
                    for (a, b) in acc.target_depth.iter_mut().zip(td) {
                        *a += b;
                    }
                }
                // T⁻¹ ← T⁻¹·exp(−δ) = exp(−Ad_{T⁻¹}δ)·T⁻¹
                let ad = src.pose.inverse().adjoint();
                acc.poses[j] -= ad.transpose() * g.poses[0];
            }
            branches.inverse.push(res.branches);
        }
    }

    let prior = match &sample.prior {
        Some(p) => {
            let pe = prior_eval(
                sample.target_depth,
                p.init,
                p.d_max,
                frozen.map(|b| &b.prior_clamp[..]),
                grads.as_mut().map(|g| (weights.prior, g.target_depth.as_mut_slice())),
            )?;
            branches.prior_clamp = pe.clamp;
            pe.value
        }
        None => 0.0,
    };

    let total = weights.photo * photo + weights.smooth * smooth + weights.gc * gc + weights.prior * prior;
    Ok(Evaluation {
        report: LossReport {
            total,
            photo,
            smooth,
            gc,
            prior,
            residual_map: fwd.residual,
            mask: fwd.mask,
        },
        branches,
        gradients: grads,
    })
}

pub fn total_loss(sample: &Sample, weights: &LossWeights, cfg: &MaskConfig, bidirectional: bool) -> Result<LossReport> {
    Ok(evaluate(sample, weights, cfg, bidirectional, None, false)?.report)
}

pub fn loss_and_gradients(
    sample: &Sample,
    weights: &LossWeights,
    cfg: &MaskConfig,
    bidirectional: bool,
) -> Result<(LossReport, LossGradients)> {
    let ev = evaluate(sample, weights, cfg, bidirectional, None, true)?;
    Ok((ev.report, ev.gradients.expect("requested")))
}

pub fn loss_gradients(
    sample: &Sample,
    weights: &LossWeights,
    cfg: &MaskConfig,
    bidirectional: bool,
    wrt: Wrt,
) -> Result<Gradient> {
    let (_, g) = loss_and_gradients(sample, weights, cfg, bidirectional)?;
    Ok(match wrt {
        Wrt::Depth => Gradient::Depth(g.target_depth),
        Wrt::Pose => Gradient::Pose(g.poses),
    })
}
