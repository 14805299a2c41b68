use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use tightsfm_core::egomotion::estimate_sequence;
use tightsfm_core::eval::{
    align_scale, depth_error, odometry_error, pose_errors, rescale_trajectory, run_experiment, DepthReport,
    ExperimentKind, SequenceData, Trajectory,
};
use tightsfm_core::geom::format_pose_file;
use tightsfm_core::io::read_depth;
use tightsfm_core::optim::{
    median_filter, optimize_minibatch, scale_from_ground_plane, DepthParams, PftSample, PftSource,
};
use tightsfm_core::synth::{circular_trajectory, corrupt_depth, make_sequence, SceneSpec};
use tightsfm_core::{DepthMap, Pose};

use crate::config::{parse_scene, scene_to_text, RunConfig};
use crate::dataset::{frame_name, read_frames, read_trajectory, write_atomic, write_frames};

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn start_pose(gt: Option<&Trajectory>) -> Pose {
    gt.and_then(|t| t.poses().first().copied())
        .unwrap_or_else(Pose::identity)
}

fn scene(cfg: &RunConfig, path: Option<&Path>) -> Result<SceneSpec> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading scene {}", p.display()))?;
            parse_scene(&text, cfg.seed).with_context(|| format!("in scene {}", p.display()))
        }
        None => Ok(SceneSpec {
            texture_seed: cfg.seed,
            ..SceneSpec::default()
        }),
    }
}

pub fn synth_gen(cfg: &RunConfig, scene_path: Option<&Path>, traj_path: Option<&Path>, out: &Path) -> Result<String> {
    let spec = scene(cfg, scene_path)?;
    let traj = match traj_path {
        Some(p) => read_trajectory(p)?,
        None => circular_trajectory(cfg.synth.radius, cfg.synth.step, cfg.synth.frames),
    };
    if traj.is_empty() {
        bail!("the trajectory has no poses");
    }
    let frames = make_sequence(&spec, &traj, &spec.intrinsics, cfg.synth.stride)?;
    write_frames(out, &frames, &traj.subsample(cfg.synth.stride)?)?;
    write_text(&out.join("config.resolved"), &cfg.resolved())?;
    write_text(&out.join("scene.resolved"), &scene_to_text(&spec))?;
    Ok(format!("wrote {} frames to {}", frames.len(), out.display()))
}

pub fn estimate(cfg: &RunConfig, frames_dir: &Path, out: &Path) -> Result<String> {
    let fs = read_frames(frames_dir)?;
    write_text(&out.join("config.resolved"), &cfg.resolved())?;
    let header = "pairs,t_err,r_err,segments,pair_t_err,pair_r_err\n";
    if fs.len() < 2 {
        let start: Vec<Pose> = fs.poses.as_ref().map(|t| t.poses().to_vec()).unwrap_or_default();
        write_text(&out.join("trajectory.txt"), &format_pose_file(&start))?;
        write_text(&out.join("report.csv"), header)?;
        return Ok(format!(
            "{} holds {} frame(s); no frame pairs to estimate, wrote an empty result",
            frames_dir.display(),
            fs.len()
        ));
    }
    let e = &cfg.estimate;
    let depths: Vec<DepthMap> = fs
        .depths()?
        .iter()
        .map(|d| d.scaled(e.depth_scale))
        .collect::<Result<_, _>>()?;
    let images: Vec<_> = if e.noise > 0.0 {
        fs.images
            .iter()
            .enumerate()
            .map(|(i, im)| im.with_noise(e.noise, cfg.seed.wrapping_add(i as u64)))
            .collect()
    } else {
        fs.images.clone()
    };
    let (rels, traces) = estimate_sequence(&images, &depths, &fs.intrinsics, e.iterations, &cfg.estimator)?;
    let mut traj = Trajectory::from_relative(start_pose(fs.poses.as_ref()), &rels);
    if let Some(h) = e.camera_height {
        let raw = depths[1..]
            .iter()
            .map(|d| scale_from_ground_plane(d, &fs.intrinsics, h))
            .collect::<Result<Vec<_>, _>>()
            .context("ground-plane rescaling")?;
        traj = rescale_trajectory(&traj, &median_filter(&raw, e.scale_window))?;
    }
    write_text(&out.join("trajectory.txt"), &format_pose_file(traj.poses()))?;
    if cfg.traces {
        for (i, t) in traces.iter().enumerate() {
            write_text(
                &out.join("traces").join(format!("pair_{}.csv", frame_name(i))),
                &t.to_csv(),
            )?;
        }
    }
    let mut report = String::from(header);
    let summary = match &fs.poses {
        Some(gt) => {
            let err = pose_errors(&traj.relatives(), gt, &cfg.eval.lengths, cfg.eval.align)?;
            let o = &err.odometry;
            let _ = writeln!(
                report,
                "{},{},{},{},{},{}",
                rels.len(),
                o.t_err,
                o.r_err,
                o.segments,
                err.pair_t_err,
                err.pair_r_err
            );
            format!(
                "{} pairs, t_err {:.4}%, r_err {:.4} deg/100",
                rels.len(),
                o.t_err,
                o.r_err
            )
        }
        None => {
            let _ = writeln!(report, "{},,,,,", rels.len());
            format!("{} pairs (no ground truth for evaluation)", rels.len())
        }
    };
    write_text(&out.join("report.csv"), &report)?;
    Ok(summary)
}

pub fn optimize(cfg: &RunConfig, frames_dir: &Path, out: &Path) -> Result<String> {
    let fs = read_frames(frames_dir)?;
    let o = &cfg.optimize;
    let n = if o.max_frames == 0 {
        fs.len()
    } else {
        o.max_frames.min(fs.len())
    };
    if n < 2 {
        bail!(
            "optimization needs at least two frames, {} has {}",
            frames_dir.display(),
            fs.len()
        );
    }
    let gt = &fs.depths()?[..n];
    write_text(&out.join("config.resolved"), &cfg.resolved())?;
    let init: Vec<DepthMap> = gt
        .iter()
        .enumerate()
        .map(|(t, d)| {
            if o.corruption > 0.0 {
                corrupt_depth(d, o.corruption, cfg.seed.wrapping_add(t as u64))
            } else {
                Ok(d.clone())
            }
        })
        .collect::<Result<_, _>>()?;
    let batch: Vec<(PftSample, DepthParams)> = (0..n)
        .map(|t| {
            // The previous frame, when present, is always the first source.
            let sources = [t.checked_sub(1), Some(t + 1).filter(|s| *s < n)]
                .into_iter()
                .flatten()
                .map(|s| PftSource {
                    image: &fs.images[s],
                    depth: None,
                })
                .collect();
            Ok((
                PftSample {
                    target: &fs.images[t],
                    sources,
                },
                DepthParams::from_depth(&init[t], o.d_min, o.d_max)?,
            ))
        })
        .collect::<Result<_>>()?;
    let results = optimize_minibatch(&batch, &fs.intrinsics, &cfg.weights, &cfg.pft, &cfg.estimator)?;

    let mut report = String::from("frame,abs_rel_init,abs_rel_final,loss_init,loss_final\n");
    let clamp = [o.d_min, o.d_max];
    for (t, r) in results.iter().enumerate() {
        write_atomic(
            &out.join("depth").join(format!("{}.depth", frame_name(t))),
            &tightsfm_core::io::encode_depth(&r.depth)?,
        )?;
        if cfg.traces {
            write_text(
                &out.join("traces").join(format!("frame_{}.csv", frame_name(t))),
                &r.trace_csv(),
            )?;
        }
        let before = depth_error(&init[t], &gt[t], false, clamp)?.abs_rel;
        let after = depth_error(&r.depth, &gt[t], false, clamp)?.abs_rel;
        let loss0 = r.epochs.first().map_or(r.final_report.total, |e| e.report.total);
        let _ = writeln!(report, "{t},{before},{after},{loss0},{}", r.final_report.total);
    }
    let rels: Vec<Pose> = results[1..].iter().map(|r| r.poses[0]).collect();
    let traj = Trajectory::from_relative(start_pose(fs.poses.as_ref()), &rels);
    write_text(&out.join("trajectory.txt"), &format_pose_file(traj.poses()))?;
    write_text(&out.join("report.csv"), &report)?;
    Ok(format!("refined {n} depth maps over {} epochs", cfg.pft.epochs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalKind {
    Odom,
    Depth,
}

fn depth_row(name: &str, r: &DepthReport) -> String {
    format!(
        "{name},{},{},{},{},{},{},{}\n",
        r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.delta[0], r.delta[1], r.delta[2]
    )
}

fn depth_pairs(est: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if est.is_file() && gt.is_file() {
        let name = est
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![(name, est.to_path_buf(), gt.to_path_buf())]);
    }
    if !(est.is_dir() && gt.is_dir()) {
        bail!("depth evaluation takes two files or two directories");
    }
    let mut names: Vec<String> = fs::read_dir(est)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|n| n.ends_with(".depth"));
    names.sort();
    if names.is_empty() {
        bail!("no .depth files in {}", est.display());
    }
    names
        .into_iter()
        .map(|n| {
            let g = gt.join(&n);
            if !g.is_file() {
                bail!("{} has no ground-truth counterpart", n);
            }
            Ok((n.trim_end_matches(".depth").to_string(), est.join(&n), g))
        })
        .collect()
}

/// Returns the report text; it is also written to `out/report.csv` when an
/// output directory is given.
pub fn eval(cfg: &RunConfig, kind: EvalKind, est: &Path, gt: &Path, out: Option<&Path>) -> Result<String> {
    let report = match kind {
        EvalKind::Odom => {
            let (mut e, g) = (read_trajectory(est)?, read_trajectory(gt)?);
            if cfg.eval.align {
                e = align_scale(&e, &g)?.0;
            }
            let r = odometry_error(&e, &g, &cfg.eval.lengths)?;
            let mut s = format!(
                "length,t_err,r_err,segments\nall,{},{},{}\n",
                r.t_err, r.r_err, r.segments
            );
            for l in &r.per_length {
                let _ = writeln!(s, "{},{},{},{}", l.length, l.t_err, l.r_err, l.segments);
            }
            if r.empty {
                eprintln!("warning: the ground truth is shorter than every evaluation length");
            }
            s
        }
        EvalKind::Depth => {
            let mut s = String::from("frame,abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3\n");
            let pairs = depth_pairs(est, gt)?;
            let mut all = Vec::with_capacity(pairs.len());
            for (name, e, g) in &pairs {
                let r = depth_error(&read_depth(e)?, &read_depth(g)?, cfg.eval.median_scale, cfg.eval.clamp)?;
                s.push_str(&depth_row(name, &r));
                all.push(r);
            }
            if all.len() > 1 {
                let n = all.len() as f64;
                let mean = |f: &dyn Fn(&DepthReport) -> f64| all.iter().map(f).sum::<f64>() / n;
                let m = DepthReport {
                    abs_rel: mean(&|r| r.abs_rel),
                    sq_rel: mean(&|r| r.sq_rel),
                    rmse: mean(&|r| r.rmse),
                    rmse_log: mean(&|r| r.rmse_log),
                    delta: [mean(&|r| r.delta[0]), mean(&|r| r.delta[1]), mean(&|r| r.delta[2])],
                    pixels: all.iter().map(|r| r.pixels).sum(),
                };
                s.push_str(&depth_row("mean", &m));
            }
            s
        }
    };
    if let Some(out) = out {
        write_text(&out.join("config.resolved"), &cfg.resolved())?;
        write_text(&out.join("report.csv"), &report)?;
    }
    Ok(report)
}

pub fn experiment(cfg: &RunConfig, kind: ExperimentKind, frames_dir: Option<&Path>, out: &Path) -> Result<String> {
    let x = &cfg.experiment;
    let data = match frames_dir {
        Some(dir) => {
            let fs = read_frames(dir)?;
            let depths = fs.depths()?.to_vec();
            let gt = fs
                .poses
                .clone()
                .context("experiments need poses.txt in the frame directory")?;
            SequenceData::new(fs.images, depths, gt, fs.intrinsics)?
        }
        None => {
            let spec = scene(cfg, None)?;
            SequenceData::render(&spec, &circular_trajectory(cfg.synth.radius, cfg.synth.step, x.frames))?
        }
    };
    let data = if x.noise > 0.0 {
        data.with_noise(x.noise, cfg.seed)
    } else {
        data
    };
    let table = run_experiment(kind, &x.cfg, &data)?;
    write_text(&out.join("config.resolved"), &cfg.resolved())?;
    write_text(&out.join("report.csv"), &table.to_csv())?;
    Ok(format!(
        "{}: {} rows written to {}",
        kind.name(),
        table.rows.len(),
        out.join("report.csv").display()
    ))
}
