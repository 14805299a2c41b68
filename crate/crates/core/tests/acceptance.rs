#![allow(clippy::needless_range_loop)]

//! Acceptance suite: one line per criterion.
//!
//! Exits non-zero on failure only when `TIGHTSFM_STRICT` is set, so the
//! workspace test run reports the lines without aborting.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tightsfm_core::egomotion::{iterative_egomotion, EstimatorConfig};
use tightsfm_core::eval::{
    depth_error, odometry_error, run_experiment, ExperimentConfig, ExperimentKind, ResultTable, SequenceData,
    Trajectory, DEFAULT_LENGTHS,
};
use tightsfm_core::geom::{exp_map, log_map, Tangent};
use tightsfm_core::loss::{evaluate, Branches, DepthPrior, Sample, SourceView};
use tightsfm_core::optim::{
    fit_ground_plane, scale_from_ground_plane, tightly_coupled_optimize, DepthParams, PftConfig, PftSample, PftSource,
};
use tightsfm_core::synth::{corrupt_depth, default_sequence, render, RenderedFrame, SceneSpec};
use tightsfm_core::{DepthMap, Intrinsics, LossWeights, MaskConfig, Pose};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn default_frames() -> (SceneSpec, Trajectory, Vec<RenderedFrame>) {
    let (spec, traj) = default_sequence();
    let frames = traj
        .poses()
        .iter()
        .map(|p| render(&spec, &p.inverse(), &spec.intrinsics).unwrap())
        .collect();
    (spec, traj, frames)
}

fn max_abs(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).abs().max()
}

fn pose_gap(a: &Pose, b: &Pose) -> f64 {
    max_abs(&a.rotation, &b.rotation).max((a.translation - b.translation).abs().max())
}

fn random_tangent(rng: &mut ChaCha8Rng) -> Tangent {
    let rho = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
    let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0f64)).normalize();
    let angle = rng.random_range(0.0..3.0);
    Tangent::new(rho, axis * angle)
}

fn lie_group() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut round, mut axioms) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let xi = random_tangent(&mut rng);
        let a = exp_map(&xi).unwrap();
        round = round.max((log_map(&a).unwrap().0 - xi.0).norm());
        round = round.max(pose_gap(&exp_map(&log_map(&a).unwrap()).unwrap(), &a));
        let b = exp_map(&random_tangent(&mut rng)).unwrap();
        let c = exp_map(&random_tangent(&mut rng)).unwrap();
        axioms = axioms
            .max(pose_gap(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))))
            .max(pose_gap(&a.compose(&a.inverse()), &Pose::identity()))
            .max(pose_gap(&a.inverse().compose(&a), &Pose::identity()))
            .max(pose_gap(&Pose::identity().compose(&a), &a))
            .max(max_abs(&(a.rotation.transpose() * a.rotation), &Matrix3::identity()))
            .max((a.rotation.determinant() - 1.0).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        round < 1e-8 && axioms < 1e-9 && secs < 1.0,
        format!("round trip {round:.1e} (< 1e-8), axioms {axioms:.1e} (< 1e-9), {secs:.3} s (< 1 s)"),
    )
}

fn central_difference(
    sample: &Sample,
    w: &LossWeights,
    cfg: &MaskConfig,
    bi: bool,
    br: &Branches,
    h: f64,
    apply: &dyn Fn(&mut Sample, f64, &mut Vec<DepthMap>),
) -> f64 {
    let at = |d: f64| {
        let mut store = Vec::new();
        let mut s = sample.clone();
        apply(&mut s, d, &mut store);
        if let Some(dm) = store.first() {
            s.target_depth = dm;
            evaluate(&s, w, cfg, bi, Some(br), false).unwrap().report.total
        } else {
            evaluate(&s, w, cfg, bi, Some(br), false).unwrap().report.total
        }
    };
    // Five-point stencil: truncation error O(h^4).
    (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
}

fn gradient_oracle(frames: &[RenderedFrame], k: &Intrinsics) -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for cfg_idx in 0..50 {
        let t = rng.random_range(2..frames.len() - 2);
        let n_src = rng.random_range(1..=2usize);
        let offsets: Vec<isize> = [-1, 1, -2, 2][..n_src].to_vec();
        let bi = rng.random_bool(0.5);
        let masks = MaskConfig {
            use_automask: rng.random_bool(0.5),
            use_min_reprojection: rng.random_bool(0.5),
            use_self_discovered: rng.random_bool(0.5),
        };
        let depth = corrupt_depth(&frames[t].depth, 0.1, cfg_idx).unwrap();
        let src_depths: Vec<DepthMap> = offsets
            .iter()
            .map(|o| corrupt_depth(&frames[(t as isize + o) as usize].depth, 0.1, 100 + cfg_idx).unwrap())
            .collect();
        let poses: Vec<Pose> = offsets
            .iter()
            .map(|o| {
                let s = (t as isize + o) as usize;
                let gt = frames[s].pose.compose(&frames[t].pose.inverse());
                let jitter = Tangent(Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01)));
                jitter.exp().unwrap().compose(&gt)
            })
            .collect();
        let sample = Sample {
            target: &frames[t].image,
            target_depth: &depth,
            sources: offsets
                .iter()
                .zip(&poses)
                .zip(&src_depths)
                .map(|((o, p), d)| SourceView {
                    image: &frames[(t as isize + o) as usize].image,
                    depth: Some(d),
                    pose: *p,
                })
                .collect(),
            intrinsics: k,
            prior: Some(DepthPrior {
                init: &frames[t].depth,
                d_max: 50.0,
            }),
        };
        let w = LossWeights::default();
        let ev = evaluate(&sample, &w, &masks, bi, None, true).unwrap();
        let g = ev.gradients.unwrap();
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-10);
        for j in 0..n_src {
            for a in 0..6 {
                let fd = central_difference(&sample, &w, &masks, bi, &ev.branches, 1e-4, &|s, d, _| {
                    let mut xi = Tangent::zero();
                    xi.0[a] = d;
                    s.sources[j].pose = xi.exp().unwrap().compose(&s.sources[j].pose);
                });
                worst = worst.max(rel(fd, g.poses[j][a]));
                checked += 1;
            }
        }
        for _ in 0..6 {
            let i = rng.random_range(0..k.num_pixels());
            let fd = central_difference(&sample, &w, &masks, bi, &ev.branches, 1e-3, &|s, d, store| {
                let mut v = s.target_depth.data().to_vec();
                v[i] += d;
                store.push(DepthMap::new(k.width, k.height, v).unwrap());
            });
            worst = worst.max(rel(fd, g.target_depth[i]));
            checked += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 30.0,
        format!("{checked} components, worst relative error {worst:.1e} (< 1e-4), {secs:.1} s (< 30 s)"),
    )
}

fn warp_cross_validation(spec: &SceneSpec, traj: &Trajectory) -> Outcome {
    let k = spec.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let b = traj.poses()[rng.random_range(0..traj.len())];
        let motion = Tangent::new(
            Vector3::from_fn(|_, _| rng.random_range(-0.15..0.15)),
            Vector3::from_fn(|_, _| rng.random_range(-2.0f64..2.0).to_radians()),
        );
        let a = b.compose(&motion.exp().unwrap());
        let fa = render(spec, &a.inverse(), &k).unwrap();
        let fb = render(spec, &b.inverse(), &k).unwrap();
        let t_ba = a.inverse().compose(&b);
        let w = tightsfm_core::synthesize_view(&fa.image, &fb.depth, &t_ba, &k, Some(&fa.depth)).unwrap();
        let wd = w.warped_depth.as_ref().unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..k.num_pixels() {
            // Co-visible: the source surface seen at the warped location is the same point.
            if w.valid[i] && (wd[i] - w.transformed_z[i]).abs() < 0.01 * w.transformed_z[i] {
                for c in 0..fb.image.channels() {
                    sum += (w.image.plane(c)[i] - fb.image.plane(c)[i]).abs();
                    n += 1;
                }
            }
        }
        worst = worst.max(sum / n as f64);
    }
    outcome(
        worst < 1e-3,
        format!("worst mean abs error {worst:.2e} over 20 pairs (< 1e-3)"),
    )
}

fn feedback_convergence(traj: &Trajectory, frames: &[RenderedFrame], k: &Intrinsics) -> Outcome {
    let cfg = EstimatorConfig::default();
    let (mut passed, mut worst_t, mut worst_r, mut monotone) = (0, 0.0f64, 0.0f64, true);
    for i in 0..frames.len() - 1 {
        let (p, trace) = iterative_egomotion(
            &frames[i].image,
            &frames[i + 1].image,
            &frames[i + 1].depth,
            k,
            &Pose::identity(),
            4,
            &cfg,
        )
        .unwrap();
        let gt = traj.relative(i);
        let t = (p.translation.norm() / gt.translation.norm() - 1.0).abs();
        let r = p.rotation.transpose() * gt.rotation;
        let r = Pose {
            rotation: r,
            translation: Vector3::zeros(),
        }
        .rotation_angle()
        .to_degrees();
        let mono =
            trace.records[0].loss <= trace.initial_loss && trace.records.windows(2).all(|w| w[1].loss <= w[0].loss);
        monotone &= mono;
        worst_t = worst_t.max(t);
        worst_r = worst_r.max(r);
        if t < 0.01 && r < 0.05 && mono {
            passed += 1;
        }
    }
    let n = frames.len() - 1;
    outcome(
        passed == n,
        format!("{passed}/{n} pairs; worst |t| error {:.3}% (< 1%), rotation {worst_r:.4} deg (< 0.05), loss non-increasing: {monotone}", worst_t * 100.0),
    )
}

fn row_value(t: &ResultTable, row: usize, col: &str) -> f64 {
    t.rows[row][t.column(col).unwrap()].parse().unwrap()
}

fn perturbation_recovery(data: &SequenceData) -> Outcome {
    let cfg = ExperimentConfig {
        translation_ranges: vec![0.0, 0.1, 0.25, 0.5],
        yaw_ranges_deg: vec![0.1, 0.25, 0.5, 1.0, 3.0],
        extra_iterations: 2,
        seed: 5,
        ..Default::default()
    };
    let table = run_experiment(ExperimentKind::PerturbationSweep, &cfg, data).unwrap();
    let it = table.column("iterations").unwrap();
    let final_rows: Vec<usize> = (0..table.rows.len()).filter(|&r| table.rows[r][it] == "3").collect();
    let baseline = row_value(&table, final_rows[0], "pair_t_err");
    let mut failing = Vec::new();
    let mut worst = 0.0f64;
    for &r in &final_rows[1..] {
        let ratio = row_value(&table, r, "pair_t_err") / baseline;
        worst = worst.max(ratio);
        if ratio > 1.1 {
            failing.push(format!("{} {} -> {ratio:.2}x", table.rows[r][0], table.rows[r][1]));
        }
    }
    outcome(
        failing.is_empty(),
        format!(
            "unperturbed pair error {baseline:.2e}; worst ratio {worst:.2}x (<= 1.10x){}",
            if failing.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failing.join(", "))
            }
        ),
    )
}

fn depth_scale(data: &SequenceData) -> Outcome {
    let cfg = ExperimentConfig {
        iterations: vec![4],
        ..Default::default()
    };
    let table = run_experiment(ExperimentKind::DepthScaleSweep, &cfg, data).unwrap();
    let scales = table.values("scale").unwrap();
    let ratios = table.values("norm_ratio").unwrap();
    let worst = scales
        .iter()
        .zip(&ratios)
        .map(|(s, r)| (r - s).abs() / s)
        .fold(0.0, f64::max);
    let listing: Vec<String> = scales.iter().zip(&ratios).map(|(s, r)| format!("{s}:{r:.3}")).collect();
    outcome(
        worst <= 0.05,
        format!(
            "worst |ratio - s|/s {:.2}% (<= 5%); {}",
            worst * 100.0,
            listing.join(" ")
        ),
    )
}

fn coupled_optimization(spec: &SceneSpec, traj: &Trajectory) -> Outcome {
    let spec = SceneSpec {
        base_frequency: 1.5,
        ..spec.clone()
    };
    let k = spec.intrinsics;
    let ecfg = EstimatorConfig::default();
    let clamp = [0.5, 50.0];
    let (mut e0, mut e_c, mut e_d, mut l0, mut l1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut per = Vec::new();
    for t in [3usize, 10, 18, 25, 33, 40] {
        let base = traj.poses()[t];
        let f: Vec<RenderedFrame> = [-0.4f64, 0.0, 0.4]
            .iter()
            .map(|dx| {
                let c = base.compose(&Pose::from_translation(Vector3::new(*dx, 0.0, 0.05 * dx.abs())));
                render(&spec, &c.inverse(), &k).unwrap()
            })
            .collect();
        let gt = &f[1].depth;
        let noisy = corrupt_depth(gt, 0.3, 7).unwrap();
        let init = DepthParams::from_depth(&noisy, clamp[0], clamp[1]).unwrap();
        let sample = PftSample {
            target: &f[1].image,
            sources: vec![
                PftSource {
                    image: &f[0].image,
                    depth: None,
                },
                PftSource {
                    image: &f[2].image,
                    depth: None,
                },
            ],
        };
        let run = |recompute: bool| {
            let cfg = PftConfig {
                recompute_egomotion_each_epoch: recompute,
                ..Default::default()
            };
            tightly_coupled_optimize(&sample, &init, &k, &LossWeights::default(), &cfg, &ecfg).unwrap()
        };
        let (coupled, decoupled) = (run(true), run(false));
        let err = |d: &DepthMap| depth_error(d, gt, true, clamp).unwrap().abs_rel;
        let (a, b, c) = (err(&noisy), err(&coupled.depth), err(&decoupled.depth));
        e0 += a;
        e_c += b;
        e_d += c;
        l0 += coupled.epochs[0].report.total;
        l1 += coupled.final_report.total;
        per.push(format!("{t}:{:.0}/{:.0}", 100.0 * (1.0 - b / a), 100.0 * (1.0 - c / a)));
    }
    let gain = 1.0 - e_c / e0;
    let gain_d = 1.0 - e_d / e0;
    let loss_gain = 1.0 - l1 / l0;
    outcome(
        gain >= 0.5 && loss_gain >= 0.3 && gain_d < gain,
        format!(
            "abs_rel reduction {:.1}% (>= 50%), loss reduction {:.1}% (>= 30%), decoupled {:.1}% (< coupled); per target coupled/decoupled % {}",
            gain * 100.0,
            loss_gain * 100.0,
            gain_d * 100.0,
            per.join(" ")
        ),
    )
}

fn scale_recovery(spec: &SceneSpec, frames: &[RenderedFrame]) -> Outcome {
    let k = spec.intrinsics;
    let h = spec.camera_height;
    let mut worst = 0.0f64;
    for f in frames.iter().step_by(10) {
        let fitted = fit_ground_plane(&f.depth, &k).unwrap().height();
        worst = worst.max((fitted - h).abs() / h);
        for s in [0.5, 1.0, 2.0] {
            let factor = scale_from_ground_plane(&f.depth.scaled(s).unwrap(), &k, h).unwrap();
            // The recovered factor maps the scaled depth back to metric height.
            let recovered = h / (factor * s);
            worst = worst.max((recovered - h).abs() / h);
        }
    }
    outcome(
        worst <= 0.02,
        format!(
            "worst relative height error {:.3}% (<= 2%) over 5 frames x 3 scales",
            worst * 100.0
        ),
    )
}

/// Brute-force sub-sequence enumeration: distances re-summed from the first
/// frame for every candidate, every end frame scanned.
fn odometry_oracle(est: &Trajectory, gt: &Trajectory, lengths: &[f64]) -> (f64, f64, usize) {
    let p = gt.poses();
    let dist_to = |j: usize| {
        let mut d = 0.0;
        for m in 1..=j {
            d += (p[m].translation - p[m - 1].translation).norm();
        }
        d
    };
    let (mut t, mut r, mut n) = (0.0, 0.0, 0usize);
    for first in 0..p.len() {
        for &len in lengths {
            let mut end = None;
            for last in first..p.len() {
                if dist_to(last) >= dist_to(first) + len {
                    end = Some(last);
                    break;
                }
            }
            let Some(last) = end else { continue };
            let dg = p[first].inverse().compose(&p[last]);
            let de = est.poses()[first].inverse().compose(&est.poses()[last]);
            let e = de.inverse().compose(&dg);
            t += e.translation.norm() / len;
            r += e.rotation_angle() / len;
            n += 1;
        }
    }
    (t / n as f64 * 100.0, (r / n as f64).to_degrees() * 100.0, n)
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut exact = true;
    let mut segs = 0;
    for _ in 0..3 {
        let mut gt = vec![Pose::identity()];
        let mut est = vec![Pose::identity()];
        for _ in 1..200 {
            let step = Tangent::new(
                Vector3::new(
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.02..0.02),
                    rng.random_range(0.2..0.4),
                ),
                Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02)),
            )
            .exp()
            .unwrap();
            let noise = Tangent(Vector6::from_fn(|_, _| rng.random_range(-0.005..0.005)))
                .exp()
                .unwrap();
            gt.push(gt.last().unwrap().compose(&step));
            est.push(est.last().unwrap().compose(&noise.compose(&step)));
        }
        let (gt, est) = (Trajectory::new(gt), Trajectory::new(est));
        let rep = odometry_error(&est, &gt, &DEFAULT_LENGTHS).unwrap();
        let (t, r, n) = odometry_oracle(&est, &gt, &DEFAULT_LENGTHS);
        exact &= rep.t_err == t && rep.r_err == r && rep.segments == n;
        segs += n;
    }
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = DepthMap::from_fn(96, 64, |_, _| rng.random_range(1.0..30.0)).unwrap();
        let pred = DepthMap::from_fn(96, 64, |_, _| rng.random_range(1.0..30.0)).unwrap();
        let base = depth_error(&pred, &gt, true, [1e-3, 1e3]).unwrap();
        let s = 10f64.powf(rng.random_range(-1.0..1.0));
        let other = depth_error(&pred.scaled(s).unwrap(), &gt, true, [1e-3, 1e3]).unwrap();
        for (a, b) in [
            (base.abs_rel, other.abs_rel),
            (base.sq_rel, other.sq_rel),
            (base.rmse, other.rmse),
            (base.rmse_log, other.rmse_log),
            (base.delta[0], other.delta[0]),
            (base.delta[1], other.delta[1]),
            (base.delta[2], other.delta[2]),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        exact && worst <= 1e-12,
        format!("odometry oracle exact on 3x200 frames ({segs} sub-sequences): {exact}; median-scaling invariance {worst:.1e} (<= 1e-12)"),
    )
}

fn limited_estimator() -> EstimatorConfig {
    EstimatorConfig {
        max_inner_steps: 1,
        ..Default::default()
    }
}

fn iteration_trend(data: &SequenceData) -> Outcome {
    let noisy = data.with_noise(0.01, 11);
    let cfg = ExperimentConfig {
        iterations: vec![1, 2, 4],
        strides: vec![1],
        estimator: EstimatorConfig {
            blur_sigma: 1.5,
            ..limited_estimator()
        },
        ..Default::default()
    };
    let t = run_experiment(ExperimentKind::FrameSkipSweep, &cfg, &noisy)
        .unwrap()
        .values("t_err")
        .unwrap();
    outcome(
        t[2] < t[1] && t[1] < t[0],
        format!(
            "t_err 1/2/4 iterations: {:.3}% / {:.3}% / {:.3}% (strictly decreasing)",
            t[0], t[1], t[2]
        ),
    )
}

fn frame_skip(data: &SequenceData) -> Outcome {
    let cfg = ExperimentConfig {
        strides: vec![2, 3],
        estimator: limited_estimator(),
        ..Default::default()
    };
    let table = run_experiment(ExperimentKind::FrameSkipSweep, &cfg, data).unwrap();
    let t = table.values("t_err").unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (s, chunk) in [2, 3].iter().zip(t.chunks(4)) {
        pass &= chunk.windows(2).all(|w| w[1] < w[0]);
        parts.push(format!(
            "stride {s}: {}",
            chunk.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" > ")
        ));
    }
    outcome(pass, format!("t_err % over 1..4 iterations, {}", parts.join("; ")))
}

fn main() {
    let start = Instant::now();
    let (spec, traj, frames) = default_frames();
    let k = spec.intrinsics;
    let data = SequenceData::new(
        frames.iter().map(|f| f.image.clone()).collect(),
        frames.iter().map(|f| f.depth.clone()).collect(),
        traj.clone(),
        k,
    )
    .unwrap();
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("lie group suite", Box::new(lie_group)),
        ("gradient oracle", Box::new(|| gradient_oracle(&frames, &k))),
        (
            "warp/render cross-validation",
            Box::new(|| warp_cross_validation(&spec, &traj)),
        ),
        (
            "feedback convergence",
            Box::new(|| feedback_convergence(&traj, &frames, &k)),
        ),
        ("pose-perturbation recovery", Box::new(|| perturbation_recovery(&data))),
        ("depth-scale proportionality", Box::new(|| depth_scale(&data))),
        (
            "tightly-coupled optimization",
            Box::new(|| coupled_optimization(&spec, &traj)),
        ),
        ("scale recovery", Box::new(|| scale_recovery(&spec, &frames))),
        ("metrics oracle", Box::new(metrics_oracle)),
        ("iteration-count trend", Box::new(|| iteration_trend(&data))),
        ("frame-skip generalization", Box::new(|| frame_skip(&data))),
    ];
    let mut passed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = run();
        passed += o.pass as usize;
        println!(
            "[{}] {:>2}. {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!(
        "{passed}/{} criteria passed in {:.1} s",
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if passed < criteria.len() && std::env::var_os("TIGHTSFM_STRICT").is_some() {
        std::process::exit(1);
    }
}
