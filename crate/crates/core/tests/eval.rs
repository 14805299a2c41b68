use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tightsfm_core::eval::{
    align_scale, curve_grid, depth_error, loss_curve_1d, odometry_error, run_experiment, CurveAxis, ExperimentConfig,
    ExperimentKind, SequenceData, Trajectory,
};
use tightsfm_core::geom::Tangent;
use tightsfm_core::loss::{Sample, SourceView};
use tightsfm_core::synth::{circular_trajectory, default_sequence};
use tightsfm_core::{DepthMap, LossWeights, Pose};

fn sequence(frames: usize) -> SequenceData {
    let (spec, _) = default_sequence();
    SequenceData::render(&spec, &circular_trajectory(5.0, 0.3, frames)).unwrap()
}

fn pair_sample(data: &SequenceData, i: usize) -> Sample<'_> {
    Sample {
        target: &data.images[i + 1],
        target_depth: &data.depths[i + 1],
        sources: vec![SourceView {
            image: &data.images[i],
            depth: None,
            pose: data.gt.relative(i),
        }],
        intrinsics: &data.intrinsics,
        prior: None,
    }
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|a, b| v[*a].total_cmp(&v[*b])).unwrap()
}

#[test]
fn loss_curve_minimum_sits_at_ground_truth() {
    let data = sequence(12);
    let w = LossWeights::default();
    for i in [0, 5, 10] {
        let gt = data.gt.relative(i);
        let s = pair_sample(&data, i);
        for (axis, n, truth) in [
            (CurveAxis::ForwardTranslation, 201, gt.translation.z),
            (CurveAxis::Yaw, 101, 0.0),
        ] {
            let (p, l) = loss_curve_1d(&s, &gt, axis, n, &w).unwrap();
            let cell = p[1] - p[0];
            let m = argmin(&l);
            assert!(
                (p[m] - truth).abs() <= cell * (1.0 + 1e-9),
                "pair {i} {axis:?}: minimum at {} vs {truth}",
                p[m]
            );
            if i == 10 {
                // The grid centre is the ground-truth value itself.
                assert_eq!(m, n / 2);
            }
        }
    }
}

#[test]
fn endpoint_grid_orders_like_the_full_grid() {
    let data = sequence(4);
    let s = pair_sample(&data, 1);
    let gt = data.gt.relative(1);
    for axis in [CurveAxis::ForwardTranslation, CurveAxis::Yaw] {
        let (p2, l2) = loss_curve_1d(&s, &gt, axis, 2, &LossWeights::default()).unwrap();
        let (p, l) = loss_curve_1d(&s, &gt, axis, 21, &LossWeights::default()).unwrap();
        assert_eq!((p2[0], p2[1]), (p[0], p[20]));
        assert_eq!((l2[0], l2[1]), (l[0], l[20]));
    }
}

#[test]
fn finer_grids_bracket_the_coarse_minimum() {
    let data = sequence(4);
    let s = pair_sample(&data, 2);
    let gt = data.gt.relative(2);
    let w = LossWeights::default();
    let (pc, lc) = loss_curve_1d(&s, &gt, CurveAxis::ForwardTranslation, 11, &w).unwrap();
    let mc = argmin(&lc);
    let (pf, lf) = loss_curve_1d(&s, &gt, CurveAxis::ForwardTranslation, 101, &w).unwrap();
    let mf = argmin(&lf);
    let cell = pc[1] - pc[0];
    assert!((pf[mf] - pc[mc]).abs() <= cell * (1.0 + 1e-9));
    assert!(lf[mf] <= lc[mc]);
    // Every coarse point is also a fine point.
    for (j, v) in pc.iter().enumerate() {
        assert!((pf[10 * j] - v).abs() < 1e-12);
    }
}

#[test]
fn loss_curves_need_forward_motion_and_two_points() {
    let data = sequence(3);
    let s = pair_sample(&data, 0);
    assert!(loss_curve_1d(
        &s,
        &Pose::identity(),
        CurveAxis::ForwardTranslation,
        10,
        &LossWeights::default()
    )
    .is_err());
    assert!(loss_curve_1d(&s, &data.gt.relative(0), CurveAxis::Yaw, 1, &LossWeights::default()).is_err());
    assert_eq!(
        curve_grid(&data.gt.relative(0), CurveAxis::Yaw, 100).unwrap().len(),
        100
    );
}

#[test]
fn experiment_tables_are_bit_reproducible() {
    let data = sequence(6).with_noise(0.01, 4);
    let cfg = ExperimentConfig {
        iterations: vec![1, 2],
        translation_ranges: vec![0.0, 0.25],
        yaw_ranges_deg: vec![1.0],
        depth_scales: vec![0.9, 1.0],
        strides: vec![1, 2],
        curve_points: Some(7),
        lengths: vec![0.5, 1.0],
        seed: 3,
        ..Default::default()
    };
    for kind in ExperimentKind::ALL {
        let a = run_experiment(kind, &cfg, &data).unwrap().to_csv();
        let b = run_experiment(kind, &cfg, &data).unwrap().to_csv();
        assert_eq!(a, b, "{}", kind.name());
    }
}

#[test]
fn depth_scale_sweep_tracks_the_scale() {
    let data = sequence(5);
    let cfg = ExperimentConfig {
        iterations: vec![4],
        depth_scales: vec![0.7, 1.0, 1.3],
        lengths: vec![0.5],
        ..Default::default()
    };
    let t = run_experiment(ExperimentKind::DepthScaleSweep, &cfg, &data).unwrap();
    for (s, r) in t.values("scale").unwrap().iter().zip(t.values("norm_ratio").unwrap()) {
        assert!((r - s).abs() <= 0.05 * s, "scale {s}: ratio {r}");
    }
}

fn drifty_pair(n: usize, seed: u64) -> (Trajectory, Trajectory) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = vec![Pose::identity()];
    let mut est = vec![Pose::identity()];
    for _ in 1..n {
        let step = Tangent::new(
            Vector3::new(rng.random_range(-0.05..0.05), 0.0, rng.random_range(0.1..0.5)),
            Vector3::new(0.0, rng.random_range(-0.05..0.05), 0.0),
        )
        .exp()
        .unwrap();
        let drift = Tangent::from_array(std::array::from_fn(|_| rng.random_range(-0.01..0.01)))
            .exp()
            .unwrap();
        gt.push(gt.last().unwrap().compose(&step));
        est.push(est.last().unwrap().compose(&drift.compose(&step)));
    }
    (Trajectory::new(est), Trajectory::new(gt))
}

/// Every (first, length) pair scanned from scratch.
fn brute_force(est: &Trajectory, gt: &Trajectory, lengths: &[f64]) -> (f64, f64, usize) {
    let p = gt.poses();
    let dist = |j: usize| (1..=j).fold(0.0, |d, m| d + (p[m].translation - p[m - 1].translation).norm());
    let (mut t, mut r, mut n) = (0.0, 0.0, 0);
    for first in 0..p.len() {
        for &len in lengths {
            if let Some(last) = (first..p.len()).find(|&j| dist(j) >= dist(first) + len) {
                let e = est.poses()[first]
                    .inverse()
                    .compose(&est.poses()[last])
                    .inverse()
                    .compose(&p[first].inverse().compose(&p[last]));
                t += e.translation.norm() / len;
                r += e.rotation_angle() / len;
                n += 1;
            }
        }
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    (t / n as f64 * 100.0, (r / n as f64).to_degrees() * 100.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn odometry_matches_brute_force(n in 2usize..80, seed in 0u64..1000) {
        let (est, gt) = drifty_pair(n, seed);
        let lengths = [1.0, 2.0, 4.0, 8.0];
        let rep = odometry_error(&est, &gt, &lengths).unwrap();
        let (t, r, count) = brute_force(&est, &gt, &lengths);
        prop_assert_eq!(rep.segments, count);
        prop_assert_eq!(rep.empty, count == 0);
        prop_assert_eq!(rep.t_err, t);
        prop_assert_eq!(rep.r_err, r);
    }

    #[test]
    fn median_scaling_ignores_global_rescale(seed in 0u64..1000, s in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = DepthMap::from_fn(16, 12, |_, _| rng.random_range(0.5..20.0)).unwrap();
        let pred = DepthMap::from_fn(16, 12, |_, _| rng.random_range(0.5..20.0)).unwrap();
        let a = depth_error(&pred, &gt, true, [1e-3, 1e4]).unwrap();
        let b = depth_error(&pred.scaled(s).unwrap(), &gt, true, [1e-3, 1e4]).unwrap();
        prop_assert!((a.abs_rel - b.abs_rel).abs() <= 1e-12);
        prop_assert!((a.rmse - b.rmse).abs() <= 1e-12 * a.rmse.max(1.0));
        prop_assert!((a.rmse_log - b.rmse_log).abs() <= 1e-12);
        prop_assert!(a.delta[0] <= a.delta[1] && a.delta[1] <= a.delta[2] && a.delta[2] <= 1.0);
    }

    #[test]
    fn alignment_is_the_least_squares_scale(seed in 0u64..1000) {
        let (est, gt) = drifty_pair(30, seed);
        let (aligned, s) = align_scale(&est, &gt).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..29 {
            let (e, g) = (est.relative(i).translation, gt.relative(i).translation);
            num += e.dot(&g);
            den += e.dot(&e);
        }
        prop_assert!((s - num / den).abs() <= 1e-12 * s.abs());
        for i in 0..29 {
            let want = est.relative(i).translation.norm() * s.abs();
            prop_assert!((aligned.relative(i).translation.norm() - want).abs() <= 1e-9);
        }
    }
}
