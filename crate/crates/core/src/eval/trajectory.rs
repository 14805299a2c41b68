use crate::error::{invalid, Error, Result};
use crate::geom::{format_pose_file, parse_pose_file, Pose};

/// Absolute camera-to-world poses with cumulative path length.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    path_length: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        let mut path_length = Vec::with_capacity(poses.len());
        let mut acc = 0.0;
        for (i, p) in poses.iter().enumerate() {
            if i > 0 {
                acc += (p.translation - poses[i - 1].translation).norm();
            }
            path_length.push(acc);
        }
        Trajectory { poses, path_length }
    }

    /// Chains relative motions `C_i⁻¹·C_{i+1}` from `start`.
    pub fn from_relative(start: Pose, relatives: &[Pose]) -> Self {
        let mut poses = Vec::with_capacity(relatives.len() + 1);
        poses.push(start);
        for r in relatives {
            let last = *poses.last().unwrap();
            poses.push(last.compose(r));
        }
        Trajectory::new(poses)
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn path_lengths(&self) -> &[f64] {
        &self.path_length
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.path_length.last().copied().unwrap_or(0.0)
    }

    /// Motion from frame `i` to `i + 1` in frame `i`'s coordinates. Equals the
    /// target-to-source transform when `i + 1` is the target.
    pub fn relative(&self, i: usize) -> Pose {
        self.poses[i].inverse().compose(&self.poses[i + 1])
    }

    pub fn relatives(&self) -> Vec<Pose> {
        (0..self.len().saturating_sub(1)).map(|i| self.relative(i)).collect()
    }

    /// Every `stride`-th pose.
    pub fn subsample(&self, stride: usize) -> Result<Trajectory> {
        if stride == 0 {
            return Err(invalid("stride must be at least 1"));
        }
        Ok(Trajectory::new(self.poses.iter().step_by(stride).copied().collect()))
    }

    pub fn parse(text: &str) -> Result<Trajectory> {
        Ok(Trajectory::new(parse_pose_file(text)?))
    }

    pub fn to_kitti(&self) -> String {
        format_pose_file(&self.poses)
    }
}

/// Multiplies each inter-frame translation by its factor; rotations are kept as is.
pub fn rescale_trajectory(traj: &Trajectory, factors: &[f64]) -> Result<Trajectory> {
    if factors.len() != traj.len().saturating_sub(1) {
        return Err(invalid(format!(
            "{} scale factors for {} inter-frame motions",
            factors.len(),
            traj.len().saturating_sub(1)
        )));
    }
    if factors.iter().all(|f| *f == 1.0) {
        return Ok(traj.clone());
    }
    let src = traj.poses();
    let mut poses = Vec::with_capacity(src.len());
    if let Some(first) = src.first() {
        poses.push(*first);
    }
    for (i, s) in factors.iter().enumerate() {
        // Scaling the translation of C_i⁻¹·C_{i+1} scales the world-frame step.
        let step = (src[i + 1].translation - src[i].translation) * *s;
        let t = poses[i].translation + step;
        poses.push(Pose {
            rotation: src[i + 1].rotation,
            translation: t,
        });
    }
    Ok(Trajectory::new(poses))
}

/// Least-squares scale on inter-frame translations, applied to `est`.
pub fn align_scale(est: &Trajectory, gt: &Trajectory) -> Result<(Trajectory, f64)> {
    if est.len() != gt.len() {
        return Err(invalid("trajectories differ in length"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..est.len().saturating_sub(1) {
        let te = est.relative(i).translation;
        let tg = gt.relative(i).translation;
        num += te.dot(&tg);
        den += te.norm_squared();
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateScale("estimated trajectory has no translation".into()));
    }
    let s = num / den;
    let factors = vec![s; est.len() - 1];
    Ok((rescale_trajectory(est, &factors)?, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Tangent;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    fn random_traj(n: usize, seed: u64) -> Trajectory {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rels: Vec<Pose> = (0..n - 1)
            .map(|_| {
                Tangent::from_array([
                    r.random_range(-0.1..0.1),
                    r.random_range(-0.05..0.05),
                    r.random_range(0.2..0.4),
                    r.random_range(-0.01..0.01),
                    r.random_range(-0.05..0.05),
                    r.random_range(-0.01..0.01),
                ])
                .exp()
                .unwrap()
            })
            .collect();
        Trajectory::from_relative(Pose::identity(), &rels)
    }

    #[test]
    fn path_length_accumulates() {
        let t = Trajectory::new(
            (0..5)
                .map(|i| Pose::from_translation(Vector3::new(0.0, 0.0, 0.5 * i as f64)))
                .collect(),
        );
        assert_eq!(t.path_lengths(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let r = random_traj(30, 1);
        assert!(r.path_lengths().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn relatives_rechain() {
        let t = random_traj(20, 2);
        let back = Trajectory::from_relative(t.poses()[0], &t.relatives());
        for (a, b) in t.poses().iter().zip(back.poses()) {
            assert!((a.translation - b.translation).norm() < 1e-12);
            assert!((a.rotation - b.rotation).norm() < 1e-12);
        }
    }

    #[test]
    fn rescale_cases() {
        let t = random_traj(15, 3);
        assert_eq!(rescale_trajectory(&t, &[1.0; 14]).unwrap(), t);
        let d = rescale_trajectory(&t, &[2.0; 14]).unwrap();
        for i in 0..14 {
            assert_eq!(d.poses()[i + 1].rotation, t.poses()[i + 1].rotation);
            let (a, b) = (d.relative(i).translation.norm(), t.relative(i).translation.norm());
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        assert!(rescale_trajectory(&t, &[1.0; 3]).is_err());

        // Mixed factors against scaling each relative motion and re-chaining.
        let f: Vec<f64> = (0..14).map(|i| 0.5 + 0.1 * i as f64).collect();
        let got = rescale_trajectory(&t, &f).unwrap();
        let rels: Vec<Pose> = t
            .relatives()
            .iter()
            .zip(&f)
            .map(|(r, s)| Pose {
                rotation: r.rotation,
                translation: r.translation * *s,
            })
            .collect();
        let oracle = Trajectory::from_relative(t.poses()[0], &rels);
        for (a, b) in got.poses().iter().zip(oracle.poses()) {
            assert!((a.translation - b.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn align_cases() {
        let gt = random_traj(25, 4);
        let (_, s) = align_scale(&gt, &gt).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let half = rescale_trajectory(&gt, &[0.5; 24]).unwrap();
        let (aligned, s) = align_scale(&half, &gt).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!((aligned.poses()[24].translation - gt.poses()[24].translation).norm() < 1e-10);

        let noisy = random_traj(25, 5);
        let (_, s) = align_scale(&noisy, &gt).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..24 {
            let (e, g) = (noisy.relative(i).translation, gt.relative(i).translation);
            num += e.x * g.x + e.y * g.y + e.z * g.z;
            den += e.x * e.x + e.y * e.y + e.z * e.z;
        }
        assert!((s - num / den).abs() < 1e-12);

        let still = Trajectory::new(vec![Pose::identity(); 25]);
        assert!(matches!(align_scale(&still, &gt), Err(Error::DegenerateScale(_))));
    }
}
