use super::Trajectory;
use crate::error::{invalid, Result};

/// Default sub-sequence lengths in scene units.
pub const DEFAULT_LENGTHS: [f64; 8] = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0];

#[derive(Clone, Debug, PartialEq)]
pub struct LengthError {
    pub length: f64,
    pub t_err: f64,
    pub r_err: f64,
    pub segments: usize,
}

/// Drift over fixed-length sub-sequences. `t_err` is in percent and `r_err`
/// in degrees per 100 units of path length.
#[derive(Clone, Debug, PartialEq)]
pub struct OdomReport {
    pub t_err: f64,
    pub r_err: f64,
    pub per_length: Vec<LengthError>,
    pub segments: usize,
    /// No sub-sequence of any requested length fits in the ground truth.
    pub empty: bool,
}

/// One evaluated sub-sequence: `(first, last, length, t_err, r_err)` with
/// errors per unit length (translation ratio, radians per unit).
pub type Segment = (usize, usize, f64, f64, f64);

/// All sub-sequences: each start frame, each length; the end frame is the
/// first one whose ground-truth path length reaches `start + length`.
pub fn segments(est: &Trajectory, gt: &Trajectory, lengths: &[f64]) -> Result<Vec<Segment>> {
    if est.len() != gt.len() {
        return Err(invalid("trajectories differ in length"));
    }
    if lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(invalid("sub-sequence lengths must be positive"));
    }
    let dist = gt.path_lengths();
    let mut out = Vec::new();
    for first in 0..gt.len() {
        for &len in lengths {
            let Some(last) = (first..gt.len()).find(|&j| dist[j] >= dist[first] + len) else {
                continue;
            };
            let dg = gt.poses()[first].inverse().compose(&gt.poses()[last]);
            let de = est.poses()[first].inverse().compose(&est.poses()[last]);
            let err = de.inverse().compose(&dg);
            out.push((
                first,
                last,
                len,
                err.translation.norm() / len,
                err.rotation_angle() / len,
            ));
        }
    }
    Ok(out)
}

pub fn odometry_error(est: &Trajectory, gt: &Trajectory, lengths: &[f64]) -> Result<OdomReport> {
    let segs = segments(est, gt, lengths)?;
    let per_length = lengths
        .iter()
        .map(|&len| {
            let sel: Vec<_> = segs.iter().filter(|s| s.2 == len).collect();
            let n = sel.len();
            let mean = |f: &dyn Fn(&Segment) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    sel.iter().map(|s| f(s)).sum::<f64>() / n as f64
                }
            };
            LengthError {
                length: len,
                t_err: mean(&|s| s.3) * 100.0,
                r_err: mean(&|s| s.4).to_degrees() * 100.0,
                segments: n,
            }
        })
        .collect();
    let n = segs.len();
    let (t_err, r_err) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            segs.iter().map(|s| s.3).sum::<f64>() / n as f64 * 100.0,
            (segs.iter().map(|s| s.4).sum::<f64>() / n as f64).to_degrees() * 100.0,
        )
    };
    Ok(OdomReport {
        t_err,
        r_err,
        per_length,
        segments: n,
        empty: n == 0,
    })
}
