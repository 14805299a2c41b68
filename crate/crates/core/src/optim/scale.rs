use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{invalid, Error, Result};
use crate::geom::Intrinsics;
use crate::image::DepthMap;

/// Re-weighting rounds of the plane fit.
pub const PLANE_ROUNDS: usize = 3;
/// Inlier band as a fraction of the median depth of the fitted region.
pub const PLANE_INLIER_FRACTION: f64 = 0.05;
/// Minimum inlier share for a fit to count as a ground plane.
pub const PLANE_MIN_INLIERS: f64 = 0.2;

/// Fitted plane `n·p = offset` with `‖n‖ = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFit {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_fraction: f64,
}

impl PlaneFit {
    /// Distance from the camera centre.
    pub fn height(&self) -> f64 {
        self.offset.abs()
    }
}

fn weighted_plane(points: &[Vector3<f64>], weights: &[f64]) -> Result<(Vector3<f64>, f64)> {
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::NoGroundPlane("no weighted points".into()));
    }
    let centroid = points.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vector3<f64>>() / wsum;
    let mut cov = Matrix3::zeros();
    for (p, w) in points.iter().zip(weights) {
        let d = p - centroid;
        cov += d * d.transpose() * *w;
    }
    let eig = SymmetricEigen::new(cov / wsum);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    // The two in-plane directions must both carry spread.
    if !(eig.eigenvalues[order[1]] > 1e-12 * eig.eigenvalues[order[2]].max(1e-300)) {
        return Err(Error::NoGroundPlane("points are collinear".into()));
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    Ok((normal, normal.dot(&centroid)))
}

/// Least-squares plane through the back-projected lower third of the image,
/// refined by hard inlier re-weighting.
pub fn fit_ground_plane(depth: &DepthMap, k: &Intrinsics) -> Result<PlaneFit> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(invalid("depth does not match intrinsics"));
    }
    let (w, h) = (k.width, k.height);
    let first = h - h / 3;
    let mut points = Vec::with_capacity(w * (h - first));
    let mut depths = Vec::with_capacity(points.capacity());
    for y in first..h {
        for x in 0..w {
            let d = depth.get(x, y);
            if d.is_finite() && d > 0.0 {
                points.push(k.ray(x as f64, y as f64) * d);
                depths.push(d);
            }
        }
    }
    if points.len() < 3 {
        return Err(Error::NoGroundPlane("fewer than three points in the lower band".into()));
    }
    depths.sort_by(f64::total_cmp);
    let band = PLANE_INLIER_FRACTION * depths[depths.len() / 2];
    let mut weights = vec![1.0; points.len()];
    let (mut normal, mut offset) = weighted_plane(&points, &weights)?;
    for _ in 0..PLANE_ROUNDS {
        let mut res: Vec<f64> = points.iter().map(|p| (normal.dot(p) - offset).abs()).collect();
        let cut = {
            let mut sorted = res.clone();
            sorted.sort_by(f64::total_cmp);
            band.max(sorted[sorted.len() / 2])
        };
        for (wt, r) in weights.iter_mut().zip(res.drain(..)) {
            *wt = if r <= cut { 1.0 } else { 0.0 };
        }
        (normal, offset) = weighted_plane(&points, &weights)?;
    }
    if offset.abs() < band {
        return Err(Error::NoGroundPlane("fitted plane passes through the camera".into()));
    }
    let inliers = points.iter().filter(|p| (normal.dot(p) - offset).abs() <= band).count();
    let inlier_fraction = inliers as f64 / points.len() as f64;
    if inlier_fraction < PLANE_MIN_INLIERS {
        return Err(Error::NoGroundPlane(format!(
            "only {:.1}% inliers",
            100.0 * inlier_fraction
        )));
    }
    Ok(PlaneFit {
        normal,
        offset,
        inlier_fraction,
    })
}

/// Factor that rescales `depth` (and the matching translations) so the
/// camera sits `known_height` above the fitted ground plane.
pub fn scale_from_ground_plane(depth: &DepthMap, k: &Intrinsics, known_height: f64) -> Result<f64> {
    if !(known_height > 0.0 && known_height.is_finite()) {
        return Err(invalid("known camera height must be positive"));
    }
    let fit = fit_ground_plane(depth, k)?;
    Ok(known_height / fit.height())
}

/// Sliding median with a centred window, shrunk at the ends.
pub fn median_filter(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut w = values[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let m = w.len() / 2;
            if w.len() % 2 == 1 {
                w[m]
            } else {
                0.5 * (w[m - 1] + w[m])
            }
        })
        .collect()
}
