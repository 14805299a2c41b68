use crate::error::{invalid, Error, Result};
use crate::image::DepthMap;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    /// Fractions with `max(p/g, g/p)` below `1.25`, `1.25²`, `1.25³`.
    pub delta: [f64; 3],
    pub pixels: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standard depth metrics over ground-truth pixels inside `clamp`.
pub fn depth_error(pred: &DepthMap, gt: &DepthMap, median_scale: bool, clamp: [f64; 2]) -> Result<DepthReport> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(invalid("prediction and ground truth differ in size"));
    }
    let [lo, hi] = clamp;
    if !(lo > 0.0 && lo < hi) {
        return Err(invalid("depth clamp must satisfy 0 < min < max"));
    }
    let idx: Vec<usize> = (0..gt.len()).filter(|&i| (lo..=hi).contains(&gt.data()[i])).collect();
    if idx.is_empty() {
        return Err(Error::EmptySupport(
            "no ground-truth pixels inside the clamp range".into(),
        ));
    }
    let ratio = if median_scale {
        let mp = median(idx.iter().map(|&i| pred.data()[i]).collect());
        let mg = median(idx.iter().map(|&i| gt.data()[i]).collect());
        if !(mp > 0.0) {
            return Err(Error::DegenerateScale("median predicted depth is zero".into()));
        }
        mg / mp
    } else {
        1.0
    };
    let (mut abs_rel, mut sq_rel, mut se, mut se_log) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for &i in &idx {
        let g = gt.data()[i];
        let p = (pred.data()[i] * ratio).clamp(lo, hi);
        let d = p - g;
        abs_rel += d.abs() / g;
        sq_rel += d * d / g;
        se += d * d;
        se_log += (p.ln() - g.ln()).powi(2);
        let t = (p / g).max(g / p);
        for (k, h) in hits.iter_mut().enumerate() {
            if t < 1.25f64.powi(k as i32 + 1) {
                *h += 1;
            }
        }
    }
    let n = idx.len() as f64;
    Ok(DepthReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (se / n).sqrt(),
        rmse_log: (se_log / n).sqrt(),
        delta: hits.map(|h| h as f64 / n),
        pixels: idx.len(),
    })
}
