use super::ssim::{ssim_backward, ssim_map, SsimMap};
use super::{abs_on, dssim_on, dssim_state, sign_dz, MaskConfig};
use crate::error::{invalid, Error, Result};
use crate::geom::{Intrinsics, Pose};
use crate::image::{DepthMap, ImageBuf};
use crate::warp::WarpResult;

/// Per-pixel photometric error of one reconstruction against the target.
pub(crate) struct PhotoEval {
    pub e: Vec<f64>,
    pub ssim: Vec<SsimMap>,
    pub l1_sign: Vec<i8>,
    pub clamp: Vec<i8>,
}

/// `e(p) = mean_c [(1-α)|x - y| + α (1 - SSIM)/2]`, with branch decisions
/// either recorded or replayed from `frozen`.
pub(crate) fn photo_eval(
    planes: &[Vec<f64>],
    target: &ImageBuf,
    alpha: f64,
    frozen: Option<(&[i8], &[i8])>,
) -> PhotoEval {
    let (w, h, ch) = (target.width(), target.height(), target.channels());
    let n = w * h;
    let mut e = vec![0.0; n];
    let mut ssim = Vec::with_capacity(ch);
    let mut l1_sign = vec![0i8; n * ch];
    let mut clamp = vec![0i8; n * ch];
    let inv_c = 1.0 / ch as f64;
    for c in 0..ch {
        let x = &planes[c];
        let y = target.plane(c);
        let m = ssim_map(x, y, w, h);
        for i in 0..n {
            let k = c * n + i;
            let d = x[i] - y[i];
            let (s, cl) = match frozen {
                Some((signs, clamps)) => (signs[k], clamps[k]),
                None => (sign_dz(d), dssim_state(m.value[i])),
            };
            l1_sign[k] = s;
            clamp[k] = cl;
            e[i] += inv_c * ((1.0 - alpha) * abs_on(d, s) + alpha * dssim_on(m.value[i], cl));
        }
        ssim.push(m);
    }
    PhotoEval {
        e,
        ssim,
        l1_sign,
        clamp,
    }
}

/// Adjoint of [`photo_eval`]: `∂L/∂x` per channel plane given `∂L/∂e`.
pub(crate) fn photo_backward(
    planes: &[Vec<f64>],
    target: &ImageBuf,
    alpha: f64,
    pe: &PhotoEval,
    de: &[f64],
) -> Vec<Vec<f64>> {
    let (w, h, ch) = (target.width(), target.height(), target.channels());
    let n = w * h;
    let inv_c = 1.0 / ch as f64;
    (0..ch)
        .map(|c| {
            let upstream: Vec<f64> = (0..n)
                .map(|i| {
                    if pe.clamp[c * n + i] == 0 {
                        -0.5 * alpha * inv_c * de[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut g = if alpha > 0.0 {
                ssim_backward(&planes[c], target.plane(c), w, h, &pe.ssim[c], &upstream)
            } else {
                vec![0.0; n]
            };
            for i in 0..n {
                g[i] += de[i] * (1.0 - alpha) * inv_c * pe.l1_sign[c * n + i] as f64;
            }
            g
        })
        .collect()
}

/// Reconstruction planes with invalid pixels replaced by the target, so the
/// SSIM windows of valid pixels never see unsampled values.
pub(crate) fn filled_planes(recon: &ImageBuf, valid: &[bool], target: &ImageBuf) -> Vec<Vec<f64>> {
    (0..target.channels())
        .map(|c| {
            recon
                .plane(c)
                .iter()
                .zip(target.plane(c))
                .zip(valid)
                .map(|((r, t), ok)| if *ok { *r } else { *t })
                .collect()
        })
        .collect()
}

pub(crate) fn raw_planes(img: &ImageBuf) -> Vec<Vec<f64>> {
    (0..img.channels()).map(|c| img.plane(c).to_vec()).collect()
}

/// Photometric loss of a reconstruction: mean of the per-pixel error over
/// valid pixels. The returned map is zero at invalid pixels.
pub fn photometric_loss(recon: &WarpResult, target: &ImageBuf, alpha: f64) -> Result<(f64, Vec<f64>)> {
    if !recon.image.same_shape(target) {
        return Err(invalid("reconstruction and target differ in shape"));
    }
    let pe = photo_eval(&filled_planes(&recon.image, &recon.valid, target), target, alpha, None);
    let mut sum = 0.0;
    let mut count = 0usize;
    let map =
        pe.e.iter()
            .zip(&recon.valid)
            .map(|(e, ok)| {
                if *ok {
                    sum += e;
                    count += 1;
                    *e
                } else {
                    0.0
                }
            })
            .collect();
    if count == 0 {
        return Err(Error::EmptySupport("no valid pixels in reconstruction".into()));
    }
    Ok((sum / count as f64, map))
}

pub(crate) struct SmoothEval {
    pub value: f64,
    pub sx: Vec<i8>,
    pub sy: Vec<i8>,
}

/// Edge-aware smoothness of mean-normalized inverse depth; accumulates
/// `coef * ∂L/∂D` into `grad` when given.
pub(crate) fn smooth_eval(
    image: &ImageBuf,
    depth: &DepthMap,
    frozen: Option<(&[i8], &[i8])>,
    grad: Option<(f64, &mut [f64])>,
) -> Result<SmoothEval> {
    let (w, h) = (image.width(), image.height());
    if !depth.matches(image) {
        return Err(invalid("smoothness: depth and image differ in size"));
    }
    let n = w * h;
    let inv: Vec<f64> = depth.data().iter().map(|d| 1.0 / d).collect();
    let mean_inv = inv.iter().sum::<f64>() / n as f64;
    if !(mean_inv > 0.0) || !mean_inv.is_finite() {
        return Err(Error::InvalidDepth("mean inverse depth must be positive".into()));
    }
    let dn: Vec<f64> = inv.iter().map(|v| v / mean_inv).collect();
    let ch = image.channels();
    // Edge weights from the channel-mean absolute image gradient.
    let mut ex = vec![0.0; n];
    let mut ey = vec![0.0; n];
    for c in 0..ch {
        let p = image.plane(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    ex[i] += (p[i + 1] - p[i]).abs() / ch as f64;
                }
                if y + 1 < h {
                    ey[i] += (p[i + w] - p[i]).abs() / ch as f64;
                }
            }
        }
    }
    let mut sx = vec![0i8; n];
    let mut sy = vec![0i8; n];
    let mut sum = 0.0;
    let mut g_dn = grad.as_ref().map(|_| vec![0.0; n]);
    let inv_n = 1.0 / n as f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let d = dn[i + 1] - dn[i];
                let s = frozen.map_or_else(|| sign_dz(d), |f| f.0[i]);
                sx[i] = s;
                let wx = (-ex[i]).exp();
                sum += abs_on(d, s) * wx;
                if let Some(g) = g_dn.as_mut() {
                    let k = s as f64 * wx * inv_n;
                    g[i + 1] += k;
                    g[i] -= k;
                }
            }
            if y + 1 < h {
                let d = dn[i + w] - dn[i];
                let s = frozen.map_or_else(|| sign_dz(d), |f| f.1[i]);
                sy[i] = s;
                let wy = (-ey[i]).exp();
                sum += abs_on(d, s) * wy;
                if let Some(g) = g_dn.as_mut() {
                    let k = s as f64 * wy * inv_n;
                    g[i + w] += k;
                    g[i] -= k;
                }
            }
        }
    }
    if let (Some((coef, out)), Some(g)) = (grad, g_dn) {
        let dot: f64 = g.iter().zip(&inv).map(|(a, b)| a * b).sum();
        let shared = dot / (mean_inv * mean_inv * n as f64);
        for i in 0..n {
            let d_inv = g[i] / mean_inv - shared;
            out[i] += coef * d_inv * (-inv[i] * inv[i]);
        }
    }
    Ok(SmoothEval {
        value: sum * inv_n,
        sx,
        sy,
    })
}

/// Edge-aware first-order smoothness of mean-normalized inverse depth.
pub fn smoothness_loss(image: &ImageBuf, depth: &DepthMap) -> Result<f64> {
    Ok(smooth_eval(image, depth, None, None)?.value)
}

/// Normalized depth disagreement `|z - D_s| / (z + D_s)` between the target
/// point's depth in the source frame and the resampled source depth.
pub fn geometric_consistency_loss(
    target_depth: &DepthMap,
    warp: &WarpResult,
    target_to_source: &Pose,
    k: &Intrinsics,
) -> Result<(f64, Vec<f64>)> {
    let n = k.num_pixels();
    if target_depth.width() != k.width || target_depth.height() != k.height || warp.valid.len() != n {
        return Err(invalid("geometric consistency: size mismatch"));
    }
    let Some(sd) = warp.warped_depth.as_ref() else {
        return Err(invalid("geometric consistency needs a warp carrying source depth"));
    };
    let mut ratio = vec![0.0; n];
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..k.height {
        for x in 0..k.width {
            let i = y * k.width + x;
            if !warp.valid[i] {
                continue;
            }
            let z = target_to_source
                .transform(&(k.ray(x as f64, y as f64) * target_depth.data()[i]))
                .z;
            let s = sd[i];
            let r = (z - s).abs() / (z + s);
            ratio[i] = r;
            sum += r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySupport("no overlap for geometric consistency".into()));
    }
    Ok((sum / count as f64, ratio))
}

pub(crate) struct PriorEval {
    pub value: f64,
    pub clamp: Vec<i8>,
}

pub(crate) fn prior_eval(
    depth: &DepthMap,
    init: &DepthMap,
    d_max: f64,
    frozen: Option<&[i8]>,
    grad: Option<(f64, &mut [f64])>,
) -> Result<PriorEval> {
    if depth.width() != init.width() || depth.height() != init.height() {
        return Err(invalid("depth prior: size mismatch"));
    }
    if !(d_max > 0.0) {
        return Err(invalid("depth prior: d_max must be positive"));
    }
    let (w, h) = (depth.width(), depth.height());
    let n = w * h;
    let x: Vec<f64> = depth.data().iter().map(|d| d / d_max).collect();
    let y: Vec<f64> = init.data().iter().map(|d| d / d_max).collect();
    let m = ssim_map(&x, &y, w, h);
    let mut clamp = vec![0i8; n];
    let mut sum = 0.0;
    for i in 0..n {
        let s = frozen.map_or_else(|| dssim_state(m.value[i]), |f| f[i]);
        clamp[i] = s;
        sum += dssim_on(m.value[i], s);
    }
    if let Some((coef, out)) = grad {
        let upstream: Vec<f64> = clamp
            .iter()
            .map(|s| if *s == 0 { -0.5 * coef / n as f64 } else { 0.0 })
            .collect();
        let g = ssim_backward(&x, &y, w, h, &m, &upstream);
        for i in 0..n {
            out[i] += g[i] / d_max;
        }
    }
    Ok(PriorEval {
        value: sum / n as f64,
        clamp,
    })
}

/// `mean (1 - SSIM(D/d_max, D_init/d_max)) / 2`.
pub fn depth_prior_loss(depth: &DepthMap, init: &DepthMap, d_max: f64) -> Result<f64> {
    Ok(prior_eval(depth, init, d_max, None, None)?.value)
}

/// Decides which (source, pixel) photometric terms are kept. Invalid
/// reprojections are marked by non-finite values.
pub(crate) fn select_terms(cfg: &MaskConfig, reprojection: &[Vec<f64>], identity: &[Vec<f64>]) -> Vec<Vec<bool>> {
    let s = reprojection.len();
    let n = reprojection.first().map_or(0, |r| r.len());
    let mut active = vec![vec![false; n]; s];
    for i in 0..n {
        // Strict comparison: exact ties (a static pixel) are dropped.
        let min_id = identity.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
        let keep = |v: f64| !cfg.use_automask || v < min_id;
        if cfg.use_min_reprojection {
            let mut best: Option<(usize, f64)> = None;
            for (j, r) in reprojection.iter().enumerate() {
                let v = r[i];
                if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, v)) = best {
                active[j][i] = keep(v);
            }
        } else {
            for (j, r) in reprojection.iter().enumerate() {
                let v = r[i];
                active[j][i] = v.is_finite() && keep(v);
            }
        }
    }
    active
}

/// Per-pixel weight applied to the photometric term.
///
/// `reprojection[j][p]` is the warped-source error (non-finite where the
/// sample was invalid), `identity[j][p]` the unwarped-source error and
/// `gc_ratio[j][p]` the depth inconsistency ratio (empty to disable the
/// self-discovered weighting).
pub fn compose_masks(
    cfg: &MaskConfig,
    reprojection: &[Vec<f64>],
    identity: &[Vec<f64>],
    gc_ratio: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if reprojection.is_empty() {
        return Err(invalid("compose_masks needs at least one source"));
    }
    let n = reprojection[0].len();
    if reprojection.iter().any(|r| r.len() != n)
        || (cfg.use_automask && (identity.len() != reprojection.len() || identity.iter().any(|r| r.len() != n)))
        || gc_ratio.iter().any(|r| r.len() != n)
    {
        return Err(invalid("compose_masks: inconsistent map sizes"));
    }
    let active = select_terms(cfg, reprojection, identity);
    let use_gc = cfg.use_self_discovered && gc_ratio.len() == reprojection.len();
    let mut mask = vec![0.0; n];
    for (i, m) in mask.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut valid = 0usize;
        for j in 0..reprojection.len() {
            if !reprojection[j][i].is_finite() {
                continue;
            }
            valid += 1;
            if active[j][i] {
                sum += if use_gc { 1.0 - gc_ratio[j][i] } else { 1.0 };
            }
        }
        *m = if cfg.use_min_reprojection {
            sum
        } else if valid > 0 {
            sum / valid as f64
        } else {
            0.0
        };
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::synthesize_view;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn identity_warp(img: &ImageBuf) -> WarpResult {
        let k = Intrinsics::new(
            10.0,
            10.0,
            img.width() as f64 / 2.0 - 0.5,
            img.height() as f64 / 2.0 - 0.5,
            img.width(),
            img.height(),
        )
        .unwrap();
        let d = DepthMap::constant(img.width(), img.height(), 2.0).unwrap();
        synthesize_view(img, &d, &Pose::identity(), &k, Some(&d)).unwrap()
    }

    #[test]
    fn photometric_of_identical_images_is_zero() {
        let mut r = rng(1);
        let img = ImageBuf::from_fn(8, 6, 3, |_, _, _| r.random()).unwrap();
        let (v, map) = photometric_loss(&identity_warp(&img), &img, 0.85).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(map.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn photometric_of_constant_images() {
        let a = ImageBuf::constant(6, 5, 1, 0.4).unwrap();
        let b = ImageBuf::constant(6, 5, 1, 0.6).unwrap();
        // Constant windows: var = cov = 0, so SSIM reduces to the luminance term.
        let ssim = (2.0 * 0.24 + 1e-4) / (0.52 + 1e-4);
        let expected = 0.15 * 0.2 + 0.85 * (1.0 - ssim) / 2.0;
        let (v, _) = photometric_loss(&identity_warp(&a), &b, 0.85).unwrap();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.0627).abs() < 1e-4);
    }

    #[test]
    fn photometric_with_zero_alpha_is_mean_abs_difference() {
        let mut r = rng(2);
        let a = ImageBuf::from_fn(7, 5, 3, |_, _, _| r.random()).unwrap();
        let b = ImageBuf::from_fn(7, 5, 3, |_, _, _| r.random()).unwrap();
        let (v, _) = photometric_loss(&identity_warp(&a), &b, 0.0).unwrap();
        let mad = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64;
        assert!((v - mad).abs() < 1e-12);
    }

    #[test]
    fn photometric_is_bounded() {
        let mut r = rng(3);
        let a = ImageBuf::from_fn(9, 9, 1, |_, _, _| r.random::<f64>().round()).unwrap();
        let b = ImageBuf::from_fn(9, 9, 1, |_, _, _| r.random::<f64>().round()).unwrap();
        for alpha in [0.0, 0.5, 0.85, 1.0] {
            let (_, map) = photometric_loss(&identity_warp(&a), &b, alpha).unwrap();
            assert!(map.iter().all(|m| *m >= 0.0 && *m <= 1.0));
        }
    }

    #[test]
    fn photometric_without_support_errors() {
        let img = ImageBuf::constant(4, 4, 1, 0.5).unwrap();
        let mut w = identity_warp(&img);
        w.valid.iter_mut().for_each(|v| *v = false);
        assert!(matches!(photometric_loss(&w, &img, 0.85), Err(Error::EmptySupport(_))));
    }

    /// Per-pixel smoothness written as a plain loop.
    fn smoothness_oracle(img: &ImageBuf, d: &DepthMap) -> f64 {
        let (w, h, ch) = (img.width(), img.height(), img.channels());
        let mean_inv: f64 = d.data().iter().map(|v| 1.0 / v).sum::<f64>() / (w * h) as f64;
        let dn = |x: usize, y: usize| 1.0 / d.get(x, y) / mean_inv;
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    let gi: f64 = (0..ch)
                        .map(|c| (img.get(x + 1, y, c) - img.get(x, y, c)).abs())
                        .sum::<f64>()
                        / ch as f64;
                    total += (dn(x + 1, y) - dn(x, y)).abs() * (-gi).exp();
                }
                if y + 1 < h {
                    let gi: f64 = (0..ch)
                        .map(|c| (img.get(x, y + 1, c) - img.get(x, y, c)).abs())
                        .sum::<f64>()
                        / ch as f64;
                    total += (dn(x, y + 1) - dn(x, y)).abs() * (-gi).exp();
                }
            }
        }
        total / (w * h) as f64
    }

    #[test]
    fn smoothness_cases() {
        let img = ImageBuf::constant(8, 6, 1, 0.5).unwrap();
        assert_eq!(
            smoothness_loss(&img, &DepthMap::constant(8, 6, 3.0).unwrap()).unwrap(),
            0.0
        );

        let ramp = DepthMap::from_fn(8, 6, |x, _| 1.0 + 0.5 * x as f64).unwrap();
        let edges = ImageBuf::from_fn(8, 6, 1, |x, _, _| if x % 2 == 0 { 0.0 } else { 1.0 }).unwrap();
        assert!(smoothness_loss(&img, &ramp).unwrap() > smoothness_loss(&edges, &ramp).unwrap());

        let mut r = rng(4);
        let img = ImageBuf::from_fn(9, 7, 3, |_, _, _| r.random()).unwrap();
        let d = DepthMap::from_fn(9, 7, |_, _| 0.5 + 5.0 * r.random::<f64>()).unwrap();
        assert!((smoothness_loss(&img, &d).unwrap() - smoothness_oracle(&img, &d)).abs() < 1e-10);
    }

    #[test]
    fn smoothness_gradient_matches_differences() {
        let mut r = rng(5);
        let img = ImageBuf::from_fn(6, 5, 1, |_, _, _| r.random()).unwrap();
        let base: Vec<f64> = (0..30).map(|_| 1.0 + 4.0 * r.random::<f64>()).collect();
        let d = DepthMap::new(6, 5, base.clone()).unwrap();
        let mut grad = vec![0.0; 30];
        let ev = smooth_eval(&img, &d, None, Some((1.0, &mut grad))).unwrap();
        let h = 1e-6;
        for i in 0..30 {
            let eval_at = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                let dm = DepthMap::new(6, 5, v).unwrap();
                smooth_eval(&img, &dm, Some((&ev.sx, &ev.sy)), None).unwrap().value
            };
            let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "{i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn gc_examples() {
        let k = Intrinsics::new(20.0, 20.0, 7.5, 5.5, 16, 12).unwrap();
        let img = ImageBuf::constant(16, 12, 1, 0.5).unwrap();
        let dt = DepthMap::constant(16, 12, 2.0).unwrap();
        let w = synthesize_view(&img, &dt, &Pose::identity(), &k, Some(&dt)).unwrap();
        assert!(geometric_consistency_loss(&dt, &w, &Pose::identity(), &k).unwrap().0 < 1e-12);

        let ds = dt.scaled(2.0).unwrap();
        let w = synthesize_view(&img, &dt, &Pose::identity(), &k, Some(&ds)).unwrap();
        let (v, map) = geometric_consistency_loss(&dt, &w, &Pose::identity(), &k).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        assert!(map.iter().all(|r| (r - 1.0 / 3.0).abs() < 1e-12));

        let no_depth = synthesize_view(&img, &dt, &Pose::identity(), &k, None).unwrap();
        assert!(geometric_consistency_loss(&dt, &no_depth, &Pose::identity(), &k).is_err());
    }

    #[test]
    fn gc_matches_per_pixel_oracle() {
        let k = Intrinsics::new(20.0, 22.0, 7.5, 5.5, 16, 12).unwrap();
        let mut r = rng(6);
        let img = ImageBuf::constant(16, 12, 1, 0.5).unwrap();
        let dt = DepthMap::from_fn(16, 12, |_, _| 2.0 + r.random::<f64>()).unwrap();
        let ds = DepthMap::from_fn(16, 12, |_, _| 2.0 + r.random::<f64>()).unwrap();
        let pose = crate::geom::Tangent::from_array([0.05, 0.01, -0.02, 0.01, -0.02, 0.005])
            .exp()
            .unwrap();
        let w = synthesize_view(&img, &dt, &pose, &k, Some(&ds)).unwrap();
        let (v, _) = geometric_consistency_loss(&dt, &w, &pose, &k).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for y in 0..12 {
            for x in 0..16 {
                let p = k.backproject(x as f64, y as f64, dt.get(x, y)).unwrap();
                let q = pose.rotation * p + pose.translation;
                let (u, vv) = k.project(&q).unwrap();
                if let Some(s) = crate::image::sample_depth(&ds, u, vv) {
                    sum += (q.z - s).abs() / (q.z + s);
                    count += 1;
                }
            }
        }
        assert!((v - sum / count as f64).abs() < 1e-12);
    }

    /// SSIM-based prior evaluated on 8x8 inputs straight from window statistics.
    #[test]
    fn prior_cases() {
        let mut r = rng(7);
        let d0 = DepthMap::from_fn(8, 8, |_, _| 1.0 + 3.0 * r.random::<f64>()).unwrap();
        assert!(depth_prior_loss(&d0, &d0, 10.0).unwrap().abs() < 1e-12);
        let bumped = DepthMap::from_fn(8, 8, |x, y| d0.get(x, y) + if (x + y) % 2 == 0 { 2.0 } else { 0.0 }).unwrap();
        assert!(depth_prior_loss(&bumped, &d0, 10.0).unwrap() > 0.0);
        assert!(depth_prior_loss(&DepthMap::constant(4, 4, 1.0).unwrap(), &d0, 10.0).is_err());

        let x: Vec<f64> = bumped.data().iter().map(|d| d / 10.0).collect();
        let y: Vec<f64> = d0.data().iter().map(|d| d / 10.0).collect();
        let mut total = 0.0;
        for py in 0..8usize {
            for px in 0..8usize {
                let mut xs = vec![];
                let mut ys = vec![];
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let rf = |v: i64| if v < 0 { -v } else if v > 7 { 14 - v } else { v } as usize;
                        let q = rf(py as i64 + dy) * 8 + rf(px as i64 + dx);
                        xs.push(x[q]);
                        ys.push(y[q]);
                    }
                }
                let mx = xs.iter().sum::<f64>() / 9.0;
                let my = ys.iter().sum::<f64>() / 9.0;
                let vx = xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / 9.0;
                let vy = ys.iter().map(|b| (b - my).powi(2)).sum::<f64>() / 9.0;
                let c = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / 9.0;
                let s = (2.0 * mx * my + 1e-4) * (2.0 * c + 9e-4) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
                total += (0.5 * (1.0 - s)).clamp(0.0, 1.0);
            }
        }
        assert!((depth_prior_loss(&bumped, &d0, 10.0).unwrap() - total / 64.0).abs() < 1e-12);
    }

    #[test]
    fn mask_examples() {
        let cfg = MaskConfig::default();
        // Zero motion: identity error equals reprojection error everywhere.
        let e = vec![vec![0.1, 0.2, 0.0, 0.3]];
        let m = compose_masks(&cfg, &e, &e, &[vec![0.0; 4]]).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));

        let only_gc = MaskConfig {
            use_automask: false,
            use_min_reprojection: true,
            use_self_discovered: true,
        };
        let m = compose_masks(&only_gc, &e, &[], &[vec![0.0; 4]]).unwrap();
        assert!(m.iter().all(|v| *v == 1.0));

        // Two sources: pixel 0 best from source 1, pixel 1 invalid in source 0.
        let rep = vec![vec![0.5, f64::INFINITY], vec![0.2, 0.4]];
        let ids = vec![vec![0.9, 0.9], vec![0.9, 0.1]];
        let gc = vec![vec![0.1, 0.1], vec![0.25, 0.5]];
        let m = compose_masks(&cfg, &rep, &ids, &gc).unwrap();
        assert_eq!(m, vec![0.75, 0.0]);
        assert!(compose_masks(&cfg, &[], &[], &[]).is_err());
    }

    #[test]
    fn min_reprojection_is_order_independent() {
        let cfg = MaskConfig::default();
        let rep = vec![vec![0.5, 0.1, 0.3], vec![0.2, 0.4, f64::INFINITY]];
        let ids = vec![vec![0.9, 0.05, 0.9], vec![0.9, 0.9, 0.2]];
        let gc = vec![vec![0.1, 0.2, 0.3], vec![0.3, 0.2, 0.1]];
        let a = compose_masks(&cfg, &rep, &ids, &gc).unwrap();
        let rev = |v: &Vec<Vec<f64>>| v.iter().rev().cloned().collect::<Vec<_>>();
        let b = compose_masks(&cfg, &rev(&rep), &rev(&ids), &rev(&gc)).unwrap();
        assert_eq!(a, b);
    }
}
