//! Windowed SSIM with 3x3 mean filters and reflection padding, plus its
//! closed-form adjoint with respect to the first input.

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Window statistics and SSIM per pixel.
#[derive(Clone, Debug)]
pub struct SsimMap {
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub var_x: Vec<f64>,
    pub var_y: Vec<f64>,
    pub cov: Vec<f64>,
    pub value: Vec<f64>,
}

#[inline]
fn neighbors(x: usize, y: usize, w: usize, h: usize) -> [usize; 9] {
    let mut out = [0; 9];
    let mut k = 0;
    for dy in -1..=1isize {
        let yy = reflect(y as isize + dy, h);
        for dx in -1..=1isize {
            out[k] = yy * w + reflect(x as isize + dx, w);
            k += 1;
        }
    }
    out
}

pub fn ssim_map(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimMap {
    let n = w * h;
    let mut m = SsimMap {
        mu_x: vec![0.0; n],
        mu_y: vec![0.0; n],
        var_x: vec![0.0; n],
        var_y: vec![0.0; n],
        cov: vec![0.0; n],
        value: vec![0.0; n],
    };
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for q in neighbors(px, py, w, h) {
                let (a, b) = (x[q], y[q]);
                sx += a;
                sy += b;
                sxx += a * a;
                syy += b * b;
                sxy += a * b;
            }
            let (mx, my) = (sx / 9.0, sy / 9.0);
            let vx = sxx / 9.0 - mx * mx;
            let vy = syy / 9.0 - my * my;
            let cxy = sxy / 9.0 - mx * my;
            m.mu_x[i] = mx;
            m.mu_y[i] = my;
            m.var_x[i] = vx;
            m.var_y[i] = vy;
            m.cov[i] = cxy;
            let num = (2.0 * mx * my + C1) * (2.0 * cxy + C2);
            let den = (mx * mx + my * my + C1) * (vx + vy + C2);
            m.value[i] = num / den;
        }
    }
    m
}

/// Given `upstream[p] = ∂L/∂SSIM(p)`, returns `∂L/∂x` for every pixel.
pub fn ssim_backward(x: &[f64], y: &[f64], w: usize, h: usize, m: &SsimMap, upstream: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; w * h];
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            let g = upstream[i];
            if g == 0.0 {
                continue;
            }
            let (mx, my, vx, vy, cxy) = (m.mu_x[i], m.mu_y[i], m.var_x[i], m.var_y[i], m.cov[i]);
            let n1 = 2.0 * mx * my + C1;
            let n2 = 2.0 * cxy + C2;
            let d1 = mx * mx + my * my + C1;
            let d2 = vx + vy + C2;
            let f = n1 * n2 / (d1 * d2);
            let d_mu = 2.0 * my * n2 / (d1 * d2) - f * 2.0 * mx / d1;
            let d_var = -f / d2;
            let d_cov = 2.0 * n1 / (d1 * d2);
            // ∂/∂x_q of (mu_x, var_x, cov) = (1, 2(x_q − mu_x), y_q − mu_y) / 9
            let base = g * (d_mu - 2.0 * d_var * mx - d_cov * my) / 9.0;
            let a = g * 2.0 * d_var / 9.0;
            let b = g * d_cov / 9.0;
            for q in neighbors(px, py, w, h) {
                grad[q] += base + a * x[q] + b * y[q];
            }
        }
    }
    grad
}
