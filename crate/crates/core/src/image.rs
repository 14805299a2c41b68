//! Image and depth containers with bilinear sampling.
//!
//! Buffers are planar (`data[c * w * h + y * w + x]`) and stored as `f64` so
//! gradient checks have headroom. Pixel centers sit at integer coordinates.

use crate::error::{invalid, Error, Result};

/// Intensity image with 1 or 3 channels, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(invalid(format!(
                "image data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(ImageBuf {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from `f(x, y, c)`, clamping results into `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        ImageBuf::new(width, height, channels, data)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        ImageBuf::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.num_pixels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[c * self.num_pixels() + y * self.width + x]
    }

    pub fn same_shape(&self, other: &ImageBuf) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Consumes the image, returning its planar data.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Adds zero-mean Gaussian noise, clamping back into `[0, 1]`.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> ImageBuf {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        if sigma <= 0.0 {
            return self.clone();
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("sigma is positive");
        let data = self
            .data
            .iter()
            .map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        ImageBuf { data, ..*self }
    }
}

/// Per-pixel depth, strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(invalid(format!("depth data length {} != {width}x{height}", data.len())));
        }
        if let Some(bad) = data.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidDepth(format!("non-positive depth {bad}")));
        }
        Ok(DepthMap { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        DepthMap::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        DepthMap::new(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn scaled(&self, s: f64) -> Result<DepthMap> {
        DepthMap::new(self.width, self.height, self.data.iter().map(|d| d * s).collect())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn matches(&self, img: &ImageBuf) -> bool {
        self.width == img.width && self.height == img.height
    }
}

/// Top-left corner of the bilinear cell used for a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Cell {
    pub x0: u32,
    pub y0: u32,
}

/// Finds the bilinear cell for `(u, v)`, or `None` when any of the four
/// neighbors would fall outside `[0, w-1] x [0, h-1]`.
#[inline]
pub fn locate(u: f64, v: f64, width: usize, height: usize) -> Option<Cell> {
    let (wm, hm) = ((width - 1) as f64, (height - 1) as f64);
    if !(u >= 0.0 && u <= wm && v >= 0.0 && v <= hm) {
        return None;
    }
    // On the last row/column the cell steps back so the far neighbor carries zero weight.
    let x0 = (u.floor() as usize).min(width.saturating_sub(2));
    let y0 = (v.floor() as usize).min(height.saturating_sub(2));
    Some(Cell {
        x0: x0 as u32,
        y0: y0 as u32,
    })
}

/// Bilinear value and spatial derivatives of one plane inside `cell`.
///
/// The fractional offsets are taken relative to the cell, so evaluating
/// slightly outside it extends the same bilinear patch.
#[inline]
pub fn bilinear_in_cell(plane: &[f64], width: usize, height: usize, cell: Cell, u: f64, v: f64) -> (f64, f64, f64) {
    let x0 = cell.x0 as usize;
    let y0 = cell.y0 as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let p00 = plane[y0 * width + x0];
    let p10 = plane[y0 * width + x1];
    let p01 = plane[y1 * width + x0];
    let p11 = plane[y1 * width + x1];
    let top = p00 + fx * (p10 - p00);
    let bottom = p01 + fx * (p11 - p01);
    let value = top + fy * (bottom - top);
    let dx = (1.0 - fy) * (p10 - p00) + fy * (p11 - p01);
    let dy = bottom - top;
    (value, dx, dy)
}

/// Bilinear weights of the four cell corners `(00, 10, 01, 11)` and their indices.
#[inline]
pub fn bilinear_weights(width: usize, height: usize, cell: Cell, u: f64, v: f64) -> ([usize; 4], [f64; 4]) {
    let x0 = cell.x0 as usize;
    let y0 = cell.y0 as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    (
        [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
    )
}

/// Samples every channel of `img` at `(u, v)`. Out-of-bounds samples return
/// zeros with `in_bounds == false`.
pub fn bilinear_sample(img: &ImageBuf, u: f64, v: f64) -> (Vec<f64>, bool) {
    match locate(u, v, img.width, img.height) {
        Some(cell) => (
            (0..img.channels)
                .map(|c| bilinear_in_cell(img.plane(c), img.width, img.height, cell, u, v).0)
                .collect(),
            true,
        ),
        None => (vec![0.0; img.channels], false),
    }
}

pub fn sample_depth(depth: &DepthMap, u: f64, v: f64) -> Option<f64> {
    locate(u, v, depth.width, depth.height)
        .map(|cell| bilinear_in_cell(&depth.data, depth.width, depth.height, cell, u, v).0)
}

/// Catmull–Rom weights and their derivatives at fraction `t`.
pub fn cubic_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    (
        [
            0.5 * (-t + 2.0 * t2 - t3),
            0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
            0.5 * (t + 4.0 * t2 - 3.0 * t3),
            0.5 * (t3 - t2),
        ],
        [
            0.5 * (-1.0 + 4.0 * t - 3.0 * t2),
            0.5 * (-10.0 * t + 9.0 * t2),
            0.5 * (1.0 + 8.0 * t - 9.0 * t2),
            0.5 * (3.0 * t2 - 2.0 * t),
        ],
    )
}

/// 4×4 bicubic footprint. At integer positions the derivative reduces to
/// the central difference, so cost and Jacobian stay consistent.
pub struct CubicTaps {
    pub x0: usize,
    pub y0: usize,
    pub wx: [f64; 4],
    pub dx: [f64; 4],
    pub wy: [f64; 4],
    pub dy: [f64; 4],
}

impl CubicTaps {
    /// Footprint around `(u, v)`, or `None` when it would leave the image.
    pub fn at(u: f64, v: f64, width: usize, height: usize) -> Option<CubicTaps> {
        if !(u >= 1.0 && v >= 1.0 && u < (width - 2) as f64 && v < (height - 2) as f64) {
            return None;
        }
        let (fx, fy) = (u.floor(), v.floor());
        let (wx, dx) = cubic_weights(u - fx);
        let (wy, dy) = cubic_weights(v - fy);
        Some(CubicTaps {
            x0: fx as usize - 1,
            y0: fy as usize - 1,
            wx,
            dx,
            wy,
            dy,
        })
    }

    /// Value and image-space derivatives.
    pub fn sample(&self, plane: &[f64], w: usize) -> (f64, f64, f64) {
        let (mut val, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for j in 0..4 {
            let row = &plane[(self.y0 + j) * w + self.x0..(self.y0 + j) * w + self.x0 + 4];
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..4 {
                a += self.wx[i] * row[i];
                b += self.dx[i] * row[i];
            }
            val += self.wy[j] * a;
            gx += self.wy[j] * b;
            gy += self.dy[j] * a;
        }
        (val, gx, gy)
    }
}

/// Forward differences per channel; the last column of `gx` and last row of
/// `gy` are zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

pub fn plane_gradient(plane: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; width * height];
    let mut gy = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width {
                gx[i] = plane[i + 1] - plane[i];
            }
            if y + 1 < height {
                gy[i] = plane[i + width] - plane[i];
            }
        }
    }
    (gx, gy)
}

pub fn image_gradient(img: &ImageBuf) -> Result<Gradients> {
    if img.width < 2 || img.height < 2 {
        return Err(invalid("image gradient needs at least 2x2 pixels"));
    }
    let mut gx = Vec::with_capacity(img.data.len());
    let mut gy = Vec::with_capacity(img.data.len());
    for c in 0..img.channels {
        let (x, y) = plane_gradient(img.plane(c), img.width, img.height);
        gx.extend(x);
        gy.extend(y);
    }
    Ok(Gradients {
        width: img.width,
        height: img.height,
        channels: img.channels,
        gx,
        gy,
    })
}

/// Separable Gaussian blur of one plane, truncated at `3σ`. With a mask,
/// only masked-in pixels contribute and the weights are renormalized, so
/// invalid pixels never bleed into valid ones.
pub fn gaussian_blur(plane: &[f64], width: usize, height: usize, sigma: f64, mask: Option<&[bool]>) -> Vec<f64> {
    if !(sigma > 0.0) {
        return plane.to_vec();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r)
        .map(|d| (-0.5 * (d * d) as f64 / (sigma * sigma)).exp())
        .collect();
    let m = |i: usize| mask.is_none_or(|m| m[i]) as u8 as f64;
    let pass = |vals: &[f64], wts: &[f64], horizontal: bool| {
        let mut v = vec![0.0; vals.len()];
        let mut w = vec![0.0; vals.len()];
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                let (mut sv, mut sw) = (0.0, 0.0);
                for (t, kv) in (-r..=r).zip(&kernel) {
                    let (nx, ny) = if horizontal { (x + t, y) } else { (x, y + t) };
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    sv += kv * vals[j];
                    sw += kv * wts[j];
                }
                let i = y as usize * width + x as usize;
                v[i] = sv;
                w[i] = sw;
            }
        }
        (v, w)
    };
    let weights: Vec<f64> = (0..plane.len()).map(m).collect();
    let masked: Vec<f64> = plane.iter().zip(&weights).map(|(p, w)| p * w).collect();
    let (hv, hw) = pass(&masked, &weights, true);
    let (vv, vw) = pass(&hv, &hw, false);
    (0..plane.len())
        .map(|i| {
            if weights[i] > 0.0 && vw[i] > 0.0 {
                vv[i] / vw[i]
            } else {
                plane[i]
            }
        })
        .collect()
}

impl ImageBuf {
    /// Per-channel [`gaussian_blur`].
    pub fn blurred(&self, sigma: f64, mask: Option<&[bool]>) -> ImageBuf {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            data.extend(gaussian_blur(self.plane(c), self.width, self.height, sigma, mask));
        }
        ImageBuf { data, ..*self }
    }
}
