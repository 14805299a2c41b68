//! View synthesis: reconstruct the target view by sampling the source image
//! through target depth and the target-to-source pose.

use crate::error::{invalid, Result};
use crate::geom::{Intrinsics, Pose, MIN_Z};
use crate::image::{bilinear_in_cell, locate, Cell, CubicTaps, DepthMap, ImageBuf};

/// Output of [`synthesize_view`], indexed by target pixel.
#[derive(Clone, Debug)]
pub struct WarpResult {
    /// Reconstructed target view; zero where invalid.
    pub image: ImageBuf,
    pub valid: Vec<bool>,
    /// Source depth resampled at each target pixel's source location (0 where invalid).
    pub warped_depth: Option<Vec<f64>>,
    /// Depth of the target point expressed in the source frame.
    pub transformed_z: Vec<f64>,
    /// Continuous source-image coordinates; NaN where projection failed.
    pub coords: Vec<[f64; 2]>,
    pub cells: Vec<Option<Cell>>,
}

impl WarpResult {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.valid.len() as f64
    }
}

/// Warps `source` into the target frame: `u = π(T_st · π⁻¹(u′, D_t(u′)))`.
pub fn synthesize_view(
    source: &ImageBuf,
    target_depth: &DepthMap,
    target_to_source: &Pose,
    k: &Intrinsics,
    source_depth: Option<&DepthMap>,
) -> Result<WarpResult> {
    synthesize_view_with_cells(source, target_depth, target_to_source, k, source_depth, None)
}

/// Like [`synthesize_view`] but optionally reuses a previous run's sampling
/// cells, keeping the result on one smooth bilinear patch per pixel.
pub fn synthesize_view_with_cells(
    source: &ImageBuf,
    target_depth: &DepthMap,
    target_to_source: &Pose,
    k: &Intrinsics,
    source_depth: Option<&DepthMap>,
    frozen: Option<&[Option<Cell>]>,
) -> Result<WarpResult> {
    let (w, h) = (k.width, k.height);
    if source.width() != w || source.height() != h {
        return Err(invalid(format!(
            "source image {}x{} does not match intrinsics {w}x{h}",
            source.width(),
            source.height()
        )));
    }
    if target_depth.width() != w || target_depth.height() != h {
        return Err(invalid("target depth does not match intrinsics"));
    }
    if let Some(sd) = source_depth {
        if sd.width() != w || sd.height() != h {
            return Err(invalid("source depth does not match intrinsics"));
        }
    }
    if let Some(f) = frozen {
        if f.len() != w * h {
            return Err(invalid("frozen cell count does not match image"));
        }
    }
    let n = w * h;
    let ch = source.channels();
    let mut data = vec![0.0; n * ch];
    let mut valid = vec![false; n];
    let mut warped_depth = source_depth.map(|_| vec![0.0; n]);
    let mut transformed_z = vec![0.0; n];
    let mut coords = vec![[f64::NAN; 2]; n];
    let mut cells = vec![None; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let p = k.ray(x as f64, y as f64) * target_depth.data()[i];
            let q = target_to_source.transform(&p);
            transformed_z[i] = q.z;
            if !(q.z > MIN_Z) {
                continue;
            }
            let (u, v) = k.project_unchecked(&q);
            coords[i] = [u, v];
            let cell = match frozen {
                Some(f) => f[i],
                None => locate(u, v, w, h),
            };
            let Some(cell) = cell else { continue };
            valid[i] = true;
            cells[i] = Some(cell);
            for c in 0..ch {
                data[c * n + i] = bilinear_in_cell(source.plane(c), w, h, cell, u, v).0;
            }
            if let (Some(wd), Some(sd)) = (warped_depth.as_mut(), source_depth) {
                wd[i] = bilinear_in_cell(sd.data(), w, h, cell, u, v).0;
            }
        }
    }
    // Frozen cells may extrapolate marginally past [0, 1].
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(WarpResult {
        image: ImageBuf::new(w, h, ch, data)?,
        valid,
        warped_depth,
        transformed_z,
        coords,
        cells,
    })
}

/// [`synthesize_view`] with Catmull–Rom sampling. Pixels whose 4×4
/// footprint leaves the source are invalid.
pub fn synthesize_view_cubic(
    source: &ImageBuf,
    target_depth: &DepthMap,
    target_to_source: &Pose,
    k: &Intrinsics,
) -> Result<WarpResult> {
    let mut out = synthesize_view(source, target_depth, target_to_source, k, None)?;
    let (w, h, ch) = (k.width, k.height, source.channels());
    let n = w * h;
    let mut data = vec![0.0; n * ch];
    for i in 0..n {
        let [u, v] = out.coords[i];
        let taps = if out.valid[i] { CubicTaps::at(u, v, w, h) } else { None };
        let Some(taps) = taps else {
            out.valid[i] = false;
            out.cells[i] = None;
            continue;
        };
        for c in 0..ch {
            data[c * n + i] = taps.sample(source.plane(c), w).0.clamp(0.0, 1.0);
        }
    }
    out.image = ImageBuf::new(w, h, ch, data)?;
    Ok(out)
}
