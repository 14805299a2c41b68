//! On-disk frame sets and atomic artifact writes.
//!
//! A frame directory holds `images/NNNNNN.ppm` (or `.pgm`),
//! `depth/NNNNNN.depth`, `calib.txt` (`fx fy cx cy width height`) and an
//! optional `poses.txt` of camera-to-world rows.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use tightsfm_core::eval::Trajectory;
use tightsfm_core::geom::{format_pose_file, parse_pose_file};
use tightsfm_core::io::{encode_depth, encode_pnm, read_depth, read_pnm};
use tightsfm_core::synth::RenderedFrame;
use tightsfm_core::{DepthMap, ImageBuf, Intrinsics};

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .context("output path has no file name")?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn frame_name(i: usize) -> String {
    format!("{i:06}")
}

#[derive(Clone, Debug)]
pub struct FrameSet {
    pub images: Vec<ImageBuf>,
    pub depths: Option<Vec<DepthMap>>,
    pub intrinsics: Intrinsics,
    pub poses: Option<Trajectory>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn depths(&self) -> Result<&[DepthMap]> {
        self.depths.as_deref().context("frame set has no depth/ directory")
    }
}

pub fn write_frames(dir: &Path, frames: &[RenderedFrame], traj: &Trajectory) -> Result<()> {
    let Some(first) = frames.first() else {
        bail!("no frames to write")
    };
    let ext = if first.image.channels() == 1 { "pgm" } else { "ppm" };
    for (i, f) in frames.iter().enumerate() {
        write_atomic(
            &dir.join("images").join(format!("{}.{ext}", frame_name(i))),
            &encode_pnm(&f.image),
        )?;
        write_atomic(
            &dir.join("depth").join(format!("{}.depth", frame_name(i))),
            &encode_depth(&f.depth)?,
        )?;
    }
    let k = first.intrinsics;
    let calib = format!("{:?} {:?} {:?} {:?} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height);
    write_atomic(&dir.join("calib.txt"), calib.as_bytes())?;
    write_atomic(&dir.join("poses.txt"), format_pose_file(traj.poses()).as_bytes())?;
    Ok(())
}

fn sorted_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| exts.contains(&e))
    });
    files.sort();
    Ok(files)
}

pub fn read_calib(path: &Path) -> Result<Intrinsics> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Vec<&str> = text.split_whitespace().collect();
    if v.len() != 6 {
        bail!("{}: expected 'fx fy cx cy width height'", path.display());
    }
    let f = |s: &str| {
        s.parse::<f64>()
            .with_context(|| format!("{}: bad number '{s}'", path.display()))
    };
    let n = |s: &str| {
        s.parse::<usize>()
            .with_context(|| format!("{}: bad size '{s}'", path.display()))
    };
    Ok(Intrinsics::new(
        f(v[0])?,
        f(v[1])?,
        f(v[2])?,
        f(v[3])?,
        n(v[4])?,
        n(v[5])?,
    )?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Trajectory::new(
        parse_pose_file(&text).with_context(|| format!("parsing {}", path.display()))?,
    ))
}

pub fn read_frames(dir: &Path) -> Result<FrameSet> {
    if !dir.is_dir() {
        bail!("frame directory {} does not exist", dir.display());
    }
    let intrinsics = read_calib(&dir.join("calib.txt"))?;
    let images = sorted_files(&dir.join("images"), &["ppm", "pgm"])?
        .iter()
        .map(|p| read_pnm(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let depth_files = sorted_files(&dir.join("depth"), &["depth"])?;
    let depths = if depth_files.is_empty() {
        None
    } else {
        if depth_files.len() != images.len() {
            bail!("{} images but {} depth maps", images.len(), depth_files.len());
        }
        Some(
            depth_files
                .iter()
                .map(|p| read_depth(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    for im in &images {
        if (im.width(), im.height()) != (intrinsics.width, intrinsics.height) {
            bail!("image size {}x{} disagrees with calib.txt", im.width(), im.height());
        }
    }
    let pose_path = dir.join("poses.txt");
    let poses = if pose_path.exists() {
        Some(read_trajectory(&pose_path)?)
    } else {
        None
    };
    if let Some(p) = &poses {
        if p.len() != images.len() {
            bail!("poses.txt has {} poses for {} images", p.len(), images.len());
        }
    }
    Ok(FrameSet {
        images,
        depths,
        intrinsics,
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_writes_replace_and_leave_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/report.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn missing_directories_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_frames(&dir.path().join("nope")).is_err());
        // A directory without calibration is not a frame set.
        assert!(read_frames(dir.path()).is_err());
    }
}
