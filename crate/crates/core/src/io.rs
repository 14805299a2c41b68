//! Binary PGM/PPM images and the raw planar float format used for depth maps
//! and parameter checkpoints.
//!
//! Raw float layout: 16-byte header (`b"RFLT"`, then width, height, channels as
//! little-endian `u32`), followed by `width * height * channels` little-endian
//! `f32` values, one plane after another.

use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::image::{DepthMap, ImageBuf};

pub const RAW_MAGIC: &[u8; 4] = b"RFLT";

/// A planar float grid as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

pub fn encode_raw(grid: &RawGrid) -> Result<Vec<u8>> {
    if grid.data.len() != grid.width * grid.height * grid.channels {
        return Err(invalid("raw grid data length does not match its shape"));
    }
    let mut out = Vec::with_capacity(16 + grid.data.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    for dim in [grid.width, grid.height, grid.channels] {
        let d = u32::try_from(dim).map_err(|_| invalid("raw grid dimension overflows u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &grid.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8]) -> Result<RawGrid> {
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::Parse("missing RFLT header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (width, height, channels) = (dim(4), dim(8), dim(12));
    let count = width * height * channels;
    if bytes.len() != 16 + count * 4 {
        return Err(Error::Parse(format!(
            "RFLT payload is {} bytes, expected {}",
            bytes.len() - 16,
            count * 4
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(RawGrid {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode_depth(depth: &DepthMap) -> Result<Vec<u8>> {
    encode_raw(&RawGrid {
        width: depth.width(),
        height: depth.height(),
        channels: 1,
        data: depth.data().to_vec(),
    })
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let g = decode_raw(bytes)?;
    if g.channels != 1 {
        return Err(Error::Parse(format!("depth file has {} channels", g.channels)));
    }
    DepthMap::new(g.width, g.height, g.data)
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    decode_depth(&fs::read(path)?)
}

/// Binary PGM (1 channel) or PPM (3 channels), maxval 255.
pub fn encode_pnm(img: &ImageBuf) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    let n = img.num_pixels();
    out.reserve(n * img.channels());
    for i in 0..n {
        for c in 0..img.channels() {
            let v = img.data()[c * n + i];
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuf> {
    let mut pos = 0;
    let mut next_token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PNM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = next_token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Parse(format!("unsupported PNM magic {other}"))),
    };
    let parse = |s: String| s.parse::<usize>().map_err(|e| Error::Parse(format!("PNM header: {e}")));
    let width = parse(next_token()?)?;
    let height = parse(next_token()?)?;
    let maxval = parse(next_token()?)?;
    if maxval != 255 {
        return Err(Error::Parse(format!("PNM maxval {maxval} unsupported")));
    }
    let payload = &bytes[pos + 1..];
    let n = width * height;
    if payload.len() != n * channels {
        return Err(Error::Parse(format!(
            "PNM payload is {} bytes, expected {}",
            payload.len(),
            n * channels
        )));
    }
    let mut data = vec![0.0; n * channels];
    for i in 0..n {
        for c in 0..channels {
            data[c * n + i] = payload[i * channels + c] as f64 / 255.0;
        }
    }
    ImageBuf::new(width, height, channels, data)
}

pub fn read_pnm(path: &Path) -> Result<ImageBuf> {
    decode_pnm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode_raw(&RawGrid {
            width: 3,
            height: 2,
            channels: 1,
            data: vec![1.0; 6],
        })
        .unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..4], b"RFLT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert!(decode_raw(&bytes[..20]).is_err());
        assert!(decode_raw(b"NOPE0000000000000000").is_err());
    }

    #[test]
    fn pnm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
        assert!(decode_pnm(b"P3\n1 1\n255\n0").is_err());
    }

    proptest! {
        #[test]
        fn pnm_round_trip(w in 1usize..6, h in 1usize..6, gray in any::<bool>(), seed in any::<u64>()) {
            let ch = if gray { 1 } else { 3 };
            let img = ImageBuf::from_fn(w, h, ch, |x, y, c| {
                ((x * 31 + y * 17 + c * 7) as u64 ^ seed) as u8 as f64 / 255.0
            }).unwrap();
            prop_assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
        }

        #[test]
        fn raw_round_trip(vals in prop::collection::vec(-1e6f32..1e6f32, 12)) {
            let grid = RawGrid { width: 2, height: 3, channels: 2, data: vals.iter().map(|v| *v as f64).collect() };
            prop_assert_eq!(decode_raw(&encode_raw(&grid).unwrap()).unwrap(), grid);
        }
    }
}
