//! Ray-cast renderer for textured planes and boxes. Gives exact depth and
//! poses for every other module to be checked against.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::eval::Trajectory;
use crate::geom::{Intrinsics, Point3, Pose};
use crate::image::{DepthMap, ImageBuf};

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Infinite plane through `point` with the given normal.
    Plane { point: Point3, normal: Vector3<f64> },
    /// Axis-aligned box.
    Cuboid { min: Point3, max: Point3 },
}

impl Primitive {
    /// Ray parameter of the nearest hit in front of the origin.
    fn intersect(&self, o: &Point3, d: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match self {
            Primitive::Plane { point, normal } => {
                let den = normal.dot(d);
                if den.abs() < 1e-12 {
                    return None;
                }
                let s = normal.dot(&(point - o)) / den;
                (s > EPS).then_some(s)
            }
            Primitive::Cuboid { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut lo, mut hi) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    t0 = t0.max(lo);
                    t1 = t1.min(hi);
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }
}

/// Band-limited solid texture: a sum of random-phase sinusoids over octaves.
#[derive(Clone, Debug, PartialEq)]
pub struct SolidTexture {
    /// `(wave vector, phase, amplitude)` per component, per channel.
    waves: Vec<Vec<(Vector3<f64>, f64, f64)>>,
}

impl SolidTexture {
    pub fn new(seed: u64, channels: usize, octaves: usize, base_frequency: f64, persistence: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..channels)
            .map(|_| {
                let mut comps = Vec::new();
                for o in 0..octaves {
                    let f = base_frequency * 2f64.powi(o as i32);
                    let a = persistence.powi(o as i32);
                    for _ in 0..3 {
                        // Uniform direction on the sphere.
                        let z: f64 = rng.random_range(-1.0..=1.0);
                        let phi = rng.random_range(0.0..TAU);
                        let r = (1.0 - z * z).sqrt();
                        let dir = Vector3::new(r * phi.cos(), r * phi.sin(), z);
                        comps.push((dir * f, rng.random_range(0.0..TAU), a));
                    }
                }
                comps
            })
            .collect();
        SolidTexture { waves }
    }

    /// Intensity in `[0.05, 0.95]`.
    pub fn value(&self, p: &Point3, channel: usize) -> f64 {
        let comps = &self.waves[channel];
        let norm: f64 = comps.iter().map(|c| c.2).sum();
        let s: f64 = comps.iter().map(|(k, ph, a)| a * (k.dot(p) + ph).sin()).sum();
        0.5 + 0.45 * s / norm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    /// Height of the camera path above the ground plane.
    pub camera_height: f64,
    pub texture_seed: u64,
    pub intrinsics: Intrinsics,
    pub channels: usize,
    /// Intensity and depth used where a ray hits nothing.
    pub sky: f64,
    pub max_depth: f64,
    pub octaves: usize,
    pub base_frequency: f64,
    pub persistence: f64,
    /// Subpixel rays per axis averaged into each pixel value. Depth always
    /// comes from the pixel-centre ray.
    pub samples: usize,
}

impl Default for SceneSpec {
    /// A closed room: ground 1.5 below the camera path, four walls and three boxes.
    fn default() -> Self {
        let plane = |p: [f64; 3], n: [f64; 3]| Primitive::Plane {
            point: Vector3::from(p),
            normal: Vector3::from(n),
        };
        let cuboid = |a: [f64; 3], b: [f64; 3]| Primitive::Cuboid {
            min: Vector3::from(a),
            max: Vector3::from(b),
        };
        SceneSpec {
            primitives: vec![
                plane([0.0, 1.5, 0.0], [0.0, -1.0, 0.0]),
                plane([10.0, 0.0, 0.0], [-1.0, 0.0, 0.0]),
                plane([-10.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
                plane([0.0, 0.0, 10.0], [0.0, 0.0, -1.0]),
                plane([0.0, 0.0, -10.0], [0.0, 0.0, 1.0]),
                cuboid([-1.2, -0.3, -1.2], [1.2, 1.5, 1.2]),
                cuboid([6.5, 0.2, -1.0], [8.0, 1.5, 1.5]),
                cuboid([-2.0, -0.5, -8.0], [-0.8, 1.5, -6.5]),
            ],
            camera_height: 1.5,
            texture_seed: 7,
            intrinsics: Intrinsics {
                fx: 50.0,
                fy: 50.0,
                cx: 47.5,
                cy: 31.5,
                width: 96,
                height: 64,
            },
            channels: 3,
            sky: 0.5,
            max_depth: 40.0,
            octaves: 4,
            base_frequency: 0.3,
            persistence: 0.5,
            samples: 3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(invalid("scene has no primitives"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(invalid("scene channels must be 1 or 3"));
        }
        if !(self.max_depth > 0.0) || !(0.0..=1.0).contains(&self.sky) {
            return Err(invalid("scene max_depth must be positive and sky in [0, 1]"));
        }
        if self.samples == 0 {
            return Err(invalid("samples must be at least 1"));
        }
        if self.octaves == 0 || !(self.base_frequency > 0.0) || !(self.persistence > 0.0) {
            return Err(invalid("texture parameters must be positive"));
        }
        for p in &self.primitives {
            match p {
                Primitive::Plane { normal, .. } if !(normal.norm() > 0.0) => {
                    return Err(invalid("plane normal must be non-zero"));
                }
                Primitive::Cuboid { min, max } if (0..3).any(|a| !(min[a] < max[a])) => {
                    return Err(invalid("box min must be below max on every axis"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// One solid texture shared by every surface, so creases between
    /// surfaces carry no intensity step.
    fn texture(&self) -> SolidTexture {
        SolidTexture::new(
            self.texture_seed,
            self.channels,
            self.octaves,
            self.base_frequency,
            self.persistence,
        )
    }

    /// Parses the plain-text scene format: one primitive per line
    /// (`plane px= py= pz= nx= ny= nz=` or `box minx= miny= minz= maxx= maxy= maxz=`)
    /// and `key=value` settings. `#` starts a comment.
    pub fn parse(text: &str) -> Result<SceneSpec> {
        let mut spec = SceneSpec {
            primitives: Vec::new(),
            ..SceneSpec::default()
        };
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace().peekable();
            let kind = match tokens.peek() {
                Some(&"plane") | Some(&"box") => tokens.next(),
                _ => None,
            };
            let mut kv = std::collections::BTreeMap::new();
            for tok in tokens {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got {tok}", ln + 1)))?;
                kv.insert(k.to_string(), v.to_string());
            }
            let num = |kv: &std::collections::BTreeMap<String, String>, k: &str| -> Result<f64> {
                kv.get(k)
                    .ok_or_else(|| Error::Parse(format!("line {}: missing {k}", ln + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {k}: {e}", ln + 1)))
            };
            let v3 =
                |kv: &std::collections::BTreeMap<String, String>, a: &str, b: &str, c: &str| -> Result<Vector3<f64>> {
                    Ok(Vector3::new(num(kv, a)?, num(kv, b)?, num(kv, c)?))
                };
            match kind {
                Some("plane") => spec.primitives.push(Primitive::Plane {
                    point: v3(&kv, "px", "py", "pz")?,
                    normal: v3(&kv, "nx", "ny", "nz")?,
                }),
                Some("box") => spec.primitives.push(Primitive::Cuboid {
                    min: v3(&kv, "minx", "miny", "minz")?,
                    max: v3(&kv, "maxx", "maxy", "maxz")?,
                }),
                _ => {
                    for (k, v) in &kv {
                        let f = || {
                            v.parse::<f64>()
                                .map_err(|e| Error::Parse(format!("line {}: {k}: {e}", ln + 1)))
                        };
                        let u = || {
                            v.parse::<usize>()
                                .map_err(|e| Error::Parse(format!("line {}: {k}: {e}", ln + 1)))
                        };
                        match k.as_str() {
                            "fx" => spec.intrinsics.fx = f()?,
                            "fy" => spec.intrinsics.fy = f()?,
                            "cx" => spec.intrinsics.cx = f()?,
                            "cy" => spec.intrinsics.cy = f()?,
                            "width" => spec.intrinsics.width = u()?,
                            "height" => spec.intrinsics.height = u()?,
                            "channels" => spec.channels = u()?,
                            "camera_height" => spec.camera_height = f()?,
                            "texture_seed" => {
                                spec.texture_seed = v.parse().map_err(|e| Error::Parse(format!("texture_seed: {e}")))?
                            }
                            "sky" => spec.sky = f()?,
                            "max_depth" => spec.max_depth = f()?,
                            "octaves" => spec.octaves = u()?,
                            "base_frequency" => spec.base_frequency = f()?,
                            "persistence" => spec.persistence = f()?,
                            "samples" => spec.samples = u()?,
                            other => return Err(Error::Parse(format!("line {}: unknown key {other}", ln + 1))),
                        }
                    }
                }
            }
        }
        let k = spec.intrinsics;
        spec.intrinsics = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let mut out = format!(
            "fx={} fy={} cx={} cy={} width={} height={}\nchannels={}\ncamera_height={}\ntexture_seed={}\nsky={}\nmax_depth={}\noctaves={} base_frequency={} persistence={}\nsamples={}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height, self.channels, self.camera_height, self.texture_seed,
            self.sky, self.max_depth, self.octaves, self.base_frequency, self.persistence, self.samples
        );
        for p in &self.primitives {
            match p {
                Primitive::Plane { point: a, normal: n } => out.push_str(&format!(
                    "plane px={} py={} pz={} nx={} ny={} nz={}\n",
                    a.x, a.y, a.z, n.x, n.y, n.z
                )),
                Primitive::Cuboid { min: a, max: b } => out.push_str(&format!(
                    "box minx={} miny={} minz={} maxx={} maxy={} maxz={}\n",
                    a.x, a.y, a.z, b.x, b.y, b.z
                )),
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub image: ImageBuf,
    pub depth: DepthMap,
    /// World-to-camera pose.
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    /// Pixels whose ray hit nothing.
    pub sky: Vec<bool>,
}

/// Renders the scene from a world-to-camera `pose`.
pub fn render(spec: &SceneSpec, pose: &Pose, k: &Intrinsics) -> Result<RenderedFrame> {
    spec.validate()?;
    let texture = spec.texture();
    let cam = pose.inverse();
    let (w, h, ch) = (k.width, k.height, spec.channels);
    let o = cam.translation;
    let cast = |u: f64, v: f64| {
        // The camera ray has unit z, so the ray parameter is the depth.
        let d = cam.rotation * k.ray(u, v);
        spec.primitives
            .iter()
            .filter_map(|p| p.intersect(&o, &d))
            .min_by(f64::total_cmp)
            .filter(|s| *s <= spec.max_depth)
            .map(|s| (s, o + d * s))
    };
    let ns = spec.samples;
    let offsets: Vec<f64> = (0..ns).map(|i| (i as f64 + 0.5) / ns as f64 - 0.5).collect();
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut vals = vec![0.0; w * ch];
            let mut depth = vec![0.0; w];
            let mut sky = vec![false; w];
            for x in 0..w {
                match cast(x as f64, y as f64) {
                    Some((s, _)) => depth[x] = s,
                    None => {
                        depth[x] = spec.max_depth;
                        sky[x] = true;
                    }
                }
                for dy in &offsets {
                    for dx in &offsets {
                        let hit = cast(x as f64 + dx, y as f64 + dy);
                        for c in 0..ch {
                            vals[c * w + x] += match &hit {
                                Some((_, p)) => texture.value(p, c),
                                None => spec.sky,
                            };
                        }
                    }
                }
                for c in 0..ch {
                    vals[c * w + x] /= (ns * ns) as f64;
                }
            }
            (vals, depth, sky)
        })
        .collect();
    let n = w * h;
    let mut data = vec![0.0; n * ch];
    let mut depth = Vec::with_capacity(n);
    let mut sky = Vec::with_capacity(n);
    for (y, (vals, d, s)) in rows.into_iter().enumerate() {
        for c in 0..ch {
            data[c * n + y * w..c * n + (y + 1) * w].copy_from_slice(&vals[c * w..(c + 1) * w]);
        }
        depth.extend(d);
        sky.extend(s);
    }
    Ok(RenderedFrame {
        image: ImageBuf::new(w, h, ch, data)?,
        depth: DepthMap::new(w, h, depth)?,
        pose: *pose,
        intrinsics: *k,
        sky,
    })
}

/// Renders every `stride`-th pose of a camera-to-world trajectory.
pub fn make_sequence(spec: &SceneSpec, traj: &Trajectory, k: &Intrinsics, stride: usize) -> Result<Vec<RenderedFrame>> {
    if traj.is_empty() {
        return Err(invalid("cannot render an empty trajectory"));
    }
    let sub = traj.subsample(stride)?;
    sub.poses().par_iter().map(|c| render(spec, &c.inverse(), k)).collect()
}

/// Camera-to-world poses on a horizontal circle of `radius` around the
/// origin, looking along the direction of travel, `step` units apart.
pub fn circular_trajectory(radius: f64, step: f64, frames: usize) -> Trajectory {
    let poses = (0..frames)
        .map(|i| {
            let theta = i as f64 * step / radius;
            Pose {
                rotation: Pose::yaw(theta).rotation,
                translation: Vector3::new(-radius * theta.cos(), 0.0, radius * theta.sin()),
            }
        })
        .collect();
    Trajectory::new(poses)
}

/// Straight forward motion from `start`.
pub fn straight_trajectory(start: Vector3<f64>, step: Vector3<f64>, frames: usize) -> Trajectory {
    Trajectory::new(
        (0..frames)
            .map(|i| Pose::from_translation(start + step * i as f64))
            .collect(),
    )
}

/// Multiplies `depth` by a smooth random field `1 + amplitude·n(x, y)` with
/// `n` spanning exactly `[-1, 1]`.
pub fn corrupt_depth(depth: &DepthMap, amplitude: f64, seed: u64) -> Result<DepthMap> {
    if !(0.0..1.0).contains(&amplitude) {
        return Err(invalid("corruption amplitude must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (depth.width(), depth.height());
    let scale = w.max(h) as f64;
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = rng.random::<f64>() * TAU;
            let freq = (1.0 + 2.0 * rng.random::<f64>()) * TAU / scale;
            (freq * angle.cos(), freq * angle.sin(), rng.random::<f64>() * TAU)
        })
        .collect();
    let field: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            waves.iter().map(|(a, b, p)| (a * x + b * y + p).sin()).sum()
        })
        .collect();
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), v| (l.min(*v), u.max(*v)));
    let span = (hi - lo).max(1e-12);
    let data = depth
        .data()
        .iter()
        .zip(&field)
        .map(|(d, f)| d * (1.0 + amplitude * (2.0 * (f - lo) / span - 1.0)))
        .collect();
    DepthMap::new(w, h, data)
}

/// The default evaluation sequence: a 50-frame loop inside the default room.
pub fn default_sequence() -> (SceneSpec, Trajectory) {
    (SceneSpec::default(), circular_trajectory(5.0, 0.3, 50))
}
