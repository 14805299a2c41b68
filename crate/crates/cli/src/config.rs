//! Run configuration: a plain-text file of dotted `section.key = value`
//! entries (TOML syntax), overridden by command-line flags and echoed back
//! fully resolved into every output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use toml::Value;

use tightsfm_core::egomotion::EstimatorConfig;
use tightsfm_core::eval::{ExperimentConfig, DEFAULT_LENGTHS};
use tightsfm_core::optim::PftConfig;
use tightsfm_core::synth::{Primitive, SceneSpec};
use tightsfm_core::{Intrinsics, LossWeights, MaskConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSection {
    pub frames: usize,
    pub radius: f64,
    pub step: f64,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSection {
    pub iterations: usize,
    pub depth_scale: f64,
    pub noise: f64,
    /// Known camera height; enables ground-plane rescaling when set.
    pub camera_height: Option<f64>,
    pub scale_window: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeSection {
    pub corruption: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// Only the first `max_frames` frames are refined (0 = all).
    pub max_frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub lengths: Vec<f64>,
    pub align: bool,
    pub median_scale: bool,
    pub clamp: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSection {
    pub frames: usize,
    pub noise: f64,
    pub cfg: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub weights: LossWeights,
    pub masks: MaskConfig,
    pub estimator: EstimatorConfig,
    pub pft: PftConfig,
    pub synth: SynthSection,
    pub estimate: EstimateSection,
    pub optimize: OptimizeSection,
    pub eval: EvalSection,
    pub experiment: ExperimentSection,
    pub traces: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            weights: LossWeights::default(),
            masks: MaskConfig::default(),
            estimator: EstimatorConfig::default(),
            pft: PftConfig::default(),
            synth: SynthSection {
                frames: 50,
                radius: 5.0,
                step: 0.3,
                stride: 1,
            },
            estimate: EstimateSection {
                iterations: 4,
                depth_scale: 1.0,
                noise: 0.0,
                camera_height: None,
                scale_window: 5,
            },
            optimize: OptimizeSection {
                corruption: 0.3,
                d_min: 0.5,
                d_max: 50.0,
                max_frames: 0,
            },
            eval: EvalSection {
                lengths: DEFAULT_LENGTHS.to_vec(),
                align: false,
                median_scale: true,
                clamp: [1e-3, 80.0],
            },
            experiment: ExperimentSection {
                frames: 50,
                noise: 0.0,
                cfg: ExperimentConfig::default(),
            },
            traces: true,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub epochs: Option<usize>,
}

trait Visitor {
    fn f64(&mut self, key: &str, v: &mut f64) -> Result<()>;
    fn u64(&mut self, key: &str, v: &mut u64) -> Result<()>;
    fn bool(&mut self, key: &str, v: &mut bool) -> Result<()>;
    fn f64_list(&mut self, key: &str, v: &mut Vec<f64>) -> Result<()>;
    fn opt_f64(&mut self, key: &str, v: &mut Option<f64>) -> Result<()>;

    fn usize(&mut self, key: &str, v: &mut usize) -> Result<()> {
        let mut w = *v as u64;
        self.u64(key, &mut w)?;
        *v = usize::try_from(w)?;
        Ok(())
    }

    fn usize_list(&mut self, key: &str, v: &mut Vec<usize>) -> Result<()> {
        let mut w: Vec<f64> = v.iter().map(|x| *x as f64).collect();
        self.f64_list(key, &mut w)?;
        *v = w
            .iter()
            .map(|x| {
                if x.fract() != 0.0 || *x < 0.0 {
                    bail!("{key}: {x} is not a non-negative integer");
                }
                Ok(*x as usize)
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn opt_usize(&mut self, key: &str, v: &mut Option<usize>) -> Result<()> {
        let mut w = v.map(|x| x as f64);
        self.opt_f64(key, &mut w)?;
        *v = match w {
            Some(x) if x.fract() != 0.0 || x < 0.0 => bail!("{key}: {x} is not a non-negative integer"),
            Some(x) => Some(x as usize),
            None => None,
        };
        Ok(())
    }
}

impl RunConfig {
    fn visit(&mut self, v: &mut dyn Visitor) -> Result<()> {
        v.u64("seed", &mut self.seed)?;
        v.bool("output.traces", &mut self.traces)?;

        let w = &mut self.weights;
        v.f64("loss.alpha", &mut w.alpha)?;
        v.f64("loss.photo", &mut w.photo)?;
        v.f64("loss.smooth", &mut w.smooth)?;
        v.f64("loss.gc", &mut w.gc)?;
        v.f64("loss.prior", &mut w.prior)?;

        let m = &mut self.masks;
        v.bool("masks.automask", &mut m.use_automask)?;
        v.bool("masks.min_reprojection", &mut m.use_min_reprojection)?;
        v.bool("masks.self_discovered", &mut m.use_self_discovered)?;

        let e = &mut self.estimator;
        v.usize("estimator.max_inner_steps", &mut e.max_inner_steps)?;
        v.f64("estimator.step_tolerance", &mut e.step_tolerance)?;
        v.f64("estimator.damping_init", &mut e.damping_init)?;
        v.f64("estimator.damping_min", &mut e.damping_bounds[0])?;
        v.f64("estimator.damping_max", &mut e.damping_bounds[1])?;
        v.f64("estimator.robust_scale", &mut e.robust_scale)?;
        v.f64("estimator.edge_threshold", &mut e.edge_threshold)?;
        v.usize("estimator.edge_radius", &mut e.edge_radius)?;
        v.f64("estimator.alpha", &mut e.alpha)?;
        v.f64("estimator.blur_sigma", &mut e.blur_sigma)?;

        let s = &mut self.synth;
        v.usize("synth.frames", &mut s.frames)?;
        v.f64("synth.radius", &mut s.radius)?;
        v.f64("synth.step", &mut s.step)?;
        v.usize("synth.stride", &mut s.stride)?;

        let s = &mut self.estimate;
        v.usize("estimate.iterations", &mut s.iterations)?;
        v.f64("estimate.depth_scale", &mut s.depth_scale)?;
        v.f64("estimate.noise", &mut s.noise)?;
        v.opt_f64("estimate.camera_height", &mut s.camera_height)?;
        v.usize("estimate.scale_window", &mut s.scale_window)?;

        let p = &mut self.pft;
        v.usize("optimize.epochs", &mut p.epochs)?;
        v.usize("optimize.average_last", &mut p.average_last)?;
        v.f64("optimize.lambda_prior", &mut p.lambda_prior)?;
        v.bool("optimize.recompute_egomotion", &mut p.recompute_egomotion_each_epoch)?;
        v.usize("optimize.egomotion_iterations", &mut p.egomotion_iterations)?;
        v.f64("optimize.lr", &mut p.lr)?;
        v.usize("optimize.minibatch", &mut p.minibatch)?;
        v.opt_f64("optimize.camera_height", &mut p.camera_height)?;
        let o = &mut self.optimize;
        v.f64("optimize.corruption", &mut o.corruption)?;
        v.f64("optimize.d_min", &mut o.d_min)?;
        v.f64("optimize.d_max", &mut o.d_max)?;
        v.usize("optimize.max_frames", &mut o.max_frames)?;

        let ev = &mut self.eval;
        v.f64_list("eval.lengths", &mut ev.lengths)?;
        v.bool("eval.align", &mut ev.align)?;
        v.bool("eval.median_scale", &mut ev.median_scale)?;
        v.f64("eval.clamp_min", &mut ev.clamp[0])?;
        v.f64("eval.clamp_max", &mut ev.clamp[1])?;

        let x = &mut self.experiment;
        v.usize("experiment.frames", &mut x.frames)?;
        v.f64("experiment.noise", &mut x.noise)?;
        let c = &mut x.cfg;
        v.usize_list("experiment.iterations", &mut c.iterations)?;
        v.f64_list("experiment.lengths", &mut c.lengths)?;
        v.bool("experiment.align", &mut c.align)?;
        v.f64_list("experiment.translation_ranges", &mut c.translation_ranges)?;
        v.f64_list("experiment.yaw_ranges_deg", &mut c.yaw_ranges_deg)?;
        v.usize("experiment.extra_iterations", &mut c.extra_iterations)?;
        v.f64_list("experiment.depth_scales", &mut c.depth_scales)?;
        v.usize_list("experiment.strides", &mut c.strides)?;
        v.usize("experiment.curve_pair", &mut c.curve_pair)?;
        v.opt_usize("experiment.curve_points", &mut c.curve_points)?;
        Ok(())
    }

    /// Defaults, then the file (if any), then flag overrides.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            cfg = RunConfig::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(n) = overrides.iterations {
            cfg.estimate.iterations = n;
            cfg.experiment.cfg.iterations = (1..=n).collect();
        }
        if let Some(n) = overrides.epochs {
            cfg.pft.epochs = n;
            cfg.pft.average_last = cfg.pft.average_last.min(n.max(1));
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let table: toml::Table = text.parse()?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut cfg = RunConfig::default();
        let mut reader = Reader { values: flat };
        cfg.visit(&mut reader)?;
        if let Some(k) = reader.values.keys().next() {
            bail!("unknown config key '{k}'");
        }
        cfg.sync();
        Ok(cfg)
    }

    /// Copies the shared sections into the module configs that embed them.
    fn sync(&mut self) {
        self.pft.masks = self.masks;
        self.experiment.cfg.estimator = self.estimator;
        self.experiment.cfg.weights = self.weights;
        self.experiment.cfg.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.estimator.validate()?;
        self.pft.validate()?;
        self.experiment.cfg.validate()?;
        if self.estimate.iterations == 0 {
            bail!("estimate.iterations must be at least 1");
        }
        if !(self.estimate.depth_scale > 0.0) || !(self.estimate.noise >= 0.0) || !(self.experiment.noise >= 0.0) {
            bail!("depth scale must be positive and noise levels non-negative");
        }
        if self.synth.stride == 0 {
            bail!("synth.stride must be at least 1");
        }
        let o = &self.optimize;
        if !(0.0..1.0).contains(&o.corruption) || !(o.d_min > 0.0 && o.d_min < o.d_max) {
            bail!("optimize.corruption must be in [0, 1) and 0 < d_min < d_max");
        }
        if self.eval.lengths.iter().any(|l| !(*l > 0.0)) {
            bail!("eval.lengths must be positive");
        }
        Ok(())
    }

    /// Every effective value, one `key = value` line each.
    pub fn resolved(&self) -> String {
        let mut w = Writer { out: String::new() };
        self.clone().visit(&mut w).expect("printing cannot fail");
        w.out
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn number(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => bail!("{key}: expected a number, found {other}"),
    }
}

struct Reader {
    values: BTreeMap<String, Value>,
}

impl Visitor for Reader {
    fn f64(&mut self, key: &str, v: &mut f64) -> Result<()> {
        if let Some(x) = self.values.remove(key) {
            *v = number(key, &x)?;
        }
        Ok(())
    }

    fn u64(&mut self, key: &str, v: &mut u64) -> Result<()> {
        match self.values.remove(key) {
            Some(Value::Integer(i)) if i >= 0 => *v = i as u64,
            Some(other) => bail!("{key}: expected a non-negative integer, found {other}"),
            None => {}
        }
        Ok(())
    }

    fn bool(&mut self, key: &str, v: &mut bool) -> Result<()> {
        match self.values.remove(key) {
            Some(Value::Boolean(b)) => *v = b,
            Some(other) => bail!("{key}: expected true or false, found {other}"),
            None => {}
        }
        Ok(())
    }

    fn f64_list(&mut self, key: &str, v: &mut Vec<f64>) -> Result<()> {
        match self.values.remove(key) {
            Some(Value::Array(a)) => *v = a.iter().map(|x| number(key, x)).collect::<Result<_>>()?,
            Some(other) => bail!("{key}: expected an array, found {other}"),
            None => {}
        }
        Ok(())
    }

    fn opt_f64(&mut self, key: &str, v: &mut Option<f64>) -> Result<()> {
        if let Some(x) = self.values.remove(key) {
            *v = Some(number(key, &x)?);
        }
        Ok(())
    }
}

struct Writer {
    out: String,
}

impl Writer {
    fn line(&mut self, key: &str, v: Value) {
        let _ = writeln!(self.out, "{key} = {v}");
    }
}

impl Visitor for Writer {
    fn f64(&mut self, key: &str, v: &mut f64) -> Result<()> {
        self.line(key, Value::Float(*v));
        Ok(())
    }

    fn u64(&mut self, key: &str, v: &mut u64) -> Result<()> {
        self.line(key, Value::Integer(*v as i64));
        Ok(())
    }

    fn bool(&mut self, key: &str, v: &mut bool) -> Result<()> {
        self.line(key, Value::Boolean(*v));
        Ok(())
    }

    fn f64_list(&mut self, key: &str, v: &mut Vec<f64>) -> Result<()> {
        self.line(key, Value::Array(v.iter().map(|x| Value::Float(*x)).collect()));
        Ok(())
    }

    fn usize_list(&mut self, key: &str, v: &mut Vec<usize>) -> Result<()> {
        self.line(key, Value::Array(v.iter().map(|x| Value::Integer(*x as i64)).collect()));
        Ok(())
    }

    fn opt_f64(&mut self, key: &str, v: &mut Option<f64>) -> Result<()> {
        match v {
            Some(x) => self.line(key, Value::Float(*x)),
            None => {
                let _ = writeln!(self.out, "# {key} unset");
            }
        }
        Ok(())
    }

    fn opt_usize(&mut self, key: &str, v: &mut Option<usize>) -> Result<()> {
        match v {
            Some(x) => self.line(key, Value::Integer(*x as i64)),
            None => {
                let _ = writeln!(self.out, "# {key} unset");
            }
        }
        Ok(())
    }
}

fn vec3(key: &str, v: Option<&Value>) -> Result<nalgebra::Vector3<f64>> {
    match v {
        Some(Value::Array(a)) if a.len() == 3 => Ok(nalgebra::Vector3::new(
            number(key, &a[0])?,
            number(key, &a[1])?,
            number(key, &a[2])?,
        )),
        _ => bail!("{key}: expected a 3-element array"),
    }
}

/// Scene file: scalar render settings plus optional `[[plane]]`
/// (`point`, `normal`) and `[[cuboid]]` (`min`, `max`) entries, which
/// replace the default room when present. The texture seed comes from the
/// run seed.
pub fn parse_scene(text: &str, seed: u64) -> Result<SceneSpec> {
    let mut table: toml::Table = text.parse()?;
    let mut spec = SceneSpec {
        texture_seed: seed,
        ..SceneSpec::default()
    };
    let mut prims = Vec::new();
    for (kind, list) in [("plane", table.remove("plane")), ("cuboid", table.remove("cuboid"))] {
        let Some(list) = list else { continue };
        let Value::Array(items) = list else {
            bail!("'{kind}' must be an array of tables")
        };
        for item in items {
            let Value::Table(t) = item else {
                bail!("'{kind}' entries must be tables")
            };
            prims.push(match kind {
                "plane" => Primitive::Plane {
                    point: vec3("plane.point", t.get("point"))?,
                    normal: vec3("plane.normal", t.get("normal"))?,
                },
                _ => Primitive::Cuboid {
                    min: vec3("cuboid.min", t.get("min"))?,
                    max: vec3("cuboid.max", t.get("max"))?,
                },
            });
        }
    }
    if !prims.is_empty() {
        spec.primitives = prims;
    }
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);
    let mut r = Reader { values: flat };
    let k = &mut spec.intrinsics;
    let (mut width, mut height) = (k.width, k.height);
    r.f64("fx", &mut k.fx)?;
    r.f64("fy", &mut k.fy)?;
    r.f64("cx", &mut k.cx)?;
    r.f64("cy", &mut k.cy)?;
    r.usize("width", &mut width)?;
    r.usize("height", &mut height)?;
    spec.intrinsics = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, width, height)?;
    r.usize("channels", &mut spec.channels)?;
    r.f64("camera_height", &mut spec.camera_height)?;
    r.f64("sky", &mut spec.sky)?;
    r.f64("max_depth", &mut spec.max_depth)?;
    r.usize("octaves", &mut spec.octaves)?;
    r.f64("base_frequency", &mut spec.base_frequency)?;
    r.f64("persistence", &mut spec.persistence)?;
    r.usize("samples", &mut spec.samples)?;
    if let Some(k) = r.values.keys().next() {
        bail!("unknown scene key '{k}'");
    }
    Ok(spec)
}

pub fn scene_to_text(spec: &SceneSpec) -> String {
    let k = &spec.intrinsics;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "width = {}\nheight = {}\nfx = {:?}\nfy = {:?}\ncx = {:?}\ncy = {:?}",
        k.width, k.height, k.fx, k.fy, k.cx, k.cy
    );
    let _ = writeln!(
        out,
        "channels = {}\ncamera_height = {:?}\nsky = {:?}\nmax_depth = {:?}\noctaves = {}\nbase_frequency = {:?}\npersistence = {:?}\nsamples = {}",
        spec.channels, spec.camera_height, spec.sky, spec.max_depth, spec.octaves, spec.base_frequency, spec.persistence, spec.samples
    );
    let arr = |v: &nalgebra::Vector3<f64>| format!("[{:?}, {:?}, {:?}]", v.x, v.y, v.z);
    for p in &spec.primitives {
        match p {
            Primitive::Plane { point, normal } => {
                let _ = writeln!(out, "\n[[plane]]\npoint = {}\nnormal = {}", arr(point), arr(normal));
            }
            Primitive::Cuboid { min, max } => {
                let _ = writeln!(out, "\n[[cuboid]]\nmin = {}\nmax = {}", arr(min), arr(max));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = RunConfig {
            seed: 42,
            ..Default::default()
        };
        cfg.estimate.camera_height = Some(1.5);
        cfg.experiment.cfg.curve_points = Some(9);
        cfg.eval.lengths = vec![0.5, 1.0];
        cfg.sync();
        let back = RunConfig::parse(&cfg.resolved()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.resolved(), cfg.resolved());
    }

    #[test]
    fn sections_and_dotted_keys_are_equivalent() {
        let a = RunConfig::parse("loss.alpha = 0.5\nestimate.iterations = 2\n").unwrap();
        let b = RunConfig::parse("[loss]\nalpha = 0.5\n[estimate]\niterations = 2\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights.alpha, 0.5);
        assert_eq!(a.estimate.iterations, 2);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_errors() {
        assert!(RunConfig::parse("loss.alpah = 0.5").is_err());
        assert!(RunConfig::parse("estimate.iterations = 1.5").is_err());
        assert!(RunConfig::parse("masks.automask = 1").is_err());
        assert!(RunConfig::parse("experiment.strides = [1, 2.5]").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\noptimize.epochs = 10\n").unwrap();
        let o = Overrides {
            seed: Some(9),
            iterations: Some(3),
            epochs: Some(2),
        };
        let cfg = RunConfig::load(Some(&path), &o).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.experiment.cfg.seed, 9);
        assert_eq!(cfg.estimate.iterations, 3);
        assert_eq!(cfg.experiment.cfg.iterations, vec![1, 2, 3]);
        assert_eq!((cfg.pft.epochs, cfg.pft.average_last), (2, 2));
        assert!(RunConfig::load(Some(&dir.path().join("missing.toml")), &Overrides::default()).is_err());
    }

    #[test]
    fn scene_files_round_trip() {
        let spec = parse_scene(
            "width = 48\nheight = 32\ncx = 23.5\ncy = 15.5\n[[plane]]\npoint = [0, 1.5, 0]\nnormal = [0, -1, 0]\n",
            4,
        )
        .unwrap();
        assert_eq!(spec.primitives.len(), 1);
        assert_eq!(spec.texture_seed, 4);
        assert_eq!(parse_scene(&scene_to_text(&spec), 4).unwrap(), spec);
        assert_eq!(parse_scene("", 7).unwrap(), SceneSpec::default());
        assert!(parse_scene("colour = 3", 0).is_err());
    }
}
