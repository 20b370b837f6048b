//! Flat `key = value` experiment files.
//!
//! Blank lines and `#` comments are ignored. Every key is optional except
//! `target`. Angles are given in degrees.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use snca_core::loss::{LossConfig, Regime};
use snca_core::model::{ModelConfig, Variant};
use snca_core::seeding::{SeedMode, SeedSpec};
use snca_core::target::AuxKind;
use snca_core::train::TrainConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

/// Where the target image comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSource {
    /// A procedurally drawn pattern, written `builtin:<name>`.
    Builtin(String),
    Png(PathBuf),
}

impl TargetSource {
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("builtin:") {
            Some(name) => TargetSource::Builtin(name.to_string()),
            None => TargetSource::Png(PathBuf::from(s)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TargetSource::Builtin(n) => format!("builtin:{n}"),
            TargetSource::Png(p) => p.display().to_string(),
        }
    }

    /// Resolves a relative PNG path against `dir`.
    pub fn relative_to(&self, dir: &Path) -> Self {
        match self {
            TargetSource::Png(p) if p.is_relative() => TargetSource::Png(dir.join(p)),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub target: TargetSource,
    /// Zero border added around the loaded target.
    pub target_pad: usize,
    pub aux: AuxKind,
    /// Seed position; the grid centre when absent.
    pub seed_center: Option<(f64, f64)>,
    /// Seed pair direction and initial steering value as written, in degrees.
    pub seed_orientation_deg: f64,
    pub seed_angle_deg: f64,
    pub output_dir: PathBuf,
    pub gif_steps: usize,
    pub gif_stride: usize,
    pub render_scale: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            target: TargetSource::Builtin("toy".into()),
            target_pad: 4,
            aux: AuxKind::None,
            seed_center: None,
            seed_orientation_deg: 0.0,
            seed_angle_deg: 0.0,
            output_dir: PathBuf::from("out"),
            gif_steps: 200,
            gif_stride: 4,
            render_scale: 4,
        }
    }
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

impl RunConfig {
    /// Serializes every field in a fixed order; [`RunConfig::parse`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("target", self.target.describe());
        kv("target_pad", self.target_pad.to_string());
        kv("aux", self.aux.name().into());
        kv("variant", m.variant.name().into());
        kv("channels", m.channels.to_string());
        kv("hidden", m.hidden.to_string());
        kv("steering_channel", m.steering_channel.to_string());
        kv("p_upd", format!("{:?}", m.p_upd));
        kv("alive_threshold", format!("{:?}", m.alive_threshold));
        kv("use_laplacian", fmt_bool(m.use_laplacian).into());
        kv("regime", t.regime.name().into());
        kv("sharpen", format!("{:?}", t.loss.sharpen));
        kv("lambda_binary", format!("{:?}", t.loss.lambda_binary));
        kv("lambda_radial", format!("{:?}", t.loss.lambda_radial));
        kv("a_bins", t.a_bins.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("pool_size", t.pool_size.to_string());
        kv("rollout_min", t.rollout_min.to_string());
        kv("rollout_max", t.rollout_max.to_string());
        kv("learning_rate", format!("{:?}", t.learning_rate));
        kv("lr_decay_at", format!("{:?}", t.lr_decay_at));
        kv("total_steps", t.total_steps.to_string());
        kv("grad_norm", fmt_bool(t.grad_norm).into());
        kv("damage", fmt_bool(t.damage).into());
        kv("rng_seed", t.rng_seed.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("seed_separation", format!("{:?}", t.seed.separation));
        kv("seed_orientation", format!("{:?}", self.seed_orientation_deg));
        kv("seed_angle", format!("{:?}", self.seed_angle_deg));
        kv("random_seed_angle", fmt_bool(t.random_seed_angle).into());
        kv("hue_a", format!("{:?}", t.seed.hue_a));
        kv("hue_b", format!("{:?}", t.seed.hue_b));
        if let Some((r, c)) = self.seed_center {
            kv("seed_row", format!("{r:?}"));
            kv("seed_col", format!("{c:?}"));
        }
        kv("output_dir", self.output_dir.display().to_string());
        kv("gif_steps", self.gif_steps.to_string());
        kv("gif_stride", self.gif_stride.to_string());
        kv("render_scale", self.render_scale.to_string());
        s
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            cfg.target = cfg.target.relative_to(dir);
        }
        Ok(cfg)
    }

    /// Parses config text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let err = |line: usize, message: String| ConfigError::Line {
            path: origin.to_string(),
            line,
            message,
        };
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(err(n, format!("expected `key = value`, got `{line}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(err(n, format!("unknown key `{k}`")));
            }
            if v.is_empty() {
                return Err(err(n, format!("missing value for `{k}`")));
            }
            if let Some((first, _)) = entries.insert(k.to_string(), (n, v.to_string())) {
                return Err(err(n, format!("duplicate key `{k}` (first set on line {first})")));
            }
        }

        let mut get = Getter { entries: &entries, err: &err };
        let mut cfg = RunConfig::default();
        let Some((_, target)) = entries.get("target") else {
            return Err(ConfigError::File {
                path: origin.to_string(),
                message: "missing required key `target`".into(),
            });
        };
        cfg.target = TargetSource::parse(target);
        get.num("target_pad", &mut cfg.target_pad)?;
        get.with("aux", &mut cfg.aux, |s| AuxKind::parse(s).ok_or("expected none, binary or binary+radial"))?;

        let mut model = ModelConfig::default();
        get.with("variant", &mut model.variant, |s| Variant::parse(s).ok_or("expected angle or gradient"))?;
        get.num("channels", &mut model.channels)?;
        model.steering_channel = model.channels.saturating_sub(1);
        get.num("hidden", &mut model.hidden)?;
        get.num("steering_channel", &mut model.steering_channel)?;
        get.num("p_upd", &mut model.p_upd)?;
        get.num("alive_threshold", &mut model.alive_threshold)?;
        get.num("use_laplacian", &mut model.use_laplacian)?;
        model.aux_channels = cfg.aux.channels();

        let mut t = TrainConfig {
            model,
            ..TrainConfig::default()
        };
        get.with("regime", &mut t.regime, |s| {
            Regime::parse(s).ok_or("expected two_seed_l2 or single_seed_rotinv")
        })?;
        let mut loss = LossConfig::default();
        get.num("sharpen", &mut loss.sharpen)?;
        get.num("lambda_binary", &mut loss.lambda_binary)?;
        get.num("lambda_radial", &mut loss.lambda_radial)?;
        t.loss = loss;
        get.num("a_bins", &mut t.a_bins)?;
        get.num("batch_size", &mut t.batch_size)?;
        get.num("pool_size", &mut t.pool_size)?;
        get.num("rollout_min", &mut t.rollout_min)?;
        get.num("rollout_max", &mut t.rollout_max)?;
        get.num("learning_rate", &mut t.learning_rate)?;
        get.num("lr_decay_at", &mut t.lr_decay_at)?;
        get.num("total_steps", &mut t.total_steps)?;
        get.num("grad_norm", &mut t.grad_norm)?;
        get.num("damage", &mut t.damage)?;
        get.num("rng_seed", &mut t.rng_seed)?;
        get.num("checkpoint_every", &mut t.checkpoint_every)?;
        get.num("random_seed_angle", &mut t.random_seed_angle)?;

        let mut seed = SeedSpec {
            mode: match t.regime {
                Regime::TwoSeedL2 => SeedMode::Two,
                Regime::SingleSeedRotInv => SeedMode::Single,
            },
            ..SeedSpec::default()
        };
        get.num("seed_separation", &mut seed.separation)?;
        get.num("seed_orientation", &mut cfg.seed_orientation_deg)?;
        seed.orientation = cfg.seed_orientation_deg.to_radians();
        get.num("seed_angle", &mut cfg.seed_angle_deg)?;
        seed.angle = cfg.seed_angle_deg.to_radians();
        get.num("hue_a", &mut seed.hue_a)?;
        get.num("hue_b", &mut seed.hue_b)?;
        t.seed = seed;

        let (mut row, mut col) = (f64::NAN, f64::NAN);
        get.num("seed_row", &mut row)?;
        get.num("seed_col", &mut col)?;
        cfg.seed_center = match (entries.contains_key("seed_row"), entries.contains_key("seed_col")) {
            (true, true) => Some((row, col)),
            (false, false) => None,
            _ => {
                let line = entries.get("seed_row").or(entries.get("seed_col")).map_or(0, |e| e.0);
                return Err(err(line, "seed_row and seed_col must be given together".into()));
            }
        };
        if let Some((_, v)) = entries.get("output_dir") {
            cfg.output_dir = PathBuf::from(v);
        }
        get.num("gif_steps", &mut cfg.gif_steps)?;
        get.num("gif_stride", &mut cfg.gif_stride)?;
        get.num("render_scale", &mut cfg.render_scale)?;
        if let Some(c) = cfg.seed_center {
            t.seed.center = c;
        }
        cfg.train = t;

        // Cross-field checks report the line of the last key involved.
        if let Err(e) = cfg.train.validate() {
            let line = ["channels", "steering_channel", "hidden", "regime", "batch_size", "pool_size", "rollout_max", "damage"]
                .iter()
                .filter_map(|k| entries.get(*k).map(|e| e.0))
                .max()
                .unwrap_or(0);
            return Err(err(line, e.to_string()));
        }
        if cfg.gif_stride == 0 || cfg.render_scale == 0 {
            let line = entries.get("gif_stride").or(entries.get("render_scale")).map_or(0, |e| e.0);
            return Err(err(line, "gif_stride and render_scale must be positive".into()));
        }
        Ok(cfg)
    }

    /// Training configuration with the seed placed for a `height x width` grid.
    pub fn resolved_train(&self, height: usize, width: usize) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed.center = self
            .seed_center
            .unwrap_or(((height / 2) as f64, (width / 2) as f64));
        t
    }
}

const KEYS: &[&str] = &[
    "target",
    "target_pad",
    "aux",
    "variant",
    "channels",
    "hidden",
    "steering_channel",
    "p_upd",
    "alive_threshold",
    "use_laplacian",
    "regime",
    "sharpen",
    "lambda_binary",
    "lambda_radial",
    "a_bins",
    "batch_size",
    "pool_size",
    "rollout_min",
    "rollout_max",
    "learning_rate",
    "lr_decay_at",
    "total_steps",
    "grad_norm",
    "damage",
    "rng_seed",
    "checkpoint_every",
    "seed_separation",
    "seed_orientation",
    "seed_angle",
    "random_seed_angle",
    "hue_a",
    "hue_b",
    "seed_row",
    "seed_col",
    "output_dir",
    "gif_steps",
    "gif_stride",
    "render_scale",
];

struct Getter<'a, F> {
    entries: &'a BTreeMap<String, (usize, String)>,
    err: &'a F,
}

impl<F: Fn(usize, String) -> ConfigError> Getter<'_, F> {
    fn num<V: std::str::FromStr>(&mut self, key: &str, dst: &mut V) -> Result<(), ConfigError> {
        if let Some((line, v)) = self.entries.get(key) {
            *dst = v
                .parse()
                .map_err(|_| (self.err)(*line, format!("cannot parse `{v}` for `{key}`")))?;
        }
        Ok(())
    }

    fn with<V>(&mut self, key: &str, dst: &mut V, f: impl Fn(&str) -> Result<V, &'static str>) -> Result<(), ConfigError> {
        if let Some((line, v)) = self.entries.get(key) {
            *dst = f(v).map_err(|m| (self.err)(*line, format!("bad `{key}` value `{v}`: {m}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let mut cfg = RunConfig::parse("target = builtin:toy\n", "t").unwrap();
        cfg.seed_center = Some((12.0, 13.5));
        cfg.train.seed.center = (12.0, 13.5);
        cfg.seed_orientation_deg = 33.3;
        cfg.train.seed.orientation = 33.3f64.to_radians();
        let again = RunConfig::parse(&cfg.to_text(), "t").unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_text(), cfg.to_text());
    }

    #[test]
    fn errors_name_the_line() {
        let text = "target = builtin:toy\n# comment\nchannels = 12\nhidden = lots\n";
        let e = RunConfig::parse(text, "exp.cfg").unwrap_err();
        assert_eq!(e.to_string(), "exp.cfg:4: cannot parse `lots` for `hidden`");
        let e = RunConfig::parse("target = a.png\nfoo = 1\n", "x").unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 2, .. }));
        let e = RunConfig::parse("target = a.png\nbatch_size\n", "x").unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 2, .. }));
        let e = RunConfig::parse("target = a.png\naux = x\naux = none\n", "x").unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 3, .. }));
        let e = RunConfig::parse("target = a.png\naux = x\n", "x").unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 2, .. }));
    }

    #[test]
    fn cross_field_validation() {
        let e = RunConfig::parse("target = a.png\npool_size = 2\nbatch_size = 4\n", "x").unwrap_err();
        assert!(e.to_string().contains("pool_size"), "{e}");
        assert!(RunConfig::parse("channels = 8\n", "x").is_err());
    }

    #[test]
    fn steering_channel_defaults_to_last() {
        let c = RunConfig::parse("target = a.png\nchannels = 10\naux = binary\n", "x").unwrap();
        assert_eq!(c.train.model.steering_channel, 9);
        assert_eq!(c.train.model.aux_channels, 1);
    }
}
