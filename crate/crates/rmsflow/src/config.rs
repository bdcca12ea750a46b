//! Flat `key = value` run configuration with dotted keys.
//!
//! Defaults follow the network's published hyperparameters; desk-scale runs
//! override them from a file (see `configs/desk.conf`) and `--set` pairs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rmsflow_core::data::{AugmentConfig, ShapeKind, SynthConfig};
use rmsflow_core::flowembed::{AblationFlags, EmbedConfig};
use rmsflow_core::net::{NetConfig, LEAKY_SLOPE};
use rmsflow_core::predictor::LossWeights;
use rmsflow_core::pyramid::{PyramidConfig, DENSE_LEVEL_SIZES};
use rmsflow_core::train::{Schedule, StepConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot parse `{value}` ({detail})")]
    BadValue { key: String, value: String, detail: String },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
scalar_value!(usize, u64, f64, bool, String);

impl Value for PathBuf {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl<T: Value> Value for Vec<T> {
    fn parse(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| T::parse(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(Value::render).collect::<Vec<_>>().join(",")
    }
}

impl Value for ShapeKind {
    fn parse(s: &str) -> Result<Self, String> {
        ShapeKind::parse(s).ok_or_else(|| "expected plane, box, sphere or blob".into())
    }
    fn render(&self) -> String {
        self.name().into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PyramidMode {
    Standard,
    Dense,
}

impl Value for PyramidMode {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(Self::Standard),
            "dense" => Ok(Self::Dense),
            _ => Err("expected standard or dense".into()),
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Standard => "standard",
            Self::Dense => "dense",
        }
        .into()
    }
}

macro_rules! run_config {
    ($($key:literal => $field:ident : $t:ty = $default:expr;)*) => {
        /// Every tunable of a run; field names mirror the dotted keys.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $t,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let value = value.trim();
                match key.trim() {
                    $($key => {
                        self.$field = <$t as Value>::parse(value).map_err(|detail| ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            detail,
                        })?;
                    })*
                    other => return Err(ConfigError::UnknownKey(other.into())),
                }
                Ok(())
            }

            /// Fully resolved `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, Value::render(&self.$field)),)*]
            }
        }
    };
}

run_config! {
    "seed" => seed: u64 = 1;
    "threads" => threads: usize = 1;
    "output.timing" => timing: bool = true;

    "data.dir" => data_dir: PathBuf = PathBuf::from("data");
    "data.scenes" => scenes: usize = 100;
    "data.train_fraction" => train_fraction: f64 = 0.8;
    "data.val_fraction" => val_fraction: f64 = 0.1;

    "synth.objects" => objects: usize = 4;
    "synth.points_per_object" => points_per_object: usize = 2560;
    "synth.shapes" => shapes: Vec<ShapeKind> = ShapeKind::ALL.to_vec();
    "synth.max_rotation" => max_rotation: f64 = 0.1;
    "synth.max_translation" => max_translation: f64 = 0.5;
    "synth.noise_sigma" => noise_sigma: f64 = 0.005;
    "synth.drop_fraction" => drop_fraction: f64 = 0.1;
    "synth.extent" => extent: f64 = 10.0;
    "synth.radius_min" => radius_min: f64 = 0.08;
    "synth.radius_max" => radius_max: f64 = 0.15;
    "synth.static_fraction" => static_fraction: f64 = 0.0;

    "pyramid.mode" => mode: PyramidMode = PyramidMode::Standard;
    "pyramid.l1" => l1: usize = 2048;
    "pyramid.l2" => l2: usize = 728;
    "pyramid.l3" => l3: usize = 320;
    "pyramid.dense_l1" => dense_l1: usize = DENSE_LEVEL_SIZES[0];
    "pyramid.dense_l2" => dense_l2: usize = DENSE_LEVEL_SIZES[1];
    "pyramid.dense_l3" => dense_l3: usize = DENSE_LEVEL_SIZES[2];
    "pyramid.c0" => c0: usize = 32;
    "pyramid.c1" => c1: usize = 128;
    "pyramid.c2" => c2: usize = 256;
    "pyramid.c3" => c3: usize = 512;
    "pyramid.k_p" => k_p: usize = 17;
    "pyramid.k_q" => k_q: usize = 1;

    "embed.k_o" => k_o: usize = 33;
    "embed.stage2" => stage2: bool = true;
    "embed.stage3" => stage3: bool = true;
    "embed.concat" => concat: bool = true;
    "embed.residual" => residual: bool = true;

    "net.slope" => slope: f64 = LEAKY_SLOPE;
    "loss.weights" => loss_weights: Vec<f64> = LossWeights::default().0;

    "train.points" => train_points: usize = 8192;
    "train.batch" => batch: usize = 4;
    "train.lr" => lr: f64 = 1e-3;
    "train.decay" => decay: f64 = 0.7;
    "train.decay_every" => decay_every: usize = 10;
    "train.phase1_epochs" => phase1_epochs: usize = 40;
    "train.phase2_epochs" => phase2_epochs: usize = 10;
    "train.phase2_lr" => phase2_lr: f64 = 1e-4;
    "train.clip" => clip: f64 = 1.0;
    "train.augment" => augment: bool = true;
    "train.max_angle" => aug_angle: f64 = 0.1;
    "train.max_offset" => aug_offset: f64 = 0.5;
    "train.val_scenes" => val_scenes: usize = 0;
    "train.out" => train_out: PathBuf = PathBuf::from("runs/train");

    "eval.points" => eval_points: Vec<usize> = vec![8192];
    "eval.split" => eval_split: String = "test".into();
    "eval.oracle" => oracle: bool = false;
    "eval.out" => eval_out: PathBuf = PathBuf::from("runs/eval");

    "bench.sizes" => bench_sizes: Vec<usize> = vec![2048, 4096, 8192, 16384, 32768, 65536];
    "bench.trials" => bench_trials: usize = 5;
    "bench.k" => bench_k: usize = 17;
    "bench.ratio" => bench_ratio: usize = 4;
    "bench.brute_max" => brute_max: usize = 16384;
    "bench.forward_max" => forward_max: usize = 8192;
    "bench.out" => bench_out: PathBuf = PathBuf::from("runs/bench");

    "ablate.out" => ablate_out: PathBuf = PathBuf::from("runs/ablate");
}

impl RunConfig {
    /// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, path)
    }

    /// `key=value` command-line override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: kv.into(),
            value: String::new(),
            detail: "expected key=value".into(),
        })?;
        self.set(k, v)
    }

    /// Defaults, then the file, then overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: rmsflow_core::Error| ConfigError::Invalid(e.to_string());
        self.net(self.mode).validate().map_err(invalid)?;
        self.synth().validate().map_err(invalid)?;
        self.schedule().validate().map_err(invalid)?;
        self.weights().validate().map_err(invalid)?;
        if self.weights().0.len() != self.level_sizes(self.mode).len() + 1 {
            return Err(ConfigError::Invalid(format!(
                "{} loss weights for {} scales",
                self.loss_weights.len(),
                self.level_sizes(self.mode).len() + 1
            )));
        }
        let fr = self.train_fraction + self.val_fraction;
        if !(self.train_fraction >= 0.0 && self.val_fraction >= 0.0 && fr <= 1.0 + 1e-12) {
            return Err(ConfigError::Invalid("split fractions must be non-negative and sum to at most 1".into()));
        }
        if self.batch == 0 || self.threads == 0 {
            return Err(ConfigError::Invalid("batch size and thread count must be positive".into()));
        }
        if !(self.clip >= 0.0) {
            return Err(ConfigError::Invalid("train.clip must be >= 0 (0 disables)".into()));
        }
        if self.bench_ratio == 0 || self.bench_trials == 0 {
            return Err(ConfigError::Invalid("bench ratio and trials must be positive".into()));
        }
        if !["train", "val", "test"].contains(&self.eval_split.as_str()) {
            return Err(ConfigError::Invalid("eval.split must be train, val or test".into()));
        }
        Ok(())
    }

    pub fn level_sizes(&self, mode: PyramidMode) -> Vec<usize> {
        match mode {
            PyramidMode::Standard => vec![self.l1, self.l2, self.l3],
            PyramidMode::Dense => vec![self.dense_l1, self.dense_l2, self.dense_l3],
        }
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            stage2: self.stage2,
            stage3: self.stage3,
            concat: self.concat,
            residual: self.residual,
        }
    }

    pub fn set_flags(&mut self, f: AblationFlags) {
        self.stage2 = f.stage2;
        self.stage3 = f.stage3;
        self.concat = f.concat;
        self.residual = f.residual;
    }

    pub fn net(&self, mode: PyramidMode) -> NetConfig {
        NetConfig {
            pyramid: PyramidConfig {
                level_sizes: self.level_sizes(mode),
                channels: vec![self.c1, self.c2, self.c3],
                input_channels: self.c0,
                k_p: self.k_p,
                k_q: self.k_q,
            },
            embed: EmbedConfig {
                k_o: self.k_o,
                flags: self.flags(),
            },
            slope: self.slope,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            objects: self.objects,
            points_per_object: self.points_per_object,
            shapes: self.shapes.clone(),
            max_rotation: self.max_rotation,
            max_translation: self.max_translation,
            noise_sigma: self.noise_sigma,
            drop_fraction: self.drop_fraction,
            extent: self.extent,
            radius_range: (self.radius_min, self.radius_max),
            static_fraction: self.static_fraction,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            lr0: self.lr,
            decay: self.decay,
            decay_every: self.decay_every,
            phase1_epochs: self.phase1_epochs,
            phase2_epochs: self.phase2_epochs,
            phase2_lr: self.phase2_lr,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights(self.loss_weights.clone())
    }

    pub fn step(&self) -> StepConfig {
        StepConfig {
            weights: self.weights(),
            clip: (self.clip > 0.0).then_some(self.clip),
        }
    }

    pub fn augmentation(&self) -> Option<AugmentConfig> {
        self.augment.then_some(AugmentConfig {
            max_angle: self.aug_angle,
            max_translation: self.aug_offset,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut a = RunConfig::default();
        a.set("pyramid.l1", "512").unwrap();
        a.set("synth.shapes", "box,blob").unwrap();
        let mut b = RunConfig::default();
        b.apply_text(&a.to_text(), Path::new("echo")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("pyramid.l4", "3"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("pyramid.l1", "x"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut c = RunConfig::default();
        c.apply_text("# desk\n\nseed = 7 # trailing\n", Path::new("t")).unwrap();
        assert_eq!(c.seed, 7);
        assert!(c.apply_text("seed 7", Path::new("t")).is_err());
    }

    #[test]
    fn dense_mode_switches_levels() {
        let c = RunConfig::default();
        assert_eq!(c.net(PyramidMode::Dense).pyramid.level_sizes, vec![8192, 2048, 512]);
        assert_eq!(c.net(PyramidMode::Standard).pyramid.level_sizes, vec![2048, 728, 320]);
    }
}
