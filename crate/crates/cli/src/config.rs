//! Flat `key = value` experiment configuration.
//!
//! Every key, its default and its meaning live in [`DEFAULTS`]; a file may
//! set any subset of them. Unknown or repeated keys are rejected. `#` starts
//! a comment; blank lines are ignored; list values are comma separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kamal_core::amalgam::AmalgamMode;

use crate::error::{CliError, Result};

pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn key(key: &'static str, default: &'static str, doc: &'static str) -> KeyDoc {
    KeyDoc { key, default, doc }
}

/// The canonical table of configuration keys, in file order.
pub const DEFAULTS: &[KeyDoc] = &[
    key(
        "seed",
        "0",
        "master seed; every stream (data, split, init, batching) derives from it",
    ),
    key("dataset.kind", "synthetic", "synthetic | idx"),
    key("dataset.classes", "8", "synthetic: number of classes"),
    key("dataset.per_class", "300", "synthetic: training samples per class"),
    key("dataset.test_per_class", "100", "synthetic: held-out samples per class"),
    key("dataset.noise_sigma", "0.08", "synthetic: per-pixel Gaussian noise"),
    key("dataset.image", "3x32x32", "synthetic: image shape CxHxW"),
    key("dataset.train_images", "", "idx: training images file"),
    key("dataset.train_labels", "", "idx: training labels file"),
    key("dataset.test_images", "", "idx: test images file"),
    key("dataset.test_labels", "", "idx: test labels file"),
    key("teachers.count", "2", "number of teachers (equal class parts)"),
    key("teachers.overlap", "", "class ids shared by every teacher (comma list)"),
    key("net.convs", "16,32,48", "teacher conv widths (3x3, relu, maxpool 2/2)"),
    key("net.fcs", "128", "teacher hidden fc widths"),
    key("amalgam.mode", "dfa", "pairwise | ifa | dfa"),
    key(
        "amalgam.ratio",
        "0.75",
        "student width = ratio * teachers * teacher width",
    ),
    key("fam.enabled", "true", "insert adapters in layer-wise stages 2..L-1"),
    key("train.lr", "0.01", "teacher learning rate"),
    key("train.momentum", "0.9", "momentum of every optimizer"),
    key(
        "train.weight_decay",
        "0.0005",
        "weight decay of teacher, baseline and joint training",
    ),
    key("train.lr_ae", "0.1", "normalized autoencoder step"),
    key("train.lr_layerwise", "0.5", "normalized layer-wise stage step"),
    key("train.lr_joint", "0.00001", "joint fine-tuning learning rate"),
    key("train.lr_baseline", "0.003", "distillation baseline learning rate"),
    key("train.epochs_teacher", "10", "teacher epochs"),
    key("train.epochs_ae", "10", "autoencoder epochs per layer"),
    key("train.epochs_layerwise", "10", "epochs per layer-wise stage"),
    key("train.epochs_joint", "10", "joint (and baseline) epochs"),
    key("train.batch_size", "32", "minibatch size"),
    key("kd.temperature", "4", "baseline softening temperature"),
    key(
        "kd.soft",
        "true",
        "baseline: softened blockwise targets (false: L2 on raw scores)",
    ),
    key("out.dir", "out", "artifact directory"),
    key(
        "metrics.wall_time",
        "false",
        "fill the wall_seconds column (breaks byte-identical reruns)",
    ),
    key("ablate.seeds", "0,1", "seeds of the ablation factorial"),
    key("ablate.teachers", "2,3,4", "teacher counts of the ablation factorial"),
    key(
        "ablate.modes",
        "dfa,ifa",
        "amalgamation modes of the ablation factorial",
    ),
    key("ablate.classes_per_teacher", "4", "ablation: classes = teachers * this"),
];

/// Raw key/value pairs, restricted to the keys of [`DEFAULTS`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    DEFAULTS.iter().any(|d| d.key == key)
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: DEFAULTS
                .iter()
                .map(|d| (d.key.to_string(), d.default.to_string()))
                .collect(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::config(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, got {line:?}"),
                )
            })?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(CliError::config(k, format!("set twice (line {})", n + 1)));
            }
            seen.push(k);
            cfg.set(k, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(CliError::config(key, "unknown key"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not in the defaults table"))
    }

    /// Every key with its effective value, in table order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in DEFAULTS {
            writeln!(out, "{} = {}", d.key, self.get(d.key)).unwrap();
        }
        out
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.parse()
            .map_err(|e| CliError::config(key, format!("cannot parse {v:?}: {e}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::config(key, format!("cannot parse item {s:?}: {e}")))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        noise_sigma: f64,
        image: [usize; 3],
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_ae: f32,
    pub lr_layerwise: f32,
    pub lr_joint: f32,
    pub lr_baseline: f32,
    pub epochs_teacher: usize,
    pub epochs_ae: usize,
    pub epochs_layerwise: usize,
    pub epochs_joint: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblateSettings {
    pub seeds: Vec<u64>,
    pub teachers: Vec<usize>,
    pub modes: Vec<AmalgamMode>,
    pub classes_per_teacher: usize,
}

/// Validated, typed view of a [`Config`].
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub dataset: DatasetSource,
    pub teachers: usize,
    pub overlap: Vec<usize>,
    pub convs: Vec<usize>,
    pub fcs: Vec<usize>,
    pub mode: AmalgamMode,
    pub ratio: f64,
    pub fam: bool,
    pub train: TrainSettings,
    pub kd_temperature: f32,
    pub kd_soft: bool,
    pub out_dir: PathBuf,
    pub wall_time: bool,
    pub ablate: AblateSettings,
}

fn positive(key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        Err(CliError::config(key, "must be >= 1"))
    } else {
        Ok(v)
    }
}

fn non_negative(key: &str, v: f32) -> Result<f32> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(CliError::config(key, format!("{v} must be finite and >= 0")))
    }
}

fn sigma(cfg: &Config) -> Result<f64> {
    let v: f64 = cfg.typed("dataset.noise_sigma")?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(CliError::config(
            "dataset.noise_sigma",
            format!("{v} must be finite and >= 0"),
        ))
    }
}

fn parse_image(key: &str, v: &str) -> Result<[usize; 3]> {
    let dims: Vec<usize> = v
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::config(key, format!("expected CxHxW, got {v:?}")))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(CliError::config(
            key,
            format!("expected CxHxW with positive extents, got {v:?}"),
        )),
    }
}

fn path_key(cfg: &Config, key: &str) -> Result<PathBuf> {
    let v = cfg.get(key);
    if v.is_empty() {
        return Err(CliError::config(key, "required when dataset.kind = idx"));
    }
    Ok(PathBuf::from(v))
}

impl Settings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let dataset = match cfg.get("dataset.kind") {
            "synthetic" => DatasetSource::Synthetic {
                classes: cfg.typed("dataset.classes")?,
                per_class: positive("dataset.per_class", cfg.typed("dataset.per_class")?)?,
                test_per_class: positive("dataset.test_per_class", cfg.typed("dataset.test_per_class")?)?,
                noise_sigma: sigma(cfg)?,
                image: parse_image("dataset.image", cfg.get("dataset.image"))?,
            },
            "idx" => DatasetSource::Idx {
                train_images: path_key(cfg, "dataset.train_images")?,
                train_labels: path_key(cfg, "dataset.train_labels")?,
                test_images: path_key(cfg, "dataset.test_images")?,
                test_labels: path_key(cfg, "dataset.test_labels")?,
            },
            other => {
                return Err(CliError::config(
                    "dataset.kind",
                    format!("unknown kind {other:?} (synthetic|idx)"),
                ))
            }
        };
        let teachers: usize = cfg.typed("teachers.count")?;
        if teachers < 2 {
            return Err(CliError::config("teachers.count", "at least 2 teachers are needed"));
        }
        if let DatasetSource::Synthetic { classes, .. } = dataset {
            if classes < teachers {
                return Err(CliError::config(
                    "dataset.classes",
                    format!("{classes} classes cannot feed {teachers} teachers"),
                ));
            }
        }
        let convs: Vec<usize> = cfg.list("net.convs")?;
        let fcs: Vec<usize> = cfg.list("net.fcs")?;
        if convs.iter().chain(&fcs).any(|&w| w == 0) {
            return Err(CliError::config("net.convs", "widths must be >= 1"));
        }
        if convs.len() + fcs.len() == 0 {
            return Err(CliError::config(
                "net.convs",
                "the teacher needs at least one hidden layer",
            ));
        }
        let mode: AmalgamMode = cfg
            .get("amalgam.mode")
            .parse()
            .map_err(|e: kamal_core::Error| CliError::config("amalgam.mode", e.to_string()))?;
        if mode == AmalgamMode::Pairwise && teachers != 2 {
            return Err(CliError::config(
                "amalgam.mode",
                "pairwise amalgamation needs exactly 2 teachers",
            ));
        }
        let ratio: f64 = cfg.typed("amalgam.ratio")?;
        if !(ratio > 1.0 / teachers as f64 && ratio < 1.0) {
            return Err(CliError::config(
                "amalgam.ratio",
                format!("{ratio} outside (1/{teachers}, 1)"),
            ));
        }
        let train = TrainSettings {
            lr: non_negative("train.lr", cfg.typed("train.lr")?)?,
            momentum: non_negative("train.momentum", cfg.typed("train.momentum")?)?,
            weight_decay: non_negative("train.weight_decay", cfg.typed("train.weight_decay")?)?,
            lr_ae: non_negative("train.lr_ae", cfg.typed("train.lr_ae")?)?,
            lr_layerwise: non_negative("train.lr_layerwise", cfg.typed("train.lr_layerwise")?)?,
            lr_joint: non_negative("train.lr_joint", cfg.typed("train.lr_joint")?)?,
            lr_baseline: non_negative("train.lr_baseline", cfg.typed("train.lr_baseline")?)?,
            epochs_teacher: cfg.typed("train.epochs_teacher")?,
            epochs_ae: cfg.typed("train.epochs_ae")?,
            epochs_layerwise: cfg.typed("train.epochs_layerwise")?,
            epochs_joint: cfg.typed("train.epochs_joint")?,
            batch_size: positive("train.batch_size", cfg.typed("train.batch_size")?)?,
        };
        if train.momentum >= 1.0 {
            return Err(CliError::config("train.momentum", "must be < 1"));
        }
        let kd_temperature: f32 = cfg.typed("kd.temperature")?;
        if !(kd_temperature > 0.0 && kd_temperature.is_finite()) {
            return Err(CliError::config("kd.temperature", "must be > 0"));
        }
        let ablate = AblateSettings {
            seeds: cfg.list("ablate.seeds")?,
            teachers: cfg.list("ablate.teachers")?,
            modes: cfg
                .list::<String>("ablate.modes")?
                .iter()
                .map(|m| {
                    m.parse()
                        .map_err(|e: kamal_core::Error| CliError::config("ablate.modes", e.to_string()))
                })
                .collect::<Result<_>>()?,
            classes_per_teacher: positive("ablate.classes_per_teacher", cfg.typed("ablate.classes_per_teacher")?)?,
        };
        if ablate.teachers.iter().any(|&n| n < 2) {
            return Err(CliError::config("ablate.teachers", "teacher counts must be >= 2"));
        }
        Ok(Settings {
            seed: cfg.typed("seed")?,
            dataset,
            teachers,
            overlap: cfg.list("teachers.overlap")?,
            convs,
            fcs,
            mode,
            ratio,
            fam: cfg.typed("fam.enabled")?,
            train,
            kd_temperature,
            kd_soft: cfg.typed("kd.soft")?,
            out_dir: PathBuf::from(cfg.get("out.dir")),
            wall_time: cfg.typed("metrics.wall_time")?,
            ablate,
        })
    }
}

/// The defaults table as aligned text, for `--help` style listings.
pub fn defaults_table() -> String {
    let width = DEFAULTS.iter().map(|d| d.key.len()).max().unwrap_or(0);
    let mut out = String::new();
    for d in DEFAULTS {
        let shown = if d.default.is_empty() { "(empty)" } else { d.default };
        writeln!(out, "{:width$}  {:10}  {}", d.key, shown, d.doc).unwrap();
    }
    out
}
