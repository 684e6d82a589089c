//! Flat `key = value` run configuration.
//!
//! Values resolve as flag > file > default. Unknown or repeated keys are
//! errors. [`RunConfig::to_text`] writes every key, so the echoed file
//! reproduces a run when fed back in.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{load_mnist, synth_blobs_split, Dataset};
use crate::error::{Error, Result};
use crate::kernels::{parse_list, KernelSpec};
use crate::training::{Mode, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Blobs,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mnist" => Ok(DatasetKind::Mnist),
            "blobs" => Ok(DatasetKind::Blobs),
            other => Err(Error::InvalidConfig(format!(
                "unknown dataset `{other}` (mnist, blobs)"
            ))),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Blobs => "blobs",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            classes: 4,
            train_per_class: 200,
            test_per_class: 100,
            dim: 256,
            spread: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    /// Use only the first N training / test samples (0 = all).
    pub train_subset: usize,
    pub test_subset: usize,
    pub blobs: BlobsConfig,
    /// Seed for synthetic data, separate from the training seed so repeats
    /// vary initialization and batching over one dataset.
    pub data_seed: u64,
    /// Fraction of training data held out (never trained on) and scored once
    /// at the end.
    pub validation_fraction: f64,
    pub train: TrainConfig,
}

pub const KEYS: &[&str] = &[
    "mode",
    "dataset",
    "data_dir",
    "train_subset",
    "test_subset",
    "blobs_classes",
    "blobs_train_per_class",
    "blobs_test_per_class",
    "blobs_dim",
    "blobs_spread",
    "data_seed",
    "validation_fraction",
    "batch_size",
    "lambda",
    "beta",
    "beta1",
    "beta2",
    "optimizer",
    "lr_schedule",
    "epochs",
    "seed",
    "bandwidths",
    "label_kernel",
    "latent_dim",
    "hidden",
    "labels",
    "steps_per_epoch",
    "pretrain_epochs",
    "hard_labels",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key} = `{value}`: {e}")))
}

/// `0` means unset.
fn optional(n: usize) -> Option<usize> {
    (n > 0).then_some(n)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// `epoch:multiplier` pairs separated by commas, or `none`.
pub fn parse_schedule(s: &str) -> Result<Vec<(usize, f64)>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (e, m) = item.split_once(':').ok_or_else(|| {
                Error::InvalidConfig(format!("lr_schedule item `{item}` is not epoch:multiplier"))
            })?;
            Ok((parse("lr_schedule", e)?, parse("lr_schedule", m)?))
        })
        .collect()
}

fn schedule_text(s: &[(usize, f64)]) -> String {
    if s.is_empty() {
        return "none".into();
    }
    s.iter().map(|(e, m)| format!("{e}:{m}")).collect::<Vec<_>>().join(",")
}

/// Epoch budget for blobs runs unless set explicitly.
pub const BLOBS_EPOCHS: usize = 25;

impl RunConfig {
    pub fn for_mode(mode: Mode) -> Self {
        RunConfig::defaults(mode, DatasetKind::Mnist)
    }

    /// Mode defaults, adjusted for blobs: plain SGD at the MNIST rate
    /// collapses on dense blob inputs, so blobs default to Adam with no
    /// schedule and [`BLOBS_EPOCHS`] epochs.
    pub fn defaults(mode: Mode, dataset: DatasetKind) -> Self {
        let mut train = TrainConfig::for_mode(mode);
        if dataset == DatasetKind::Blobs {
            train.optimizer = OptimizerKind::ADAM_DEFAULT;
            train.lr_schedule.clear();
            train.epochs = BLOBS_EPOCHS;
        }
        RunConfig {
            mode,
            dataset,
            data_dir: PathBuf::from("data/mnist"),
            train_subset: 0,
            test_subset: 0,
            blobs: BlobsConfig::default(),
            data_seed: 0,
            validation_fraction: 0.0,
            train,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "mode" => self.mode = value.parse()?,
            "dataset" => self.dataset = value.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(value.trim()),
            "train_subset" => self.train_subset = parse(key, value)?,
            "test_subset" => self.test_subset = parse(key, value)?,
            "blobs_classes" => self.blobs.classes = parse(key, value)?,
            "blobs_train_per_class" => self.blobs.train_per_class = parse(key, value)?,
            "blobs_test_per_class" => self.blobs.test_per_class = parse(key, value)?,
            "blobs_dim" => self.blobs.dim = parse(key, value)?,
            "blobs_spread" => self.blobs.spread = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "beta" => t.beta = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "optimizer" => t.optimizer = value.parse()?,
            "lr_schedule" => t.lr_schedule = parse_schedule(value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "bandwidths" => {
                t.bandwidths = parse_list(value)
                    .map_err(|e| Error::InvalidConfig(format!("bandwidths: {e}")))?
            }
            "label_kernel" => t.label_kernel = value.parse::<KernelSpec>()?,
            "latent_dim" => t.latent_dim = parse(key, value)?,
            "hidden" => {
                t.hidden = if value.trim().is_empty() || value.trim() == "none" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse(key, v))
                        .collect::<Result<_>>()?
                }
            }
            "labels" => t.n_labeled = optional(parse(key, value)?),
            "steps_per_epoch" => t.steps_per_epoch = optional(parse(key, value)?),
            "pretrain_epochs" => {
                t.pretrain_epochs = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "hard_labels" => t.hard_labels = parse(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key `{other}`")))
            }
        }
        Ok(())
    }

    /// Defaults for the resolved mode and dataset, then file entries, then
    /// flag entries.
    pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<Self> {
        let lookup = |key: &str| {
            let find = |pairs: &[(String, String)]| {
                pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.clone())
            };
            find(flags).or_else(|| find(file))
        };
        let mode = match lookup("mode") {
            Some(m) => m.parse()?,
            None => Mode::Supervised,
        };
        let dataset = match lookup("dataset") {
            Some(d) => d.parse()?,
            None => DatasetKind::Mnist,
        };
        let mut cfg = RunConfig::defaults(mode, dataset);
        for (k, v) in file.iter().chain(flags) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.mode == Mode::SemiSupervised && self.train.n_labeled.is_none() {
            return Err(Error::InvalidConfig(
                "mode = semi needs labels = <count>".into(),
            ));
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let pairs: Vec<(&str, String)> = vec![
            ("mode", self.mode.to_string()),
            ("dataset", self.dataset.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("train_subset", self.train_subset.to_string()),
            ("test_subset", self.test_subset.to_string()),
            ("blobs_classes", self.blobs.classes.to_string()),
            ("blobs_train_per_class", self.blobs.train_per_class.to_string()),
            ("blobs_test_per_class", self.blobs.test_per_class.to_string()),
            ("blobs_dim", self.blobs.dim.to_string()),
            ("blobs_spread", self.blobs.spread.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lambda", t.lambda.to_string()),
            ("beta", t.beta.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("optimizer", t.optimizer.to_string()),
            ("lr_schedule", schedule_text(&t.lr_schedule)),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("bandwidths", join(&t.bandwidths)),
            ("label_kernel", t.label_kernel.to_string()),
            ("latent_dim", t.latent_dim.to_string()),
            ("hidden", if t.hidden.is_empty() { "none".into() } else { join(&t.hidden) }),
            ("labels", t.n_labeled.unwrap_or(0).to_string()),
            ("steps_per_epoch", t.steps_per_epoch.unwrap_or(0).to_string()),
            (
                "pretrain_epochs",
                t.pretrain_epochs.map_or("auto".into(), |n| n.to_string()),
            ),
            ("hard_labels", t.hard_labels.to_string()),
        ];
        debug_assert_eq!(pairs.len(), KEYS.len());
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// `(train, test, validation)` per the dataset settings.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset, Option<Dataset>)> {
        let (mut train, mut test) = match self.dataset {
            DatasetKind::Mnist => (
                load_mnist(&self.data_dir, true)?,
                load_mnist(&self.data_dir, false)?,
            ),
            DatasetKind::Blobs => synth_blobs_split(
                self.blobs.classes,
                self.blobs.train_per_class,
                self.blobs.test_per_class,
                self.blobs.dim,
                self.blobs.spread,
                self.data_seed,
            )?,
        };
        if self.train_subset > 0 {
            train = train.head(self.train_subset);
        }
        if self.test_subset > 0 {
            test = test.head(self.test_subset);
        }
        let val = if self.validation_fraction > 0.0 {
            let (t, v) = train.split_validation(self.validation_fraction, self.data_seed)?;
            train = t;
            Some(v)
        } else {
            None
        };
        Ok((train, test, val))
    }
}

/// Parses `key = value` lines; `#` starts a comment. Repeated keys are an
/// error.
pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key = value, got `{raw}`", n + 1))
        })?;
        let k = k.trim().to_string();
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "line {}: unknown config key `{k}`",
                n + 1
            )));
        }
        if out.iter().any(|(existing, _)| *existing == k) {
            return Err(Error::InvalidConfig(format!("line {}: `{k}` set twice", n + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text(&text)
}
