//! Run configuration: `section.key = value` lines, `#` comments.
//!
//! Every key has a default, so an empty file is a valid config. The resolved
//! config is written back out with every key present, which makes the echo a
//! complete record of the run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gnnrec::eval::EvalProtocol;
use gnnrec::graph::{RatingsFormat, SplitSpec};
use gnnrec::model::{Aggregator, Head, ModelConfig};
use gnnrec::numeric::OptimizerKind;
use gnnrec::par::ExecMode;
use gnnrec::rng::derive_seed;
use gnnrec::sampler::{ImportanceConfig, SamplingMode};
use gnnrec::trainer::TrainingConfig;

use crate::CliError;

/// Known keys with their defaults, in echo order.
const KEYS: &[(&str, &str)] = &[
    ("dataset.format", "movielens"),
    ("dataset.path", "data/ml-1m/ratings.dat"),
    ("dataset.name", "ml-1m"),
    ("dataset.max_rating", "5"),
    ("dataset.strict", "true"),
    ("dataset.subsample", "1"),
    ("dataset.min_interactions", "0"),
    ("split.test_fraction", "0.2"),
    ("sampler.size", "10"),
    ("sampler.mode", "topk"),
    ("model.kind", "gnn"),
    ("model.dim", "64"),
    ("model.layers", "2"),
    ("model.aggregator", "attention"),
    ("model.head", "dot"),
    ("model.leaky_slope", "0.01"),
    ("training.learning_rate", "0.001"),
    ("training.lambda", "0.0001"),
    ("training.epochs", "30"),
    ("training.batch_size", "1024"),
    ("training.negatives", "1"),
    ("training.optimizer", "adam"),
    ("eval.negatives", "99"),
    ("eval.ks", "1,2,10"),
    ("run.seed", "0"),
    ("run.output_dir", "out"),
    ("run.exec", "parallel"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Gnn,
    Bpr,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gnn" => Ok(ModelKind::Gnn),
            "bpr" => Ok(ModelKind::Bpr),
            other => Err(format!("unknown model kind `{other}` (expected gnn|bpr)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gnn => "gnn",
            ModelKind::Bpr => "bpr",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub format: RatingsFormat,
    pub path: PathBuf,
    pub name: String,
    pub max_rating: u8,
    /// Fail on the first malformed line instead of counting it.
    pub strict: bool,
    /// Fraction of users kept, in `(0, 1]`.
    pub subsample: f64,
    pub min_interactions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub test_fraction: f64,
    pub sampler_size: usize,
    pub sampler_mode: SamplingMode,
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub eval_negatives: usize,
    pub eval_ks: Vec<usize>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub exec: ExecMode,
}

/// Raw `key = value` pairs over the full key table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigEntries {
    values: Vec<(&'static str, String)>,
}

impl Default for ConfigEntries {
    fn default() -> Self {
        ConfigEntries {
            values: KEYS.iter().map(|&(k, v)| (k, v.to_string())).collect(),
        }
    }
}

impl ConfigEntries {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::ConfigLine {
                line: n + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            entries.set(key.trim(), value.trim()).map_err(|e| match e {
                CliError::Config(message) => CliError::ConfigLine {
                    line: n + 1,
                    message,
                },
                other => other,
            })?;
        }
        Ok(entries)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::io(path, source))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let slot = self
            .values
            .iter_mut()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| CliError::Config(format!("unknown key `{key}`")))?;
        slot.1 = value.to_string();
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Applies `--section.key value` and `--section.key=value` arguments.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let flag = arg.strip_prefix("--").ok_or_else(|| {
                CliError::Config(format!("expected `--section.key`, found `{arg}`"))
            })?;
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k, v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| {
                        CliError::Config(format!("override `{arg}` has no value"))
                    })?;
                    (flag, v.clone())
                }
            };
            self.set(key, &value)?;
        }
        Ok(())
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.get(key).expect("key table covers every lookup");
        raw.parse()
            .map_err(|e| CliError::Config(format!("`{key}` = `{raw}`: {e}")))
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let ks = self
            .get("eval.ks")
            .unwrap_or_default()
            .split(',')
            .map(|k| {
                k.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("`eval.ks` entry `{k}` is not a count")))
            })
            .collect::<Result<Vec<usize>, _>>()?;
        let seed: u64 = self.typed("run.seed")?;
        let cfg = RunConfig {
            dataset: DatasetConfig {
                format: self.typed("dataset.format")?,
                path: self.typed("dataset.path")?,
                name: self.typed("dataset.name")?,
                max_rating: self.typed("dataset.max_rating")?,
                strict: self.typed("dataset.strict")?,
                subsample: self.typed("dataset.subsample")?,
                min_interactions: self.typed("dataset.min_interactions")?,
            },
            test_fraction: self.typed("split.test_fraction")?,
            sampler_size: self.typed("sampler.size")?,
            sampler_mode: self.typed("sampler.mode")?,
            kind: self.typed("model.kind")?,
            model: ModelConfig {
                dim: self.typed("model.dim")?,
                layers: self.typed("model.layers")?,
                aggregator: self.typed::<Aggregator>("model.aggregator")?,
                head: self.typed::<Head>("model.head")?,
                leaky_slope: self.typed("model.leaky_slope")?,
            },
            training: TrainingConfig {
                learning_rate: self.typed("training.learning_rate")?,
                lambda: self.typed("training.lambda")?,
                epochs: self.typed("training.epochs")?,
                batch_size: self.typed("training.batch_size")?,
                negatives_per_positive: self.typed("training.negatives")?,
                seed,
                optimizer: self.typed::<OptimizerKind>("training.optimizer")?,
            },
            eval_negatives: self.typed("eval.negatives")?,
            eval_ks: ks,
            seed,
            output_dir: self.typed("run.output_dir")?,
            exec: self.typed("run.exec")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ConfigEntries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut section = "";
        for (key, value) in &self.values {
            let this = key.split('.').next().unwrap_or("");
            if this != section {
                if !section.is_empty() {
                    writeln!(f)?;
                }
                section = this;
            }
            writeln!(f, "{key} = {value}")?;
        }
        Ok(())
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !(self.dataset.subsample > 0.0 && self.dataset.subsample <= 1.0) {
            return bad("dataset.subsample must lie in (0, 1]");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("split.test_fraction must lie in (0, 1)");
        }
        self.sampler().validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.protocol().validate()?;
        Ok(())
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec::new(self.test_fraction, derive_seed(self.seed, "split"))
    }

    pub fn subsample_seed(&self) -> u64 {
        derive_seed(self.seed, "subsample")
    }

    pub fn sampler(&self) -> ImportanceConfig {
        ImportanceConfig {
            sample_size: self.sampler_size,
            mode: self.sampler_mode,
            seed: derive_seed(self.seed, "sampler"),
        }
    }

    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol {
            negatives: self.eval_negatives,
            ks: self.eval_ks.clone(),
            seed: derive_seed(self.seed, "eval"),
        }
    }
}
