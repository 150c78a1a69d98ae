//! Run configuration: a line-oriented `key=value` file.
//!
//! Keys are dotted (`model.layers=2`). A `[section]` line prefixes the keys that follow
//! it, so `[train]` then `lr=0.001` is the same as `train.lr=0.001`. Blank lines and
//! lines starting with `#` are ignored; unknown keys are errors.
//!
//! | key | default |
//! |---|---|
//! | `seed` | 1 (model initialization and training order) |
//! | `paths.train`, `paths.dev`, `paths.test`, `paths.model`, `paths.output` | unset |
//! | `model.variant` | preset name, sets all `variant.*` flags (default `sent-tr-g2g`) |
//! | `variant.base`, `variant.graph_input`, `variant.graph_output`, `variant.composition`, `variant.history` | from the preset |
//! | `model.layers`, `model.heads`, `model.dim`, `model.ff_dim` | 2, 4, 64, 128 |
//! | `model.max_positions`, `model.dropout`, `model.exist_hidden`, `model.relation_hidden` | 256, 0.05, 64, 32 |
//! | `train.lr`, `train.beta1`, `train.beta2`, `train.eps` | 1e-3, 0.9, 0.999, 1e-6 |
//! | `train.weight_decay`, `train.clip`, `train.warmup`, `train.epochs`, `train.patience` | 0.01, 1.0, 0.01, 12, 0 |
//! | `eval.punct` | `include` or `exclude` (default `include`) |
//! | `eval.punct_rule` | `upos` (UPOS is PUNCT) or `deprel` (DEPREL is `punct`, for Stanford conversions) |
//! | `vocab.min_freq` | 1 |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::eval::PunctMode;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::treebank::PunctuationRule;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub punct: PunctMode,
    /// How punctuation is recognised when treebanks are read.
    pub punct_rule: PunctuationRule,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            paths: Paths::default(),
            model: ModelConfig::default(),
            punct: train.punct,
            punct_rule: PunctuationRule::default(),
            seed: train.seed,
            train,
            min_freq: 1,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError::Line { line: i + 1, message };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::parse(&text)
    }

    /// Sets one dotted key; used both by the file parser and for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let path = || Some(PathBuf::from(value));
        match key {
            "seed" => {
                self.seed = parse_num(key, value)?;
                self.train.seed = self.seed;
            }
            "paths.train" => self.paths.train = path(),
            "paths.dev" => self.paths.dev = path(),
            "paths.test" => self.paths.test = path(),
            "paths.model" => self.paths.model = path(),
            "paths.output" => self.paths.output = path(),
            "train.lr" => self.train.lr = parse_num(key, value)?,
            "train.beta1" => self.train.beta1 = parse_num(key, value)?,
            "train.beta2" => self.train.beta2 = parse_num(key, value)?,
            "train.eps" => self.train.eps = parse_num(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse_num(key, value)?,
            "train.clip" => self.train.clip = parse_num(key, value)?,
            "train.warmup" => self.train.warmup = parse_num(key, value)?,
            "train.epochs" => self.train.epochs = parse_num(key, value)?,
            "train.patience" => self.train.patience = parse_num(key, value)?,
            "eval.punct" => {
                self.punct = PunctMode::parse(value).ok_or_else(|| format!("eval.punct: expected include or exclude, got {value:?}"))?;
                self.train.punct = self.punct;
            }
            "eval.punct_rule" => {
                self.punct_rule = match value {
                    "upos" => PunctuationRule::default(),
                    "deprel" => PunctuationRule::stanford(),
                    _ => return Err(format!("eval.punct_rule: expected upos or deprel, got {value:?}")),
                }
            }
            "vocab.min_freq" => self.min_freq = parse_num(key, value)?,
            k if k.starts_with("model.") || k.starts_with("variant.") => self.model.set(k, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Checks the combination of model and training options.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(ConfigError::Invalid)?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = format!("seed={}\n", self.seed);
        let p = &self.paths;
        for (k, v) in [("train", &p.train), ("dev", &p.dev), ("test", &p.test), ("model", &p.model), ("output", &p.output)] {
            if let Some(v) = v {
                out.push_str(&format!("paths.{k}={}\n", v.display()));
            }
        }
        for (k, v) in self.model.to_lines() {
            out.push_str(&format!("{k}={v}\n"));
        }
        let t = &self.train;
        out.push_str(&format!(
            "train.lr={}\ntrain.beta1={}\ntrain.beta2={}\ntrain.eps={}\ntrain.weight_decay={}\ntrain.clip={}\ntrain.warmup={}\ntrain.epochs={}\ntrain.patience={}\n",
            t.lr, t.beta1, t.beta2, t.eps, t.weight_decay, t.clip, t.warmup, t.epochs, t.patience
        ));
        let rule = if self.punct_rule == PunctuationRule::stanford() { "deprel" } else { "upos" };
        out.push_str(&format!("eval.punct={}\neval.punct_rule={rule}\nvocab.min_freq={}\n", self.punct.name(), self.min_freq));
        out
    }
}
