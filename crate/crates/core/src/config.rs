//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{SyntheticSpec, SyntheticTask};
use crate::decoding::DEFAULT_LEN_FACTOR;
use crate::error::{Error, Result};
use crate::training::{Regime, Selection, TrainingConfig};

/// Every key the parser accepts.
pub const KEYS: &[&str] = &[
    "embed_dim",
    "hidden_dim",
    "vocab_size",
    "lambda",
    "learning_rate",
    "epochs",
    "batch_size",
    "regime",
    "seed",
    "max_len",
    "patience",
    "clip_norm",
    "selection",
    "len_factor",
    "samples",
    "train_src",
    "train_tgt",
    "dev_src",
    "dev_tgt",
    "test_src",
    "test_tgt",
    "src_vocab",
    "tgt_vocab",
    "out_dir",
    "pretrained",
    "synthetic",
    "alphabet",
    "min_len",
    "max_sent_len",
    "train_size",
    "dev_size",
    "test_size",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Cap on vocabulary size, reserved tokens included.
    pub vocab_size: usize,
    pub training: TrainingConfig,
    pub len_factor: usize,
    pub samples: usize,
    pub train_src: Option<PathBuf>,
    pub train_tgt: Option<PathBuf>,
    pub dev_src: Option<PathBuf>,
    pub dev_tgt: Option<PathBuf>,
    pub test_src: Option<PathBuf>,
    pub test_tgt: Option<PathBuf>,
    pub src_vocab: Option<PathBuf>,
    pub tgt_vocab: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// θ checkpoint that finetuning starts from.
    pub pretrained: Option<PathBuf>,
    /// Synthetic task generated by `make-data`, if any.
    pub synthetic: Option<SyntheticSpec>,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            embed_dim: 64,
            hidden_dim: 64,
            vocab_size: 30000,
            training: TrainingConfig::default(),
            len_factor: DEFAULT_LEN_FACTOR,
            samples: crate::evaluation::DEFAULT_SAMPLES,
            train_src: None,
            train_tgt: None,
            dev_src: None,
            dev_tgt: None,
            test_src: None,
            test_tgt: None,
            src_vocab: None,
            tgt_vocab: None,
            out_dir: None,
            pretrained: None,
            synthetic: None,
            train_size: 5000,
            dev_size: 500,
            test_size: 500,
        }
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl Config {
    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }

        let mut c = Config::default();
        let mut synth = SyntheticSpec::default();
        let path = |v: &str| base.join(v);
        for (key, v) in &entries {
            let v = v.as_str();
            match key.as_str() {
                "embed_dim" => c.embed_dim = number(key, v)?,
                "hidden_dim" => c.hidden_dim = number(key, v)?,
                "vocab_size" => c.vocab_size = number(key, v)?,
                "lambda" => c.training.lambda = number(key, v)?,
                "learning_rate" => c.training.learning_rate = number(key, v)?,
                "epochs" => c.training.epochs = number(key, v)?,
                "batch_size" => c.training.batch_size = number(key, v)?,
                "regime" => c.training.regime = v.parse::<Regime>()?,
                "seed" => c.training.seed = number(key, v)?,
                "max_len" => c.training.max_len = number(key, v)?,
                "patience" => c.training.patience = number(key, v)?,
                "clip_norm" => {
                    c.training.clip_norm = match v {
                        "none" => None,
                        _ => Some(number(key, v)?),
                    }
                }
                "selection" => c.training.selection = v.parse::<Selection>()?,
                "len_factor" => c.len_factor = number(key, v)?,
                "samples" => c.samples = number(key, v)?,
                "train_src" => c.train_src = Some(path(v)),
                "train_tgt" => c.train_tgt = Some(path(v)),
                "dev_src" => c.dev_src = Some(path(v)),
                "dev_tgt" => c.dev_tgt = Some(path(v)),
                "test_src" => c.test_src = Some(path(v)),
                "test_tgt" => c.test_tgt = Some(path(v)),
                "src_vocab" => c.src_vocab = Some(path(v)),
                "tgt_vocab" => c.tgt_vocab = Some(path(v)),
                "out_dir" => c.out_dir = Some(path(v)),
                "pretrained" => c.pretrained = Some(path(v)),
                "synthetic" => {
                    c.synthetic = match v {
                        "none" => None,
                        _ => Some(SyntheticSpec {
                            task: v.parse::<SyntheticTask>()?,
                            ..SyntheticSpec::default()
                        }),
                    }
                }
                "alphabet" => synth.alphabet = number(key, v)?,
                "min_len" => synth.min_len = number(key, v)?,
                "max_sent_len" => synth.max_len = number(key, v)?,
                "train_size" => c.train_size = number(key, v)?,
                "dev_size" => c.dev_size = number(key, v)?,
                "test_size" => c.test_size = number(key, v)?,
                _ => unreachable!("key list checked above"),
            }
        }
        if let Some(s) = c.synthetic.as_mut() {
            s.alphabet = synth.alphabet;
            s.min_len = synth.min_len;
            s.max_len = synth.max_len;
            s.validate()?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("embed_dim and hidden_dim must be >= 1".into()));
        }
        if self.vocab_size < crate::data::NUM_RESERVED + 1 {
            return Err(Error::Config(format!(
                "vocab_size must exceed the {} reserved tokens",
                crate::data::NUM_RESERVED
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        self.training.validate()
    }

    /// A path the current command cannot run without.
    pub fn require<'a>(&self, field: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }
}
