//! Run configuration: flat `key = value` text, later values and command-line
//! flags override earlier ones. `#` starts a comment line.

use std::path::{Path, PathBuf};

use crate::datapipe::{CaptionFormat, SplitCounts};
use crate::textpipe::LengthFilter;
use crate::trainer::TrainConfig;
use crate::transformer::{ModelConfig, MAX_VOCAB};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub seq_len: usize,
    pub ffn_dim: usize,
    pub max_vocab: usize,
    pub train: TrainConfig,
    pub split: SplitCounts,
    pub caption_format: Option<CaptionFormat>,
    pub filter: LengthFilter,
    pub captions: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_model: m.d_model,
            n_heads: m.n_heads,
            seq_len: m.seq_len,
            ffn_dim: m.ffn_dim,
            max_vocab: MAX_VOCAB,
            train: TrainConfig::default(),
            split: SplitCounts::default(),
            caption_format: None,
            filter: LengthFilter::default(),
            captions: None,
            features: None,
            vocab: None,
            out: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "d_model", "n_heads", "seq_len", "ffn_dim", "max_vocab", "learning_rate", "beta1", "beta2",
    "eps", "batch_size", "max_epochs", "patience", "seed", "wall_clock", "split", "caption_format",
    "min_tokens", "max_tokens", "captions", "features", "vocab", "out",
];

fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: {value:?} is not a valid number")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(format!("{key}: {value:?} is not a boolean"))),
    }
}

impl RunConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key.trim() {
            "d_model" => self.d_model = parse_num(key, v)?,
            "n_heads" => self.n_heads = parse_num(key, v)?,
            "seq_len" => self.seq_len = parse_num(key, v)?,
            "ffn_dim" => self.ffn_dim = parse_num(key, v)?,
            "max_vocab" => self.max_vocab = parse_num(key, v)?,
            "learning_rate" => t.adam.learning_rate = parse_num(key, v)?,
            "beta1" => t.adam.beta1 = parse_num(key, v)?,
            "beta2" => t.adam.beta2 = parse_num(key, v)?,
            "eps" => t.adam.eps = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "max_epochs" => t.max_epochs = parse_num(key, v)?,
            "patience" => t.patience = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "wall_clock" => t.wall_clock = parse_bool(key, v)?,
            "split" => self.split = v.parse()?,
            "caption_format" => {
                self.caption_format = if v == "auto" { None } else { Some(v.parse()?) }
            }
            "min_tokens" => self.filter.min_tokens = parse_num(key, v)?,
            "max_tokens" => self.filter.max_tokens = parse_num(key, v)?,
            "captions" => self.captions = Some(PathBuf::from(v)),
            "features" => self.features = Some(PathBuf::from(v)),
            "vocab" => self.vocab = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            other => return Err(Error::config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn merge_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: source.to_owned(),
                line: i + 1,
                msg,
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(parse_err("expected key = value".into()));
            };
            self.set(key, value).map_err(|e| match e {
                Error::Config(msg) => parse_err(msg),
                other => parse_err(other.to_string()),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut c = Self::default();
        c.merge_text(text, source)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Model architecture once the data-dependent sizes are known.
    pub fn model_config(&self, vocab_size: usize, feat_len: usize, feat_dim: usize) -> Result<ModelConfig> {
        let m = ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            seq_len: self.seq_len,
            vocab_size,
            feat_dim,
            feat_len,
            ffn_dim: self.ffn_dim,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.filter.min_tokens > self.filter.max_tokens {
            return Err(Error::config("min_tokens exceeds max_tokens"));
        }
        Ok(())
    }

    /// The named path setting, or a config error if it was never given.
    pub fn require<'a>(&self, name: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::config(format!("missing required setting {name}")))
    }
}
