use std::collections::HashMap;

use crate::transformer::{MAX_VOCAB, NUM_SPECIALS};
use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const START: &str = "<start>";
pub const END: &str = "<end>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: u32 = 0;
pub const START_ID: u32 = 1;
pub const END_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

const SPECIALS: [&str; NUM_SPECIALS] = [PAD, START, END, UNK];

/// Bijection between token strings and ids; ids 0..4 are the specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_VOCAB {
            return Err(Error::config(format!(
                "vocabulary of {} tokens exceeds {MAX_VOCAB}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::format(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Frequency-ranked vocabulary over whitespace tokens of normalised
    /// captions; ties break lexicographically. Keeps `max_size - 4` words.
    pub fn build<S: AsRef<str>>(captions: &[S], max_size: usize) -> Result<Self> {
        if !(NUM_SPECIALS + 1..=MAX_VOCAB).contains(&max_size) {
            return Err(Error::config(format!(
                "max vocabulary size {max_size} outside {}..={MAX_VOCAB}",
                NUM_SPECIALS + 1
            )));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for caption in captions {
            for tok in caption.as_ref().split_whitespace() {
                if !SPECIALS.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .copied()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .map(str::to_owned)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or `<unk>` for unknown strings.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::Index {
                what: "vocabulary id",
                index: id as usize,
                bound: self.tokens.len(),
            })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// One token per line, line number = id, `\n`-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// Parses the vocabulary file format.
    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIALS {
            return Err(Error::format(format!(
                "vocabulary must start with {}",
                SPECIALS.join(", ")
            )));
        }
        if let Some(line) = tokens
            .iter()
            .position(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Parse {
                path: "vocabulary".into(),
                line: line + 1,
                msg: "token is empty or contains whitespace".into(),
            });
        }
        Self::from_tokens(tokens)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Fraction of corpus tokens (in `captions`) that are in the vocabulary.
    pub fn coverage<S: AsRef<str>>(&self, captions: &[S]) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for tok in captions.iter().flat_map(|c| c.as_ref().split_whitespace()) {
            total += 1;
            hit += self.contains(tok) as usize;
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}
