use std::fmt;

/// Characters removed during normalisation.
pub const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

/// Why a caption was refused before encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rejection {
    /// Nothing left after lowercasing and punctuation stripping.
    Empty,
    /// Raw whitespace-token count outside the configured bounds.
    Length { tokens: usize, min: usize, max: usize },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Empty => write!(f, "caption is empty after normalisation"),
            Rejection::Length { tokens, min, max } => {
                write!(f, "caption has {tokens} tokens, outside {min}..={max}")
            }
        }
    }
}

/// Lowercases, strips ASCII punctuation, collapses whitespace runs.
pub fn normalize_caption(raw: &str) -> Result<String, Rejection> {
    let lowered = raw.to_lowercase();
    let stripped: String = lowered.chars().filter(|c| !PUNCTUATION.contains(*c)).collect();
    let normalized = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.is_empty() {
        Err(Rejection::Empty)
    } else {
        Ok(normalized)
    }
}

/// Raw-token-count bounds applied before normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthFilter {
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for LengthFilter {
    fn default() -> Self {
        Self {
            min_tokens: 2,
            max_tokens: 50,
        }
    }
}

impl LengthFilter {
    pub fn check(&self, raw: &str) -> Result<(), Rejection> {
        let tokens = raw.split_whitespace().count();
        if tokens < self.min_tokens || tokens > self.max_tokens {
            return Err(Rejection::Length {
                tokens,
                min: self.min_tokens,
                max: self.max_tokens,
            });
        }
        Ok(())
    }

    /// Length check followed by normalisation.
    pub fn clean(&self, raw: &str) -> Result<String, Rejection> {
        self.check(raw)?;
        normalize_caption(raw)
    }
}
