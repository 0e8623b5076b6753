use crate::{Error, Result};

/// Upper bound on the output vocabulary, specials included.
pub const MAX_VOCAB: usize = 13_000;

/// Number of reserved token ids (`<pad>`, `<start>`, `<end>`, `<unk>`).
pub const NUM_SPECIALS: usize = 4;

/// Architecture hyper-parameters. Two models with equal configs have
/// identically shaped parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Maximum decoder length, `<start>` and `<end>` included.
    pub seq_len: usize,
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub feat_len: usize,
    pub ffn_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            n_heads: 8,
            seq_len: 24,
            vocab_size: MAX_VOCAB,
            feat_dim: 1280,
            feat_len: 100,
            ffn_dim: 2048,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("feat_dim", self.feat_dim),
            ("feat_len", self.feat_len),
            ("ffn_dim", self.ffn_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::config(format!(
                "d_model {} must be even for sinusoidal positions",
                self.d_model
            )));
        }
        if !(NUM_SPECIALS..=MAX_VOCAB).contains(&self.vocab_size) {
            return Err(Error::config(format!(
                "vocab_size {} outside {NUM_SPECIALS}..={MAX_VOCAB}",
                self.vocab_size
            )));
        }
        if self.seq_len < 2 {
            return Err(Error::config("seq_len must be at least 2"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Total number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        let (d, v, f, h) = (self.d_model, self.vocab_size, self.feat_dim, self.ffn_dim);
        let attention = 4 * d * d;
        let norm = 2 * d;
        v * d                   // token embedding
            + f * d + d         // feature projection
            + attention + norm  // encoder
            + 2 * (attention + norm)
            + d * h + h + h * d + d
            + norm
            + d * v + v // output head
    }

    /// Stable 64-bit FNV-1a digest of the architecture, stored in checkpoints.
    pub fn architecture_hash(&self) -> u64 {
        let canonical = format!(
            "capformer/1 d_model={} n_heads={} seq_len={} vocab_size={} feat_dim={} feat_len={} ffn_dim={}",
            self.d_model,
            self.n_heads,
            self.seq_len,
            self.vocab_size,
            self.feat_dim,
            self.feat_len,
            self.ffn_dim
        );
        fnv1a64(canonical.as_bytes())
    }

    /// Field order used when a config is stored as a tensor.
    pub fn to_fields(&self) -> [usize; 7] {
        [
            self.d_model,
            self.n_heads,
            self.seq_len,
            self.vocab_size,
            self.feat_dim,
            self.feat_len,
            self.ffn_dim,
        ]
    }

    pub fn from_fields(f: [usize; 7]) -> Self {
        Self {
            d_model: f[0],
            n_heads: f[1],
            seq_len: f[2],
            vocab_size: f[3],
            feat_dim: f[4],
            feat_len: f[5],
            ffn_dim: f[6],
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
