use super::Attention;
use crate::ndcore::{Graph, Real, Var};
use crate::{Error, Result};

/// Boolean `T_q × T_k` pattern of permitted attention, optionally one per
/// batch element. `true` means the query may attend to the key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    batch: Option<usize>,
    tq: usize,
    tk: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Fails if the pattern leaves some query row with no permitted key.
    pub fn new(tq: usize, tk: usize, allowed: Vec<bool>) -> Result<Self> {
        Self::build(None, tq, tk, allowed)
    }

    pub fn batched(batch: usize, tq: usize, tk: usize, allowed: Vec<bool>) -> Result<Self> {
        Self::build(Some(batch), tq, tk, allowed)
    }

    fn build(batch: Option<usize>, tq: usize, tk: usize, allowed: Vec<bool>) -> Result<Self> {
        let rows = batch.unwrap_or(1) * tq;
        if allowed.len() != rows * tk || tq == 0 || tk == 0 {
            return Err(Error::Shape {
                op: "attention mask",
                lhs: vec![batch.unwrap_or(1), tq, tk],
                rhs: vec![allowed.len()],
            });
        }
        if let Some(r) = (0..rows).find(|r| !allowed[r * tk..(r + 1) * tk].iter().any(|&a| a)) {
            return Err(Error::contract(format!(
                "attention mask row {r} forbids every key"
            )));
        }
        Ok(Self {
            batch,
            tq,
            tk,
            allowed,
        })
    }

    pub fn full(tq: usize, tk: usize) -> Self {
        Self::new(tq, tk, vec![true; tq * tk]).expect("non-empty")
    }

    pub fn query_len(&self) -> usize {
        self.tq
    }

    pub fn key_len(&self) -> usize {
        self.tk
    }

    pub fn batch(&self) -> Option<usize> {
        self.batch
    }

    /// Whether query `i` may attend to key `j` (for batch element `b`).
    pub fn allows(&self, b: usize, i: usize, j: usize) -> bool {
        let base = if self.batch.is_some() { b * self.tq * self.tk } else { 0 };
        self.allowed[base + i * self.tk + j]
    }

    /// Additionally forbids keys whose `key_valid` flag is false.
    pub fn and_key_padding(&self, key_valid: &[bool]) -> Result<Self> {
        if key_valid.len() != self.tk {
            return Err(Error::Shape {
                op: "key padding",
                lhs: vec![self.tq, self.tk],
                rhs: vec![key_valid.len()],
            });
        }
        let allowed = self
            .allowed
            .iter()
            .enumerate()
            .map(|(i, &a)| a && key_valid[i % self.tk])
            .collect();
        Self::build(self.batch, self.tq, self.tk, allowed)
    }

    /// Expands to one flag per score entry of a `[lead..., T_q, T_k]` tensor.
    fn expand(&self, score_shape: &[usize]) -> Result<Vec<bool>> {
        let r = score_shape.len();
        let mismatch = || Error::Shape {
            op: "attention mask",
            lhs: score_shape.to_vec(),
            rhs: vec![self.batch.unwrap_or(1), self.tq, self.tk],
        };
        if r < 2 || score_shape[r - 2] != self.tq || score_shape[r - 1] != self.tk {
            return Err(mismatch());
        }
        let lead: usize = score_shape[..r - 2].iter().product();
        let block = self.tq * self.tk;
        let per_batch = match self.batch {
            None => lead,
            Some(b) if r > 2 && score_shape[0] == b => lead / b,
            Some(_) => return Err(mismatch()),
        };
        let mut keep = Vec::with_capacity(lead * block);
        for l in 0..lead {
            let base = if self.batch.is_some() {
                (l / per_batch) * block
            } else {
                0
            };
            keep.extend_from_slice(&self.allowed[base..base + block]);
        }
        Ok(keep)
    }
}

/// Lower-triangular mask: query `i` sees keys `0..=i`.
pub fn causal_mask(t: usize) -> Result<AttentionMask> {
    if t == 0 {
        return Err(Error::contract("causal mask needs t >= 1"));
    }
    let allowed = (0..t * t).map(|idx| idx % t <= idx / t).collect();
    AttentionMask::new(t, t, allowed)
}

/// Output of an attention call together with its weight matrix.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// `softmax(q·kᵀ/√d_k + mask)·v` over the last two axes.
pub fn scaled_dot_product_attention<T: Real>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<AttentionOutput> {
    let ks = g.shape(k).to_vec();
    let r = ks.len();
    if r < 2 || g.shape(q).len() != r || g.shape(q)[r - 1] != ks[r - 1] {
        return Err(Error::Shape {
            op: "attention q/k",
            lhs: g.shape(q).to_vec(),
            rhs: ks,
        });
    }
    let d_k = ks[r - 1];
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 2, r - 1);
    let kt = g.permute(k, &perm)?;
    let scores = g.matmul(q, kt)?;
    let mut scores = g.scale(scores, T::lit(1.0 / (d_k as f64).sqrt()));
    if let Some(mask) = mask {
        let keep = mask.expand(g.shape(scores))?;
        scores = g.mask_fill(scores, keep)?;
    }
    let weights = g.softmax(scores, r - 1)?;
    let output = g.matmul(weights, v)?;
    Ok(AttentionOutput { output, weights })
}

/// Projects to Q/K/V, attends in `n_heads` subspaces of width
/// `d_model / n_heads`, concatenates and applies the output projection.
pub fn multi_head_attention<T: Real>(
    g: &mut Graph<'_, T>,
    x_q: Var,
    x_kv: Var,
    w: &Attention<Var>,
    n_heads: usize,
    mask: Option<&AttentionMask>,
) -> Result<AttentionOutput> {
    let (sq, skv) = (g.shape(x_q).to_vec(), g.shape(x_kv).to_vec());
    if sq.len() != 3 || skv.len() != 3 || sq[0] != skv[0] || sq[2] != skv[2] {
        return Err(Error::Shape {
            op: "multi_head_attention",
            lhs: sq,
            rhs: skv,
        });
    }
    let (b, tq, d) = (sq[0], sq[1], sq[2]);
    let tk = skv[1];
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::config(format!(
            "n_heads {n_heads} does not divide width {d}"
        )));
    }
    let dh = d / n_heads;
    let split = |g: &mut Graph<'_, T>, x: Var, wt: Var, t: usize| -> Result<Var> {
        let p = g.matmul(x, wt)?;
        let p = g.reshape(p, &[b, t, n_heads, dh])?;
        g.permute(p, &[0, 2, 1, 3])
    };
    let q = split(g, x_q, w.wq, tq)?;
    let k = split(g, x_kv, w.wk, tk)?;
    let v = split(g, x_kv, w.wv, tk)?;
    let att = scaled_dot_product_attention(g, q, k, v, mask)?;
    let merged = g.permute(att.output, &[0, 2, 1, 3])?;
    let merged = g.reshape(merged, &[b, tq, d])?;
    let output = g.matmul(merged, w.wo)?;
    Ok(AttentionOutput {
        output,
        weights: att.weights,
    })
}
