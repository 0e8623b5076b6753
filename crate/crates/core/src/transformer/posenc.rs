use crate::ndcore::{Real, Tensor};
use crate::{Error, Result};

/// Interleaved sinusoidal position table of shape `seq_len × d_model`:
/// even columns `sin(pos / 10000^(2i/d))`, odd columns the matching cosine.
pub fn positional_encoding<T: Real>(seq_len: usize, d_model: usize) -> Result<Tensor<T>> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::config(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    if seq_len == 0 {
        return Err(Error::config("positional encoding needs seq_len >= 1"));
    }
    Ok(Tensor::from_fn(&[seq_len, d_model], |idx| {
        let (pos, col) = (idx / d_model, idx % d_model);
        let pair = (col / 2) * 2;
        let angle = pos as f64 / 10_000f64.powf(pair as f64 / d_model as f64);
        T::lit(if col % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}
