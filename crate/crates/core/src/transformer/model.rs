use super::{causal_mask, multi_head_attention, positional_encoding, ModelConfig, ModelParams, ParamSet};
use crate::ndcore::{Graph, Real, Tensor, Var, LAYER_NORM_EPS};
use crate::{Error, Result};

/// A configured captioning model: architecture plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel<T: Real = f32> {
    config: ModelConfig,
    params: ModelParams<T>,
}

impl<T: Real> CaptionModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> CaptionModel<U> {
        CaptionModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Encoder memory for a `[B, feat_len, feat_dim]` feature batch, without
    /// recording gradients.
    pub fn encode(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = g.borrowed(features, false);
        let memory = encoder_forward(&mut g, f, &p, &self.config)?;
        Ok(g.value(memory).clone())
    }

    /// Vocabulary logits `[B, T, V]` for token prefixes given encoder memory.
    pub fn decode_logits(&self, tokens: &[usize], batch: usize, memory: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let m = g.borrowed(memory, false);
        let logits = decoder_forward(&mut g, tokens, batch, m, &p, &self.config)?;
        Ok(g.value(logits).clone())
    }
}

fn linear<T: Real>(g: &mut Graph<'_, T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Projects CNN features to the model width, adds positions, then one
/// self-attention sub-layer with a residual connection and layer norm.
pub fn encoder_forward<T: Real>(
    g: &mut Graph<'_, T>,
    features: Var,
    p: &ParamSet<Var>,
    config: &ModelConfig,
) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 3 || shape[2] != config.feat_dim {
        return Err(Error::config(format!(
            "features of shape {shape:?} do not match feat_dim {}",
            config.feat_dim
        )));
    }
    let x = linear(g, features, p.feature_proj, p.feature_bias)?;
    let pe = g.constant(positional_encoding(shape[1], config.d_model)?);
    let x = g.add(x, pe)?;
    let att = multi_head_attention(g, x, x, &p.enc_attn, config.n_heads, None)?;
    let x = g.add(x, att.output)?;
    let eps = T::lit(LAYER_NORM_EPS);
    g.layer_norm(x, p.enc_norm.gain, p.enc_norm.bias, eps)
}

/// Decoder over `batch` token rows (row-major in `tokens`), attending to
/// `memory`. Returns logits of shape `[batch, T, vocab_size]`.
///
/// Sub-layers: causal self-attention, cross-attention, position-wise
/// feed-forward; each is followed by residual add and post-norm.
pub fn decoder_forward<T: Real>(
    g: &mut Graph<'_, T>,
    tokens: &[usize],
    batch: usize,
    memory: Var,
    p: &ParamSet<Var>,
    config: &ModelConfig,
) -> Result<Var> {
    if batch == 0 || tokens.is_empty() || !tokens.len().is_multiple_of(batch) {
        return Err(Error::contract(format!(
            "{} tokens cannot form {batch} rows",
            tokens.len()
        )));
    }
    let t = tokens.len() / batch;
    if t > config.seq_len {
        return Err(Error::contract(format!(
            "decoder length {t} exceeds seq_len {}",
            config.seq_len
        )));
    }
    let ms = g.shape(memory);
    if ms.len() != 3 || ms[0] != batch || ms[2] != config.d_model {
        return Err(Error::Shape {
            op: "decoder memory",
            lhs: ms.to_vec(),
            rhs: vec![batch, t, config.d_model],
        });
    }
    let eps = T::lit(LAYER_NORM_EPS);
    let emb = g.embedding(p.token_embedding, tokens, &[batch, t])?;
    let emb = g.scale(emb, T::lit((config.d_model as f64).sqrt()));
    let pe = g.constant(positional_encoding(t, config.d_model)?);
    let x = g.add(emb, pe)?;

    let mask = causal_mask(t)?;
    let att = multi_head_attention(g, x, x, &p.dec_self_attn, config.n_heads, Some(&mask))?;
    let x = g.add(x, att.output)?;
    let x = g.layer_norm(x, p.dec_norm1.gain, p.dec_norm1.bias, eps)?;

    let cross = multi_head_attention(g, x, memory, &p.dec_cross_attn, config.n_heads, None)?;
    let x = g.add(x, cross.output)?;
    let x = g.layer_norm(x, p.dec_norm2.gain, p.dec_norm2.bias, eps)?;

    let h = linear(g, x, p.ffn_in, p.ffn_in_bias)?;
    let h = g.relu(h);
    let h = linear(g, h, p.ffn_out, p.ffn_out_bias)?;
    let x = g.add(x, h)?;
    let x = g.layer_norm(x, p.dec_norm3.gain, p.dec_norm3.bias, eps)?;

    linear(g, x, p.head, p.head_bias)
}

/// Teacher-forced masked cross-entropy for one batch.
#[allow(clippy::too_many_arguments)]
pub fn caption_loss<T: Real>(
    g: &mut Graph<'_, T>,
    p: &ParamSet<Var>,
    config: &ModelConfig,
    features: Var,
    input_ids: &[usize],
    target_ids: &[usize],
    pad_mask: &[bool],
    batch: usize,
) -> Result<Var> {
    let memory = encoder_forward(g, features, p, config)?;
    let logits = decoder_forward(g, input_ids, batch, memory, p, config)?;
    g.cross_entropy(logits, target_ids, pad_mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            seq_len: 6,
            vocab_size: 8,
            feat_dim: 6,
            feat_len: 4,
            ffn_dim: 16,
        }
    }

    fn normal(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn default_encoder_output_shape() {
        let config = ModelConfig {
            vocab_size: 16,
            ..Default::default()
        };
        let model = CaptionModel::<f32>::new(config.clone(), 0).unwrap();
        let mem = model.encode(&normal(&[1, 4, config.feat_dim], 1)).unwrap();
        assert_eq!(mem.shape(), &[1, 4, 512]);
        assert!(mem.is_finite());
    }

    #[test]
    fn zero_features_leave_only_the_position_path() {
        let mut model = CaptionModel::<f64>::new(toy(), 3).unwrap();
        // zero biases already; zero the projection so the feature path is inert
        model.params_mut().feature_proj = Tensor::zeros(&[6, 8]).with_requires_grad(true);
        let a = model.encode(&Tensor::zeros(&[1, 4, 6])).unwrap();
        let b = model.encode(&normal(&[1, 4, 6], 9).cast()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_sample_gives_repeated_memory_rows() {
        let model = CaptionModel::<f32>::new(toy(), 1).unwrap();
        let one = normal(&[1, 4, 6], 2);
        let mut twice = one.data().to_vec();
        twice.extend_from_slice(one.data());
        let two = Tensor::new(vec![2, 4, 6], twice).unwrap();
        let m1 = model.encode(&one).unwrap();
        let m2 = model.encode(&two).unwrap();
        assert_eq!(&m2.data()[..32], m1.data());
        assert_eq!(&m2.data()[32..], m1.data());
    }

    #[test]
    fn encoder_rejects_wrong_feature_width() {
        let model = CaptionModel::<f32>::new(toy(), 1).unwrap();
        assert!(matches!(
            model.encode(&normal(&[1, 4, 5], 2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn decoder_contract_errors() {
        let model = CaptionModel::<f32>::new(toy(), 1).unwrap();
        let mem = model.encode(&normal(&[1, 4, 6], 2)).unwrap();
        assert!(matches!(
            model.decode_logits(&[1, 9], 1, &mem),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            model.decode_logits(&[1; 7], 1, &mem),
            Err(Error::Contract(_))
        ));
        let logits = model.decode_logits(&[1], 1, &mem).unwrap();
        assert_eq!(logits.shape(), &[1, 1, 8]);
        assert!(logits.is_finite());
    }

    #[test]
    fn perturbing_a_token_leaves_earlier_logits_identical() {
        let model = CaptionModel::<f32>::new(toy(), 4).unwrap();
        let mem = model.encode(&normal(&[1, 4, 6], 5)).unwrap();
        let a = [1, 4, 5, 6, 7, 2];
        let mut b = a;
        b[3] = 3;
        let la = model.decode_logits(&a, 1, &mem).unwrap();
        let lb = model.decode_logits(&b, 1, &mem).unwrap();
        assert_eq!(&la.data()[..3 * 8], &lb.data()[..3 * 8]);
        assert_ne!(&la.data()[3 * 8..], &lb.data()[3 * 8..]);
    }

    #[test]
    fn memory_is_consumed() {
        let model = CaptionModel::<f32>::new(toy(), 4).unwrap();
        let mem = model.encode(&normal(&[1, 4, 6], 5)).unwrap();
        let zero = Tensor::zeros(mem.shape());
        let a = model.decode_logits(&[1, 4], 1, &mem).unwrap();
        let b = model.decode_logits(&[1, 4], 1, &zero).unwrap();
        assert_ne!(a, b);
    }
}
