use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::ndcore::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Query/key/value/output projections of one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<P> {
    pub wq: P,
    pub wk: P,
    pub wv: P,
    pub wo: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<P> {
    pub gain: P,
    pub bias: P,
}

/// Every learnable slot of the captioning model, generic over what is
/// stored in each slot: tensors for weights, [`Var`]s once bound to a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<P> {
    pub token_embedding: P,
    pub feature_proj: P,
    pub feature_bias: P,
    pub enc_attn: Attention<P>,
    pub enc_norm: Norm<P>,
    pub dec_self_attn: Attention<P>,
    pub dec_norm1: Norm<P>,
    pub dec_cross_attn: Attention<P>,
    pub dec_norm2: Norm<P>,
    pub ffn_in: P,
    pub ffn_in_bias: P,
    pub ffn_out: P,
    pub ffn_out_bias: P,
    pub dec_norm3: Norm<P>,
    pub head: P,
    pub head_bias: P,
}

/// Learnable tensors of the model.
pub type ModelParams<T = f32> = ParamSet<Tensor<T>>;

macro_rules! param_slots {
    ($($($field:ident).+ => $name:literal),* $(,)?) => {
        impl<P> ParamSet<P> {
            /// Checkpoint names, in canonical order.
            pub const NAMES: &'static [&'static str] = &[$($name),*];

            pub fn visit<'s>(&'s self, mut f: impl FnMut(&'static str, &'s P)) {
                $( f($name, &self.$($field).+); )*
            }

            pub fn visit_mut<'s>(&'s mut self, mut f: impl FnMut(&'static str, &'s mut P)) {
                $( f($name, &mut self.$($field).+); )*
            }
        }
    };
}

param_slots! {
    token_embedding => "token_embedding",
    feature_proj => "encoder.feature_proj.w",
    feature_bias => "encoder.feature_proj.b",
    enc_attn.wq => "encoder.attn.wq",
    enc_attn.wk => "encoder.attn.wk",
    enc_attn.wv => "encoder.attn.wv",
    enc_attn.wo => "encoder.attn.wo",
    enc_norm.gain => "encoder.norm.gain",
    enc_norm.bias => "encoder.norm.bias",
    dec_self_attn.wq => "decoder.self_attn.wq",
    dec_self_attn.wk => "decoder.self_attn.wk",
    dec_self_attn.wv => "decoder.self_attn.wv",
    dec_self_attn.wo => "decoder.self_attn.wo",
    dec_norm1.gain => "decoder.norm1.gain",
    dec_norm1.bias => "decoder.norm1.bias",
    dec_cross_attn.wq => "decoder.cross_attn.wq",
    dec_cross_attn.wk => "decoder.cross_attn.wk",
    dec_cross_attn.wv => "decoder.cross_attn.wv",
    dec_cross_attn.wo => "decoder.cross_attn.wo",
    dec_norm2.gain => "decoder.norm2.gain",
    dec_norm2.bias => "decoder.norm2.bias",
    ffn_in => "decoder.ffn.w1",
    ffn_in_bias => "decoder.ffn.b1",
    ffn_out => "decoder.ffn.w2",
    ffn_out_bias => "decoder.ffn.b2",
    dec_norm3.gain => "decoder.norm3.gain",
    dec_norm3.bias => "decoder.norm3.bias",
    head => "head.w",
    head_bias => "head.b",
}

impl<P> ParamSet<P> {
    /// Builds a set slot by slot, in [`ParamSet::NAMES`] order.
    pub fn try_from_fn<E>(mut f: impl FnMut(&'static str) -> Result<P, E>) -> Result<Self, E> {
        // struct-literal fields are evaluated in source order
        Ok(Self {
            token_embedding: f("token_embedding")?,
            feature_proj: f("encoder.feature_proj.w")?,
            feature_bias: f("encoder.feature_proj.b")?,
            enc_attn: Attention {
                wq: f("encoder.attn.wq")?,
                wk: f("encoder.attn.wk")?,
                wv: f("encoder.attn.wv")?,
                wo: f("encoder.attn.wo")?,
            },
            enc_norm: Norm {
                gain: f("encoder.norm.gain")?,
                bias: f("encoder.norm.bias")?,
            },
            dec_self_attn: Attention {
                wq: f("decoder.self_attn.wq")?,
                wk: f("decoder.self_attn.wk")?,
                wv: f("decoder.self_attn.wv")?,
                wo: f("decoder.self_attn.wo")?,
            },
            dec_norm1: Norm {
                gain: f("decoder.norm1.gain")?,
                bias: f("decoder.norm1.bias")?,
            },
            dec_cross_attn: Attention {
                wq: f("decoder.cross_attn.wq")?,
                wk: f("decoder.cross_attn.wk")?,
                wv: f("decoder.cross_attn.wv")?,
                wo: f("decoder.cross_attn.wo")?,
            },
            dec_norm2: Norm {
                gain: f("decoder.norm2.gain")?,
                bias: f("decoder.norm2.bias")?,
            },
            ffn_in: f("decoder.ffn.w1")?,
            ffn_in_bias: f("decoder.ffn.b1")?,
            ffn_out: f("decoder.ffn.w2")?,
            ffn_out_bias: f("decoder.ffn.b2")?,
            dec_norm3: Norm {
                gain: f("decoder.norm3.gain")?,
                bias: f("decoder.norm3.bias")?,
            },
            head: f("head.w")?,
            head_bias: f("head.b")?,
        })
    }

    pub fn try_map<Q, E>(
        &self,
        mut f: impl FnMut(&'static str, &P) -> Result<Q, E>,
    ) -> Result<ParamSet<Q>, E> {
        let mut mapped = Vec::with_capacity(Self::NAMES.len());
        let mut err = None;
        self.visit(|name, p| {
            if err.is_none() {
                match f(name, p) {
                    Ok(q) => mapped.push(q),
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let mut it = mapped.into_iter();
        ParamSet::try_from_fn(|_| Ok(it.next().expect("one value per slot")))
    }

    pub fn names(&self) -> &'static [&'static str] {
        Self::NAMES
    }

    /// Slots in [`ParamSet::NAMES`] order.
    pub fn slots(&self) -> Vec<&P> {
        let mut out = Vec::with_capacity(Self::NAMES.len());
        self.visit(|_, p| out.push(p));
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::with_capacity(Self::NAMES.len());
        self.visit_mut(|_, p| out.push(p));
        out
    }
}

/// Expected shape of the named slot under `config`.
pub fn slot_shape(config: &ModelConfig, name: &str) -> Vec<usize> {
    let (d, v, f, h) = (
        config.d_model,
        config.vocab_size,
        config.feat_dim,
        config.ffn_dim,
    );
    match name {
        "token_embedding" => vec![v, d],
        "encoder.feature_proj.w" => vec![f, d],
        "decoder.ffn.w1" => vec![d, h],
        "decoder.ffn.b1" => vec![h],
        "decoder.ffn.w2" => vec![h, d],
        "head.w" => vec![d, v],
        "head.b" => vec![v],
        n if n.ends_with(".wq") || n.ends_with(".wk") || n.ends_with(".wv") || n.ends_with(".wo") => {
            vec![d, d]
        }
        _ => vec![d],
    }
}

impl<T: Real> ParamSet<Tensor<T>> {
    /// Seeded initialisation: glorot-uniform projections, `N(0, 1/√d)` token
    /// embeddings, unit norm gains and zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed_std = (config.d_model as f64).powf(-0.5);
        let normal = Normal::new(0.0, embed_std).expect("positive std");
        Self::try_from_fn(|name| {
            let shape = slot_shape(config, name);
            let t = if name == "token_embedding" {
                Tensor::from_fn(&shape, |_| T::lit(normal.sample(&mut rng)))
            } else if name.ends_with(".gain") {
                Tensor::ones(&shape)
            } else if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                Tensor::from_fn(&shape, |_| T::lit(rng.random_range(-limit..limit)))
            } else {
                Tensor::zeros(&shape)
            };
            Ok(t.with_requires_grad(true))
        })
    }

    /// Shape-checks every slot against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let mut bad = None;
        self.visit(|name, t| {
            let want = slot_shape(config, name);
            if bad.is_none() && t.shape() != want.as_slice() {
                bad = Some(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        });
        bad.map_or(Ok(()), Err)
    }

    /// Records every tensor on `g` by reference.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>, trainable: bool) -> ParamSet<Var> {
        let mut vars = Vec::with_capacity(Self::NAMES.len());
        self.visit(|_, t| vars.push(g.borrowed(t, trainable)));
        let mut vars = vars.into_iter();
        ParamSet::try_from_fn::<std::convert::Infallible>(|_| Ok(vars.next().expect("one var per slot")))
            .expect("infallible")
    }

    /// Adds each bound variable's graph gradient into its tensor's grad slot.
    pub fn accumulate_grads(&mut self, g: &Graph<'_, T>, bound: &ParamSet<Var>) -> Result<()> {
        let mut vars = Vec::with_capacity(Self::NAMES.len());
        bound.visit(|_, &v| vars.push(v));
        let mut vars = vars.into_iter();
        let mut result = Ok(());
        self.visit_mut(|_, t| {
            let v = vars.next().expect("one var per slot");
            if let (Ok(()), Some(grad)) = (&result, g.grad(v)) {
                result = t.accumulate_grad(grad);
            }
        });
        result
    }

    pub fn zero_grads(&mut self) {
        self.visit_mut(|_, t| t.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> ParamSet<Tensor<U>> {
        self.try_map::<_, std::convert::Infallible>(|_, t| Ok(t.cast()))
            .expect("infallible")
    }

    pub fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, t| ok &= t.is_finite());
        ok
    }
}
