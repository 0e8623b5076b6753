use crate::ndcore::{Real, Tensor};
use crate::transformer::{ModelParams, ParamSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments shaped like the parameters, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: ParamSet<Tensor<T>>,
    pub v: ParamSet<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = params.try_map::<_, std::convert::Infallible>(|_, p| Ok(Tensor::zeros(p.shape())));
        let zeros = zeros.expect("infallible");
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update of a flat buffer at step `t` (already incremented).
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::lit(1.0 - cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::lit(cfg.learning_rate), T::lit(cfg.eps));
    let one = T::one();
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one optimizer step to every parameter. Every slot needs a
/// gradient of matching length.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ParamSet<Option<Vec<T>>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let names = ParamSet::<()>::NAMES;
    let grads = grads.slots();
    let mut ps = params.slots_mut();
    for ((name, g), p) in names.iter().zip(&grads).zip(&ps) {
        match g {
            None => return Err(Error::contract(format!("no gradient for parameter {name}"))),
            Some(g) if g.len() != p.numel() => {
                return Err(Error::contract(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    p.numel()
                )))
            }
            _ => {}
        }
    }
    state.t += 1;
    let ms = state.m.slots_mut();
    let vs = state.v.slots_mut();
    for (((p, g), m), v) in ps.iter_mut().zip(grads).zip(ms).zip(vs) {
        let g = g.as_deref().expect("checked above");
        adam_update(p.data_mut(), g, m.data_mut(), v.data_mut(), state.t, cfg);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ModelConfig;
    use proptest::prelude::*;

    /// Textbook scalar Adam in 64-bit.
    fn scalar_adam(x: f64, g: f64, m: f64, v: f64, t: u64, cfg: &AdamConfig) -> (f64, f64, f64) {
        let m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t as i32));
        let vh = v / (1.0 - cfg.beta2.powi(t as i32));
        (x - cfg.learning_rate * mh / (vh.sqrt() + cfg.eps), m, v)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let (mut x, mut m, mut v) = ([0.0f64], [0.0], [0.0]);
        adam_update(&mut x, &[2.0], &mut m, &mut v, 1, &cfg);
        assert!((x[0] + 0.1).abs() < 1e-8, "{}", x[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdamConfig::default();
        let (mut x, mut m, mut v) = ([1.5f32, -2.0], [0.0; 2], [0.0; 2]);
        for t in 1..5 {
            adam_update(&mut x, &[0.0, 0.0], &mut m, &mut v, t, &cfg);
        }
        assert_eq!(x, [1.5, -2.0]);
    }

    #[test]
    fn ten_steps_on_square_follow_scalar_reference() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let (mut x, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        let (mut rx, mut rm, mut rv) = (1.0, 0.0, 0.0);
        for t in 1..=10 {
            let g = 2.0 * x[0];
            adam_update(&mut x, &[g], &mut m, &mut v, t, &cfg);
            (rx, rm, rv) = scalar_adam(rx, 2.0 * rx, rm, rv, t, &cfg);
            assert!((x[0] - rx).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let config = ModelConfig {
            d_model: 4,
            n_heads: 2,
            seq_len: 4,
            vocab_size: 6,
            feat_dim: 3,
            feat_len: 2,
            ffn_dim: 4,
        };
        let mut params = ModelParams::<f64>::init(&config, 0).unwrap();
        let mut state = AdamState::new(&params);
        let mut grads = params.try_map::<_, ()>(|_, p| Ok(Some(vec![0.0; p.numel()]))).unwrap();
        grads.dec_norm2.bias = None;
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("decoder.norm2.bias"), "{err}");
        assert_eq!(state.t, 0);
        grads.dec_norm2.bias = Some(vec![1.0; 4]);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(state.t, 1);
        assert!(params.dec_norm2.bias.data().iter().all(|&b| (b + 1e-4).abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn random_states_match_scalar_oracle(
            x in -10.0f64..10.0, g in -10.0f64..10.0, m in -1.0f64..1.0,
            v in 0.0f64..4.0, t in 1u64..1000, lr in 1e-5f64..1e-1,
        ) {
            let cfg = AdamConfig { learning_rate: lr, ..Default::default() };
            let (ex, em, ev) = scalar_adam(x, g, m, v, t, &cfg);
            let (mut px, mut pm, mut pv) = ([x], [m], [v]);
            adam_update(&mut px, &[g], &mut pm, &mut pv, t, &cfg);
            for (a, b) in [(px[0], ex), (pm[0], em), (pv[0], ev)] {
                prop_assert!((a - b).abs() / a.abs().max(b.abs()).max(1e-12) < 1e-6);
            }
        }
    }
}
