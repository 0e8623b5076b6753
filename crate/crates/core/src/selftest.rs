//! Built-in verification suites: `gradcheck`, `causality` and `bleu`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::captioner::{corpus_bleu, modified_ngram_precision, oracle, sentence_bleu, BleuConfig};
use crate::ndcore::{grad_check, Graph, Tensor, Var, LAYER_NORM_EPS};
use crate::transformer::{
    caption_loss, causal_mask, multi_head_attention, CaptionModel, ModelConfig, ModelParams,
    ParamSet,
};
use crate::Result;

/// Largest accepted relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Largest accepted BLEU deviation from the brute-force scorer.
pub const BLEU_TOLERANCE: f64 = 1e-9;
const GRAD_EPS: f64 = 1e-5;

pub const SUITES: [&str; 3] = ["gradcheck", "causality", "bleu"];

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// One measured check inside a suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub error: f64,
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Toy architecture: vocab 8, d_model 8, 2 heads, T = 4, features 4×6.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        seq_len: 5,
        vocab_size: 8,
        feat_dim: 6,
        feat_len: 4,
        ffn_dim: 16,
    }
}

fn constants<'g>(g: &mut Graph<'g, f64>, params: &ModelParams<f64>) -> ParamSet<Var> {
    params
        .try_map::<_, std::convert::Infallible>(|_, t| Ok(g.constant(t.clone())))
        .expect("infallible")
}

/// Relative gradient error of every differentiable primitive, each on
/// random 64-bit inputs.
pub fn primitive_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut check = |name: &str, err: f64| {
        out.push(Check {
            name: name.to_owned(),
            error: err,
        })
    };
    // weighted sums keep every output element's gradient distinct
    let w = normal(&[2, 3, 4], &mut rng);
    let weighted = move |g: &mut Graph<'_, f64>, y: Var| -> Result<Var> {
        let wv = g.constant(w.reshape(g.shape(y))?);
        let p = g.mul(y, wv)?;
        Ok(g.sum(p))
    };

    let x = normal(&[2, 3, 4], &mut rng);
    let b = normal(&[4, 3], &mut rng);
    let bias = normal(&[4], &mut rng);
    let other = normal(&[2, 3, 4], &mut rng);

    let bc = b.clone();
    check("matmul", grad_check(move |g, x| {
        let bv = g.constant(bc.clone());
        let y = g.matmul(x, bv)?;
        let y = g.mul(y, y)?;
        let z = g.sum(y);
        Ok(g.scale(z, 0.5))
    }, &x, GRAD_EPS)?);
    let xc = x.clone();
    check("matmul_rhs", grad_check(move |g, bv| {
        let xv = g.constant(xc.clone());
        let y = g.matmul(xv, bv)?;
        let y = g.relu(y);
        Ok(g.sum(y))
    }, &b, GRAD_EPS)?);
    let (bi, wc) = (bias.clone(), weighted.clone());
    check("add_broadcast", grad_check(move |g, x| {
        let bv = g.constant(bi.clone());
        let y = g.add(x, bv)?;
        wc(g, y)
    }, &x, GRAD_EPS)?);
    let xc = x.clone();
    check("add_broadcast_bias", grad_check(move |g, bv| {
        let xv = g.constant(xc.clone());
        let y = g.add(xv, bv)?;
        let y = g.mul(y, y)?;
        Ok(g.sum(y))
    }, &bias, GRAD_EPS)?);
    let (oc, wc) = (other.clone(), weighted.clone());
    check("mul", grad_check(move |g, x| {
        let o = g.constant(oc.clone());
        let y = g.mul(x, o)?;
        let y = g.mul(y, x)?;
        wc(g, y)
    }, &x, GRAD_EPS)?);
    let wc = weighted.clone();
    check("scale", grad_check(move |g, x| {
        let y = g.scale(x, -1.75);
        wc(g, y)
    }, &x, GRAD_EPS)?);
    let wc = weighted.clone();
    // shift away from the kink so the finite difference is smooth
    let shifted = Tensor::from_fn(&[2, 3, 4], |i| {
        let v = x.data()[i];
        if v.abs() < 0.05 { v + 0.1 } else { v }
    });
    check("relu", grad_check(move |g, x| {
        let y = g.relu(x);
        wc(g, y)
    }, &shifted, GRAD_EPS)?);
    let wc = weighted.clone();
    check("reshape_permute", grad_check(move |g, x| {
        let y = g.reshape(x, &[6, 4])?;
        let y = g.permute(y, &[1, 0])?;
        let y = g.reshape(y, &[4, 3, 2])?;
        let y = g.permute(y, &[2, 1, 0])?;
        let y = g.reshape(y, &[2, 3, 4])?;
        wc(g, y)
    }, &x, GRAD_EPS)?);
    let wc = weighted.clone();
    let keep: Vec<bool> = (0..24).map(|i| i % 5 != 2).collect();
    check("mask_fill_softmax", grad_check(move |g, x| {
        let y = g.mask_fill(x, keep.clone())?;
        let y = g.softmax(y, 2)?;
        wc(g, y)
    }, &x, GRAD_EPS)?);
    for axis in 0..3 {
        let wc = weighted.clone();
        check(&format!("softmax_axis{axis}"), grad_check(move |g, x| {
            let y = g.softmax(x, axis)?;
            wc(g, y)
        }, &x, GRAD_EPS)?);
    }
    let gain = normal(&[4], &mut rng);
    let beta = normal(&[4], &mut rng);
    let (gc, bc, wc) = (gain.clone(), beta.clone(), weighted.clone());
    check("layer_norm", grad_check(move |g, x| {
        let gv = g.constant(gc.clone());
        let bv = g.constant(bc.clone());
        let y = g.layer_norm(x, gv, bv, LAYER_NORM_EPS)?;
        wc(g, y)
    }, &x, GRAD_EPS)?);
    let (xc, bc, wc) = (x.clone(), beta.clone(), weighted.clone());
    check("layer_norm_gain", grad_check(move |g, gv| {
        let xv = g.constant(xc.clone());
        let bv = g.constant(bc.clone());
        let y = g.layer_norm(xv, gv, bv, LAYER_NORM_EPS)?;
        wc(g, y)
    }, &gain, GRAD_EPS)?);
    let table = normal(&[5, 4], &mut rng);
    check("embedding", grad_check(|g, t| {
        let e = g.embedding(t, &[0, 3, 3, 1, 4, 0], &[2, 3])?;
        let e = g.mul(e, e)?;
        Ok(g.sum(e))
    }, &table, GRAD_EPS)?);
    let targets = [1usize, 0, 3, 3, 2, 1];
    let mask = [true, true, false, true, true, true];
    check("cross_entropy", grad_check(move |g, x| {
        let y = g.reshape(x, &[2, 3, 4])?;
        g.cross_entropy(y, &targets, &mask)
    }, &x, GRAD_EPS)?);

    let (kv, wq) = (normal(&[2, 5, 4], &mut rng), 4usize);
    let weights: Vec<Tensor<f64>> = (0..4).map(|_| normal(&[wq, wq], &mut rng)).collect();
    let wc = weighted.clone();
    check("multi_head_attention", grad_check(move |g, x| {
        let kvv = g.constant(kv.clone());
        let w: Vec<Var> = weights.iter().map(|t| g.constant(t.clone())).collect();
        let att = crate::transformer::Attention { wq: w[0], wk: w[1], wv: w[2], wo: w[3] };
        let self_mask = causal_mask(3)?;
        let s = multi_head_attention(g, x, x, &att, 2, Some(&self_mask))?;
        let c = multi_head_attention(g, s.output, kvv, &att, 2, None)?;
        wc(g, c.output)
    }, &x, GRAD_EPS)?);
    Ok(out)
}

/// Relative error of the full encoder-decoder loss gradient for every
/// parameter slot of the toy model.
pub fn model_checks(seed: u64) -> Result<Vec<Check>> {
    let config = toy_config();
    let params = ModelParams::<f64>::init(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let batch = 2;
    let t = 4;
    let features = normal(&[batch, config.feat_len, config.feat_dim], &mut rng);
    let tokens: Vec<usize> = (0..batch * (t + 1)).map(|_| rng.random_range(0..config.vocab_size)).collect();
    let input: Vec<usize> = (0..batch).flat_map(|b| tokens[b * (t + 1)..b * (t + 1) + t].to_vec()).collect();
    let target: Vec<usize> = (0..batch).flat_map(|b| tokens[b * (t + 1) + 1..(b + 1) * (t + 1)].to_vec()).collect();
    let mask: Vec<bool> = (0..batch * t).map(|i| i != batch * t - 1).collect();

    let mut out = Vec::new();
    for (k, name) in ModelParams::<f64>::NAMES.iter().enumerate() {
        let x = params.slots()[k].clone();
        let err = grad_check(
            |g, xv| {
                let mut p = constants(g, &params);
                *p.slots_mut()[k] = xv;
                let f = g.constant(features.clone());
                caption_loss(g, &p, &config, f, &input, &target, &mask, batch)
            },
            &x,
            GRAD_EPS,
        )?;
        out.push(Check {
            name: (*name).to_owned(),
            error: err,
        });
    }
    Ok(out)
}

/// Perturbs one random decoder input position per trial and returns how
/// many trials changed any logit bit before that position.
pub fn causality_violations(trials: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = toy_config();
    let mut violations = 0;
    for trial in 0..trials {
        let model = CaptionModel::<f32>::new(config.clone(), seed.wrapping_add(trial as u64))?;
        let t = rng.random_range(2..=config.seq_len);
        let features = Tensor::from_fn(&[1, config.feat_len, config.feat_dim], |_| {
            StandardNormal.sample(&mut rng)
        });
        let tokens: Vec<usize> = (0..t).map(|_| rng.random_range(0..config.vocab_size)).collect();
        let pos = rng.random_range(1..t);
        let mut changed = tokens.clone();
        changed[pos] = (tokens[pos] + rng.random_range(1..config.vocab_size)) % config.vocab_size;
        let memory = model.encode(&features)?;
        let a = model.decode_logits(&tokens, 1, &memory)?;
        let b = model.decode_logits(&changed, 1, &memory)?;
        let prefix = pos * config.vocab_size;
        let same = a.data()[..prefix]
            .iter()
            .zip(&b.data()[..prefix])
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if !same {
            violations += 1;
        }
    }
    Ok(violations)
}

fn random_sentence(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

/// Largest deviation between [`corpus_bleu`] / [`sentence_bleu`] and the
/// brute-force scorer over `cases` random corpora (vocab ≤ 10, lengths ≤ 8).
pub fn bleu_oracle_deviation(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let vocab = rng.random_range(1..=10);
        let segs: Vec<(Vec<String>, Vec<Vec<String>>)> = (0..rng.random_range(1..=4))
            .map(|_| {
                let h = random_sentence(&mut rng, vocab, 8);
                let refs = (0..rng.random_range(1..=5)).map(|_| random_sentence(&mut rng, vocab, 8)).collect();
                (h, refs)
            })
            .collect();
        let view: Vec<(&[String], &[Vec<String>])> = segs.iter().map(|(h, r)| (&h[..], &r[..])).collect();
        for n in 1..=4 {
            worst = worst.max((corpus_bleu(&view, n) - oracle::bleu(&segs, n, None)).abs());
            let (h, r) = &segs[0];
            let ours = sentence_bleu(h, r, &BleuConfig::sentence(), n);
            let theirs = oracle::bleu(&segs[..1], n, Some(BleuConfig::EPSILON));
            worst = worst.max((ours - theirs).abs());
        }
    }
    worst
}

/// The textbook clipping example: "the" ×7 against "the cat is on the mat".
pub fn clipped_unigram_example() -> (u64, u64) {
    let hyp = vec!["the"; 7];
    let refs = [vec!["the", "cat", "is", "on", "the", "mat"]];
    modified_ngram_precision(&hyp, &refs, 1)
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteReport {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteReport {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn gradcheck_suite() -> SuiteReport {
    timed("gradcheck", || {
        let mut checks = primitive_checks(1)?;
        checks.extend(model_checks(2)?);
        let worst = checks
            .iter()
            .max_by(|a, b| a.error.total_cmp(&b.error))
            .expect("non-empty");
        Ok((
            worst.error < GRAD_TOLERANCE,
            format!("{} checks, max rel err {:.2e} ({})", checks.len(), worst.error, worst.name),
        ))
    })
}

pub fn causality_suite() -> SuiteReport {
    timed("causality", || {
        let trials = 50;
        let bad = causality_violations(trials, 3)?;
        Ok((bad == 0, format!("{bad}/{trials} trials leaked future tokens")))
    })
}

pub fn bleu_suite() -> SuiteReport {
    timed("bleu", || {
        let dev = bleu_oracle_deviation(200, 4);
        let example = clipped_unigram_example();
        Ok((
            dev <= BLEU_TOLERANCE && example == (2, 7),
            format!("max deviation {dev:.1e} over 200 cases; clipped unigrams {}/{}", example.0, example.1),
        ))
    })
}

pub fn run_suite(name: &str) -> Option<SuiteReport> {
    match name {
        "gradcheck" => Some(gradcheck_suite()),
        "causality" => Some(causality_suite()),
        "bleu" => Some(bleu_suite()),
        _ => None,
    }
}

pub fn run_all() -> Vec<SuiteReport> {
    SUITES.iter().filter_map(|s| run_suite(s)).collect()
}
