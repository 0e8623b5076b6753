use std::collections::HashMap;
use std::hash::Hash;

/// Highest n-gram order scored.
pub const MAX_ORDER: usize = 4;

/// Zero-precision handling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothing {
    None,
    /// A zero precision `0/total` becomes `eps / max(1, total)`.
    AddEpsilon(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuConfig {
    pub max_order: usize,
    pub smoothing: Smoothing,
}

impl BleuConfig {
    pub const EPSILON: f64 = 1e-9;

    /// Unsmoothed, for corpus scores.
    pub fn corpus() -> Self {
        Self {
            max_order: MAX_ORDER,
            smoothing: Smoothing::None,
        }
    }

    /// Epsilon-smoothed, for per-sentence scores.
    pub fn sentence() -> Self {
        Self {
            max_order: MAX_ORDER,
            smoothing: Smoothing::AddEpsilon(Self::EPSILON),
        }
    }

    /// Uniform weights `1/n` over orders `1..=n`.
    pub fn weights(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self::corpus()
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if n >= 1 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Hypothesis n-gram matches, each clipped by its largest count in any
/// single reference, and the number of hypothesis n-grams.
pub fn modified_ngram_precision<T, R>(hypothesis: &[T], references: &[R], n: usize) -> (u64, u64)
where
    T: Eq + Hash,
    R: AsRef<[T]>,
{
    assert!(n >= 1, "n-gram order must be at least 1");
    if hypothesis.len() < n {
        return (0, 0);
    }
    let hyp = ngram_counts(hypothesis, n);
    let mut max_ref: HashMap<&[T], u64> = HashMap::new();
    for r in references {
        for (gram, count) in ngram_counts(r.as_ref(), n) {
            if hyp.contains_key(gram) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
    }
    let clipped = hyp
        .iter()
        .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
        .sum();
    (clipped, (hypothesis.len() + 1 - n) as u64)
}

/// Length of the reference closest to `hyp_len`; ties go to the shorter.
pub fn closest_ref_len<R: AsRef<[T]>, T>(hyp_len: usize, references: &[R]) -> usize {
    references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

/// Pooled counts over any number of segments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn segment<T, R>(hypothesis: &[T], references: &[R]) -> Self
    where
        T: Eq + Hash,
        R: AsRef<[T]>,
    {
        let mut s = Self {
            hyp_len: hypothesis.len() as u64,
            ref_len: closest_ref_len(hypothesis.len(), references) as u64,
            ..Self::default()
        };
        for k in 0..MAX_ORDER {
            (s.matches[k], s.totals[k]) = modified_ngram_precision(hypothesis, references, k + 1);
        }
        s
    }

    pub fn add(&mut self, other: &Self) {
        for k in 0..MAX_ORDER {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        (1.0 - r / c).exp().min(1.0)
    }

    /// BLEU-n from these counts.
    pub fn score(&self, n: usize, smoothing: Smoothing) -> f64 {
        assert!((1..=MAX_ORDER).contains(&n), "BLEU order {n} outside 1..={MAX_ORDER}");
        if self.hyp_len == 0 {
            return 0.0;
        }
        let w = 1.0 / n as f64;
        let mut log_sum = 0.0;
        for k in 0..n {
            let (m, t) = (self.matches[k], self.totals[k]);
            let p = match (m, smoothing) {
                (0, Smoothing::None) => return 0.0,
                (0, Smoothing::AddEpsilon(eps)) => eps / t.max(1) as f64,
                _ => m as f64 / t as f64,
            };
            log_sum += w * p.ln();
        }
        self.brevity_penalty() * log_sum.exp()
    }
}

/// Pooled-count corpus BLEU-n, never smoothed. Zero when every hypothesis
/// is empty.
pub fn corpus_bleu<T, R>(segments: &[(&[T], &[R])], n: usize) -> f64
where
    T: Eq + Hash,
    R: AsRef<[T]>,
{
    corpus_stats(segments).score(n, Smoothing::None)
}

pub fn corpus_stats<T, R>(segments: &[(&[T], &[R])]) -> BleuStats
where
    T: Eq + Hash,
    R: AsRef<[T]>,
{
    let mut total = BleuStats::default();
    for (h, r) in segments {
        total.add(&BleuStats::segment(h, r));
    }
    total
}

/// Single-segment BLEU-n with `config.smoothing`.
pub fn sentence_bleu<T, R>(hypothesis: &[T], references: &[R], config: &BleuConfig, n: usize) -> f64
where
    T: Eq + Hash,
    R: AsRef<[T]>,
{
    BleuStats::segment(hypothesis, references).score(n, config.smoothing)
}
