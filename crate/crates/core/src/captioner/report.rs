use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{greedy_decode, BleuConfig, BleuStats, MAX_ORDER};
use crate::datapipe::Dataset;
use crate::ndcore::Real;
use crate::textpipe::Vocab;
use crate::transformer::CaptionModel;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionResult {
    pub image_id: String,
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
    /// Smoothed sentence BLEU-1..4.
    pub bleu: [f64; MAX_ORDER],
}

/// Per-image results, sorted by image id, with pooled corpus scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub results: Vec<CaptionResult>,
    /// Corpus BLEU-1..4.
    pub corpus: [f64; MAX_ORDER],
}

impl Evaluation {
    pub fn from_results(mut results: Vec<CaptionResult>) -> Self {
        results.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let mut stats = BleuStats::default();
        for r in &results {
            stats.add(&BleuStats::segment(&r.hypothesis, &r.references));
        }
        let corpus = std::array::from_fn(|k| stats.score(k + 1, BleuConfig::corpus().smoothing));
        Self { results, corpus }
    }

    pub fn bleu4(&self) -> f64 {
        self.corpus[3]
    }

    /// CSV report: one row per image, then a `#CORPUS` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,hypothesis,bleu1,bleu2,bleu3,bleu4\n");
        for r in &self.results {
            let _ = write!(out, "{},{}", csv_field(&r.image_id), quoted(&r.hypothesis.join(" ")));
            for b in r.bleu {
                let _ = write!(out, ",{b:.6}");
            }
            out.push('\n');
        }
        out.push_str("#CORPUS,");
        for b in self.corpus {
            let _ = write!(out, ",{b:.6}");
        }
        out.push('\n');
        out
    }

    pub fn write_report(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        quoted(s)
    } else {
        s.to_owned()
    }
}

/// Vocabulary words for decoded ids, with every special token dropped.
pub fn hypothesis_tokens(ids: &[u32], vocab: &Vocab) -> Result<Vec<String>> {
    ids.iter()
        .filter(|&&id| !Vocab::is_special(id))
        .map(|&id| vocab.token(id).map(str::to_owned))
        .collect()
}

/// Greedy-decodes every image of `dataset` once (in parallel) and scores it
/// against all its references.
pub fn evaluate_dataset<T: Real>(model: &CaptionModel<T>, dataset: &Dataset, vocab: &Vocab) -> Result<Evaluation> {
    if vocab.len() != model.config().vocab_size {
        return Err(Error::config(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let max_len = model.config().seq_len;
    let sentence = BleuConfig::sentence();
    let ids: Vec<&str> = dataset.image_ids().collect();
    let results = ids
        .par_iter()
        .map(|&id| {
            let features = dataset.features(id).expect("dataset pairs features").cast::<T>();
            let hyp = hypothesis_tokens(&greedy_decode(model, &features, max_len)?, vocab)?;
            let refs = dataset.references(id).to_vec();
            let stats = BleuStats::segment(&hyp, &refs);
            Ok(CaptionResult {
                image_id: id.to_owned(),
                bleu: std::array::from_fn(|k| stats.score(k + 1, sentence.smoothing)),
                hypothesis: hyp,
                references: refs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_results(results))
}

/// [`evaluate_dataset`] plus the report file.
pub fn evaluate_test_set<T: Real>(
    model: &CaptionModel<T>,
    dataset: &Dataset,
    vocab: &Vocab,
    report_path: &Path,
) -> Result<Evaluation> {
    let eval = evaluate_dataset(model, dataset, vocab)?;
    eval.write_report(report_path)?;
    Ok(eval)
}
