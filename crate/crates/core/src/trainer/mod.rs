//! Adam training with teacher forcing, per-epoch validation, BLEU-4 early
//! stopping, checkpoints and a metrics CSV.

mod adam;
mod checkpoint;
mod metrics;

pub use adam::*;
pub use checkpoint::*;
pub use metrics::*;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use crate::captioner::evaluate_dataset;
use crate::datapipe::{batches, Batch, BatchOrder, Dataset, SyncBatches};
use crate::ndcore::Graph;
use crate::textpipe::Vocab;
use crate::transformer::{caption_loss, CaptionModel, ParamSet};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Where `best.ckpt` and `last.ckpt` go; nothing is saved when unset.
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    /// Record real epoch durations. Off by default so that metrics files
    /// of identical runs are byte-identical.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 128,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            checkpoint_dir: None,
            metrics_path: None,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let problems = [
            (self.patience == 0, "patience must be at least 1"),
            (self.max_epochs == 0, "max_epochs must be at least 1"),
            (self.batch_size == 0, "batch_size must be at least 1"),
            (!(a.learning_rate >= 0.0 && a.learning_rate.is_finite()), "learning_rate must be finite and non-negative"),
            (!(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2), "betas must lie in [0, 1)"),
            (a.eps.is_nan() || a.eps <= 0.0, "eps must be positive"),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::config(*msg)),
            None => Ok(()),
        }
    }

    pub fn best_checkpoint(&self) -> Option<PathBuf> {
        self.checkpoint_dir.as_ref().map(|d| d.join("best.ckpt"))
    }

    pub fn last_checkpoint(&self) -> Option<PathBuf> {
        self.checkpoint_dir.as_ref().map(|d| d.join("last.ckpt"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStop => "early_stop",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub stop_reason: StopReason,
    /// Epoch (1-based) with the highest validation BLEU-4, earliest on ties.
    pub best_epoch: usize,
}

/// Index of the first maximum.
fn best_index(history: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in history.iter().enumerate() {
        if best.is_none_or(|b| v > history[b]) {
            best = Some(i);
        }
    }
    best
}

/// True iff the best value is at least `patience` epochs older than the
/// latest one, i.e. the last `patience` epochs brought no strict improvement.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    match best_index(history) {
        Some(best) => history.len() - 1 - best >= patience,
        None => false,
    }
}

/// Loss and parameter gradients for one batch.
pub fn batch_gradients(model: &CaptionModel<f32>, batch: &Batch) -> Result<(f64, ParamSet<Option<Vec<f32>>>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, true);
    let f = g.borrowed(&batch.features, false);
    let loss = caption_loss(
        &mut g,
        &p,
        model.config(),
        f,
        &batch.input_ids,
        &batch.target_ids,
        &batch.pad_mask,
        batch.size(),
    )?;
    g.backward(loss)?;
    let value = g.value(loss).item()? as f64;
    let grads = p.try_map::<_, Error>(|_, &v| Ok(g.grad(v).map(<[f32]>::to_vec)))?;
    Ok((value, grads))
}

/// Teacher-forced masked loss without gradient recording.
pub fn batch_loss(model: &CaptionModel<f32>, batch: &Batch) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, false);
    let f = g.borrowed(&batch.features, false);
    let loss = caption_loss(
        &mut g,
        &p,
        model.config(),
        f,
        &batch.input_ids,
        &batch.target_ids,
        &batch.pad_mask,
        batch.size(),
    )?;
    Ok(g.value(loss).item()? as f64)
}

/// One pass over `data` in a seeded per-epoch order, one Adam step per
/// batch. Returns the token-weighted mean loss. `epoch` is 1-based.
pub fn run_epoch(
    model: &mut CaptionModel<f32>,
    data: &Arc<Dataset>,
    state: &mut AdamState<f32>,
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let order = BatchOrder::Shuffled {
        seed: config.seed,
        epoch: epoch as u64,
    };
    let (mut weighted, mut tokens) = (0.0, 0usize);
    for (i, batch) in batches(data.clone(), config.batch_size, order).enumerate() {
        let (loss, grads) = batch_gradients(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: i, loss });
        }
        adam_step(model.params_mut(), &grads, state, &config.adam)?;
        let n = batch.token_count();
        weighted += loss * n as f64;
        tokens += n;
    }
    Ok(if tokens == 0 { 0.0 } else { weighted / tokens as f64 })
}

/// Token-weighted teacher-forced loss over `data`.
pub fn dataset_loss(model: &CaptionModel<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    let (mut weighted, mut tokens) = (0.0, 0usize);
    for batch in SyncBatches::new(data, batch_size, BatchOrder::Sequential) {
        let n = batch.token_count();
        weighted += batch_loss(model, &batch)? * n as f64;
        tokens += n;
    }
    Ok(if tokens == 0 { 0.0 } else { weighted / tokens as f64 })
}

/// Validation loss and corpus BLEU-4 of greedy captions.
pub fn validate(model: &CaptionModel<f32>, data: &Dataset, vocab: &Vocab, batch_size: usize) -> Result<(f64, f64)> {
    let loss = dataset_loss(model, data, batch_size)?;
    let eval = evaluate_dataset(model, data, vocab)?;
    Ok((loss, eval.bleu4()))
}

/// Training loop state; resumable from its last checkpoint.
pub struct Trainer {
    config: TrainConfig,
    model: CaptionModel<f32>,
    state: AdamState<f32>,
    rows: Vec<EpochRow>,
}

impl Trainer {
    pub fn new(model: CaptionModel<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = AdamState::new(model.params());
        Ok(Self {
            config,
            model,
            state,
            rows: Vec::new(),
        })
    }

    /// Continues from a checkpoint with optimizer state. Earlier metric rows
    /// are taken from `config.metrics_path` when it exists.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = checkpoint
            .adam
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        let mut rows = match &config.metrics_path {
            Some(p) if p.exists() => read_metrics(p)?,
            _ => Vec::new(),
        };
        rows.retain(|r| r.epoch <= checkpoint.epoch);
        if rows.len() != checkpoint.epoch {
            return Err(Error::Checkpoint(format!(
                "checkpoint is at epoch {} but {} metric rows were found",
                checkpoint.epoch,
                rows.len()
            )));
        }
        let model = CaptionModel::from_params(checkpoint.config, checkpoint.params)?;
        Ok(Self {
            config,
            model,
            state,
            rows,
        })
    }

    pub fn model(&self) -> &CaptionModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> CaptionModel<f32> {
        self.model
    }

    pub fn adam_state(&self) -> &AdamState<f32> {
        &self.state
    }

    pub fn rows(&self) -> &[EpochRow] {
        &self.rows
    }

    pub fn epochs_done(&self) -> usize {
        self.rows.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config().clone(),
            params: self.model.params().clone(),
            adam: Some(self.state.clone()),
            epoch: self.rows.len(),
        }
    }

    /// One training epoch plus validation; saves checkpoints and metrics.
    pub fn step_epoch(&mut self, train: &Arc<Dataset>, val: &Dataset, vocab: &Vocab) -> Result<&EpochRow> {
        let epoch = self.rows.len() + 1;
        let start = Instant::now();
        let train_loss = run_epoch(&mut self.model, train, &mut self.state, &self.config, epoch)?;
        let (val_loss, val_bleu4) = validate(&self.model, val, vocab, self.config.batch_size)?;
        let wall_seconds = if self.config.wall_clock {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let improved = self.rows.iter().all(|r| val_bleu4 > r.val_bleu4);
        self.rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            val_bleu4,
            wall_seconds,
        });
        if let Some(path) = &self.config.metrics_path {
            write_metrics(path, &self.rows)?;
        }
        if let Some(dir) = &self.config.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let ck = self.checkpoint();
            if improved {
                ck.save(&dir.join("best.ckpt"))?;
            }
            ck.save(&dir.join("last.ckpt"))?;
        }
        Ok(self.rows.last().expect("just pushed"))
    }

    /// Runs until `max_epochs` or early stopping. `on_epoch` sees each row.
    pub fn fit(
        &mut self,
        train: &Arc<Dataset>,
        val: &Dataset,
        vocab: &Vocab,
        mut on_epoch: impl FnMut(&EpochRow),
    ) -> Result<TrainReport> {
        let stop_reason = loop {
            if self.should_stop() {
                break StopReason::EarlyStop;
            }
            if self.rows.len() >= self.config.max_epochs {
                break StopReason::MaxEpochs;
            }
            on_epoch(self.step_epoch(train, val, vocab)?);
        };
        Ok(self.report(stop_reason))
    }

    fn should_stop(&self) -> bool {
        let history: Vec<f64> = self.rows.iter().map(|r| r.val_bleu4).collect();
        early_stop_check(&history, self.config.patience)
    }

    pub fn report(&self, stop_reason: StopReason) -> TrainReport {
        let history: Vec<f64> = self.rows.iter().map(|r| r.val_bleu4).collect();
        TrainReport {
            rows: self.rows.clone(),
            stop_reason,
            best_epoch: best_index(&history).map_or(0, |i| i + 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        assert!(!early_stop_check(&[0.1, 0.2, 0.3], 10));
        let mut h = vec![0.1, 0.2, 0.5];
        h.extend([0.5, 0.4, 0.3, 0.5, 0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!(!early_stop_check(&h, 10));
        h.push(0.49);
        assert!(early_stop_check(&h, 10));
        let rising: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(!early_stop_check(&rising, 1));
        assert!(early_stop_check(&[0.3, 0.3], 1));
        assert!(!early_stop_check(&[0.3], 1));
    }

    #[test]
    fn best_is_earliest_maximum() {
        assert_eq!(best_index(&[0.1, 0.4, 0.2, 0.4]), Some(1));
        assert_eq!(best_index(&[]), None);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { max_epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
