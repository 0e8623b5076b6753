use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::ndcore::Tensor;
use crate::textpipe::PAD_ID;

/// Batches buffered ahead of the consumer.
pub const PREFETCH_DEPTH: usize = 2;

/// Teacher-forcing batch: `input = caption[..T]`, `target = caption[1..]`,
/// with `T = seq_len - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub image_ids: Vec<String>,
    /// `[B, feat_len, feat_dim]`
    pub features: Tensor<f32>,
    /// `[B, T]`, row-major
    pub input_ids: Vec<usize>,
    /// `[B, T]`, row-major
    pub target_ids: Vec<usize>,
    /// false exactly where the target is `<pad>`
    pub pad_mask: Vec<bool>,
    pub len: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.image_ids.len()
    }

    /// Number of positions that count toward the loss.
    pub fn token_count(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// Record visiting order for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchOrder {
    Sequential,
    /// Reshuffled per `(seed, epoch)`.
    Shuffled { seed: u64, epoch: u64 },
}

pub fn epoch_order(n: usize, order: BatchOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let BatchOrder::Shuffled { seed, epoch } = order {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        idx.shuffle(&mut rng);
    }
    idx
}

/// Builds the batch for the given record indices.
pub fn assemble(dataset: &Dataset, indices: &[usize]) -> Batch {
    let t = dataset.seq_len() - 1;
    let (fl, fd) = (dataset.feat_len(), dataset.feat_dim());
    let mut feats = Vec::with_capacity(indices.len() * fl * fd);
    let mut batch = Batch {
        image_ids: Vec::with_capacity(indices.len()),
        features: Tensor::scalar(0.0),
        input_ids: Vec::with_capacity(indices.len() * t),
        target_ids: Vec::with_capacity(indices.len() * t),
        pad_mask: Vec::with_capacity(indices.len() * t),
        len: t,
    };
    for &i in indices {
        let rec = &dataset.records()[i];
        let grid = dataset.features(&rec.image_id).expect("dataset pairs features");
        feats.extend_from_slice(grid.data());
        batch.image_ids.push(rec.image_id.clone());
        let ids = &rec.token_ids;
        batch.input_ids.extend(ids[..t].iter().map(|&x| x as usize));
        batch.target_ids.extend(ids[1..].iter().map(|&x| x as usize));
        batch.pad_mask.extend(ids[1..].iter().map(|&x| x != PAD_ID));
    }
    batch.features = Tensor::new(vec![indices.len(), fl, fd], feats).expect("consistent grids");
    batch
}

/// Synchronous batch iterator; the reference for [`Prefetcher`].
pub struct SyncBatches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> SyncBatches<'a> {
    /// Panics if `batch_size` is zero.
    pub fn new(dataset: &'a Dataset, batch_size: usize, order: BatchOrder) -> Self {
        assert!(batch_size >= 1, "batch_size must be positive");
        Self {
            dataset,
            order: epoch_order(dataset.len(), order),
            batch_size,
            pos: 0,
        }
    }
}

impl Iterator for SyncBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = assemble(self.dataset, &self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Assembles batches on a worker thread, [`PREFETCH_DEPTH`] ahead of the
/// consumer. Yields exactly the sequence of [`SyncBatches`].
pub struct Prefetcher {
    rx: Option<Receiver<Batch>>,
    worker: Option<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn new(dataset: Arc<Dataset>, batch_size: usize, order: BatchOrder) -> Self {
        assert!(batch_size >= 1, "batch_size must be positive");
        let (tx, rx) = sync_channel(PREFETCH_DEPTH);
        let worker = std::thread::spawn(move || {
            for batch in SyncBatches::new(&dataset, batch_size, order) {
                if tx.send(batch).is_err() {
                    break;
                }
            }
        });
        Self {
            rx: Some(rx),
            worker: Some(worker),
        }
    }
}

impl Iterator for Prefetcher {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        // closing the channel unblocks a producer waiting on a full buffer
        self.rx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Prefetched batches over `dataset` for one epoch.
pub fn batches(dataset: Arc<Dataset>, batch_size: usize, order: BatchOrder) -> Prefetcher {
    Prefetcher::new(dataset, batch_size, order)
}
