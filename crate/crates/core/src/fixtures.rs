//! Built-in overfitting fixture: eight images with one caption each and
//! seeded synthetic feature grids.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datapipe::{capf, feature_path, group_by_image, CaptionRecord, FeatureMap, FeatureRecord, ImageCaptions};
use crate::ndcore::Tensor;
use crate::textpipe::{normalize_caption, Vocab};
use crate::trainer::{AdamConfig, TrainConfig};
use crate::transformer::ModelConfig;
use crate::{Error, Result};

pub const OVERFIT_PAIRS: [(&str, &str); 8] = [
    ("1000092795.jpg", "Two young men are hanging out in the yard."),
    ("10002456.jpg", "Several workers in hard hats build a tall wall."),
    ("1000268201.jpg", "A child in a pink dress climbs the stairs."),
    ("1000344755.jpg", "Someone on a ladder cleans a window."),
    ("1000366164.jpg", "A man in a green shirt plays the guitar."),
    ("1000523639.jpg", "A woman reads a book near the beach."),
    ("1000919630.jpg", "A dog jumps over a red fence."),
    ("10010052.jpg", "Three girls dance on a stage at night."),
];

pub const FIXTURE_FEAT_LEN: usize = 4;
pub const FIXTURE_FEAT_DIM: usize = 16;
pub const FIXTURE_SEQ_LEN: usize = 14;

/// Captions, features and vocabulary of the overfit fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub groups: Vec<ImageCaptions>,
    pub features: FeatureMap,
    pub vocab: Vocab,
}

impl Fixture {
    pub fn new(seed: u64) -> Result<Self> {
        let records: Vec<CaptionRecord> = OVERFIT_PAIRS
            .iter()
            .map(|&(id, raw)| CaptionRecord {
                image_id: id.to_owned(),
                raw: raw.to_owned(),
                normalized: normalize_caption(raw).expect("fixture captions are valid"),
            })
            .collect();
        let texts: Vec<&str> = records.iter().map(|r| r.normalized.as_str()).collect();
        let vocab = Vocab::build(&texts, 64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = records
            .iter()
            .map(|r| {
                let grid = Tensor::from_fn(&[FIXTURE_FEAT_LEN, FIXTURE_FEAT_DIM], |_| {
                    StandardNormal.sample(&mut rng)
                });
                let rec = FeatureRecord::new(&r.image_id, grid).expect("finite rank-2 grid");
                (r.image_id.clone(), rec)
            })
            .collect();
        Ok(Self {
            groups: group_by_image(&records),
            features,
            vocab,
        })
    }

    /// Scaled-down architecture: d_model 64, 4 heads.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            seq_len: FIXTURE_SEQ_LEN,
            vocab_size: self.vocab.len(),
            feat_dim: FIXTURE_FEAT_DIM,
            feat_len: FIXTURE_FEAT_LEN,
            ffn_dim: 128,
        }
    }

    pub fn train_config(seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            batch_size: 2,
            max_epochs: 500,
            patience: 500,
            seed,
            ..TrainConfig::default()
        }
    }

    /// Normalised caption of each image, keyed by image id.
    pub fn captions(&self) -> Vec<(&str, &str)> {
        self.groups
            .iter()
            .map(|g| (g.image_id.as_str(), g.captions[0].normalized.as_str()))
            .collect()
    }

    /// Writes `captions.txt` (pipe format), `features/*.capf` and
    /// `fixture.conf` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<FixtureFiles> {
        let features_dir = dir.join("features");
        std::fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
        let mut text = String::from("image_name| comment_number| comment\n");
        for g in &self.groups {
            for (i, c) in g.captions.iter().enumerate() {
                text.push_str(&format!("{}| {i}| {}\n", g.image_id, c.raw));
            }
        }
        let captions = dir.join("captions.txt");
        std::fs::write(&captions, text).map_err(|e| Error::io(&captions, e))?;
        for rec in self.features.values() {
            capf::write(&feature_path(&features_dir, &rec.image_id), &rec.grid)?;
        }
        let m = self.model_config();
        let t = Self::train_config(0);
        let conf = format!(
            "# overfit fixture\nd_model = {}\nn_heads = {}\nseq_len = {}\nffn_dim = {}\n\
             learning_rate = {}\nbatch_size = {}\nmax_epochs = {}\npatience = {}\nsplit = overfit\n",
            m.d_model, m.n_heads, m.seq_len, m.ffn_dim, t.adam.learning_rate, t.batch_size, t.max_epochs, t.patience
        );
        let config = dir.join("fixture.conf");
        std::fs::write(&config, conf).map_err(|e| Error::io(&config, e))?;
        Ok(FixtureFiles {
            captions,
            features: features_dir,
            config,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixtureFiles {
    pub captions: PathBuf,
    pub features: PathBuf,
    pub config: PathBuf,
}
