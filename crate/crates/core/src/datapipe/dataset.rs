use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::{capf, ImageCaptions};
use crate::ndcore::Tensor;
use crate::textpipe::{encode, Vocab};
use crate::{Error, Result};

/// File extension of feature files; the file name is `image_id + ".capf"`.
pub const FEATURE_EXT: &str = "capf";

/// CNN feature grid of one image, `feat_len × feat_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub image_id: String,
    pub grid: Tensor<f32>,
}

impl FeatureRecord {
    /// Rank-1 tensors are taken as a single feature position.
    pub fn new(image_id: impl Into<String>, grid: Tensor<f32>) -> Result<Self> {
        let image_id = image_id.into();
        let grid = match grid.rank() {
            2 => grid,
            1 => grid.reshape(&[1, grid.numel()])?,
            r => {
                return Err(Error::format(format!(
                    "features for {image_id} have rank {r}, expected 2"
                )))
            }
        };
        if !grid.is_finite() {
            return Err(Error::Dataset(format!(
                "features for {image_id} contain non-finite values"
            )));
        }
        Ok(Self { image_id, grid })
    }

    pub fn feat_len(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn feat_dim(&self) -> usize {
        self.grid.shape()[1]
    }
}

pub type FeatureMap = BTreeMap<String, FeatureRecord>;

pub fn feature_path(dir: &Path, image_id: &str) -> std::path::PathBuf {
    dir.join(format!("{image_id}.{FEATURE_EXT}"))
}

/// Loads every `*.capf` file in `dir`; all grids must share one shape.
pub fn load_features(dir: &Path) -> Result<FeatureMap> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == FEATURE_EXT) {
            paths.push(path);
        }
    }
    paths.sort();
    let mut map = FeatureMap::new();
    for path in paths {
        let image_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("unusable file name {}", path.display())))?
            .to_owned();
        let record = FeatureRecord::new(image_id.clone(), capf::read(&path)?)?;
        map.insert(image_id, record);
    }
    check_consistent(&map)?;
    Ok(map)
}

/// Loads only the listed images, failing on the first missing file.
pub fn load_features_for<'a>(dir: &Path, ids: impl IntoIterator<Item = &'a str>) -> Result<FeatureMap> {
    let mut map = FeatureMap::new();
    for id in ids {
        let path = feature_path(dir, id);
        if !path.exists() {
            return Err(Error::Dataset(format!(
                "missing feature file for image {id} ({})",
                path.display()
            )));
        }
        map.insert(id.to_owned(), FeatureRecord::new(id, capf::read(&path)?)?);
    }
    check_consistent(&map)?;
    Ok(map)
}

fn check_consistent(map: &FeatureMap) -> Result<()> {
    let mut dims = None;
    for rec in map.values() {
        let here = (rec.feat_len(), rec.feat_dim());
        match dims {
            None => dims = Some((here, &rec.image_id)),
            Some((d, first)) if d != here => {
                return Err(Error::Dataset(format!(
                    "feature grid of {} is {here:?} but {first} is {d:?}",
                    rec.image_id
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

/// One fixed-length encoded caption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedCaption {
    pub image_id: String,
    pub token_ids: Vec<u32>,
}

/// Encoded captions of one split, paired with their feature grids and the
/// normalised reference token lists used for BLEU.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    tag: SplitTag,
    records: Vec<EncodedCaption>,
    features: BTreeMap<String, Tensor<f32>>,
    references: BTreeMap<String, Vec<Vec<String>>>,
    feat_len: usize,
    feat_dim: usize,
    seq_len: usize,
}

impl Dataset {
    /// Fails with a dataset error naming the first image without features.
    pub fn new(
        tag: SplitTag,
        images: &[ImageCaptions],
        features: &FeatureMap,
        vocab: &Vocab,
        seq_len: usize,
    ) -> Result<Self> {
        if let Some(missing) = images.iter().find(|g| !features.contains_key(&g.image_id)) {
            return Err(Error::Dataset(format!(
                "missing features for image {}",
                missing.image_id
            )));
        }
        let mut records = Vec::new();
        let mut feats = BTreeMap::new();
        let mut references = BTreeMap::new();
        let (mut feat_len, mut feat_dim) = (0, 0);
        for group in images {
            let rec = &features[&group.image_id];
            (feat_len, feat_dim) = (rec.feat_len(), rec.feat_dim());
            feats.insert(group.image_id.clone(), rec.grid.clone());
            let refs = references.entry(group.image_id.clone()).or_insert_with(Vec::new);
            for cap in &group.captions {
                records.push(EncodedCaption {
                    image_id: group.image_id.clone(),
                    token_ids: encode(&cap.normalized, vocab, seq_len)?,
                });
                refs.push(cap.normalized.split_whitespace().map(str::to_owned).collect());
            }
        }
        if records.is_empty() {
            return Err(Error::Dataset(format!("{tag} split has no captions")));
        }
        check_consistent(features)?;
        Ok(Self {
            tag,
            records,
            features: feats,
            references,
            feat_len,
            feat_dim,
            seq_len,
        })
    }

    pub fn tag(&self) -> SplitTag {
        self.tag
    }

    pub fn records(&self) -> &[EncodedCaption] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct image ids in sorted order.
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.features.keys().map(String::as_str)
    }

    pub fn image_count(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self, image_id: &str) -> Option<&Tensor<f32>> {
        self.features.get(image_id)
    }

    pub fn references(&self, image_id: &str) -> &[Vec<String>] {
        self.references.get(image_id).map_or(&[], Vec::as_slice)
    }

    pub fn feat_len(&self) -> usize {
        self.feat_len
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }
}
