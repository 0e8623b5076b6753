use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImageCaptions;
use crate::{Error, Result};

/// Image counts (train, val, test) of the reference Flickr30k partition.
pub const FLICKR30K_COUNTS: (usize, usize, usize) = (20_915, 5_124, 105);

/// How many images go to each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitCounts {
    /// [`SplitCounts::Flickr30k`] when enough images exist, else proportional.
    #[default]
    Auto,
    /// Exactly [`FLICKR30K_COUNTS`]; surplus images are left unused.
    Flickr30k,
    /// 80 / 19.6 / 0.4 % of all images, remainder to test.
    Proportional,
    Exact(usize, usize, usize),
    /// Every image in every split. For overfitting checks only; the splits
    /// are deliberately not disjoint.
    Overfit,
}

impl FromStr for SplitCounts {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(SplitCounts::Auto),
            "flickr30k" => Ok(SplitCounts::Flickr30k),
            "proportional" => Ok(SplitCounts::Proportional),
            "overfit" => Ok(SplitCounts::Overfit),
            other => {
                let parts: Vec<&str> = other.split(',').map(str::trim).collect();
                let nums: Vec<usize> = parts.iter().filter_map(|p| p.parse().ok()).collect();
                if parts.len() == 3 && nums.len() == 3 {
                    Ok(SplitCounts::Exact(nums[0], nums[1], nums[2]))
                } else {
                    Err(Error::config(format!(
                        "split must be auto, flickr30k, proportional, overfit or TRAIN,VAL,TEST; got {other:?}"
                    )))
                }
            }
        }
    }
}

impl SplitCounts {
    /// Concrete counts for `n` available images.
    pub fn resolve(self, n: usize) -> Result<(usize, usize, usize)> {
        let (tr, va, te) = FLICKR30K_COUNTS;
        let counts = match self {
            SplitCounts::Auto if n >= tr + va + te => FLICKR30K_COUNTS,
            SplitCounts::Auto | SplitCounts::Proportional => {
                let train = n * 800 / 1000;
                let val = n * 196 / 1000;
                (train, val, n - train - val)
            }
            SplitCounts::Flickr30k => FLICKR30K_COUNTS,
            SplitCounts::Exact(a, b, c) => (a, b, c),
            SplitCounts::Overfit => (n, n, n),
        };
        if self != SplitCounts::Overfit && counts.0 + counts.1 + counts.2 > n {
            return Err(Error::config(format!(
                "split counts {counts:?} need {} images, only {n} available",
                counts.0 + counts.1 + counts.2
            )));
        }
        Ok(counts)
    }
}

/// Image ids per split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded partition of image ids. The input order does not matter: ids are
/// sorted before the shuffle.
pub fn split_image_ids(ids: &[String], seed: u64, counts: SplitCounts) -> Result<SplitIds> {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let (tr, va, te) = counts.resolve(ids.len())?;
    if counts == SplitCounts::Overfit {
        return Ok(SplitIds {
            train: ids.clone(),
            val: ids.clone(),
            test: ids,
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids[tr + va..tr + va + te].to_vec();
    let val = ids[tr..tr + va].to_vec();
    ids.truncate(tr);
    Ok(SplitIds {
        train: ids,
        val,
        test,
    })
}

/// Caption groups per split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<ImageCaptions>,
    pub val: Vec<ImageCaptions>,
    pub test: Vec<ImageCaptions>,
}

/// Partitions caption groups by image; all captions follow their image.
pub fn split_dataset(groups: &[ImageCaptions], seed: u64, counts: SplitCounts) -> Result<Splits> {
    let ids: Vec<String> = groups.iter().map(|g| g.image_id.clone()).collect();
    let split = split_image_ids(&ids, seed, counts)?;
    let by_id: std::collections::HashMap<&str, &ImageCaptions> =
        groups.iter().map(|g| (g.image_id.as_str(), g)).collect();
    let pick = |ids: &[String]| ids.iter().map(|id| by_id[id.as_str()].clone()).collect();
    Ok(Splits {
        train: pick(&split.train),
        val: pick(&split.val),
        test: pick(&split.test),
    })
}
