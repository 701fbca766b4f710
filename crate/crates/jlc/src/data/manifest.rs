//! Dataset manifests, the train/eval split and labeled/unlabeled mixing.
//!
//! Manifests are JSON lines, one entry per image:
//! `{"image_id": "...", "path_o": "...", "path_j": "...", "source": "jnd_labeled"}`.
//! Unlabeled entries omit `path_j`; their pairs reuse the original as the
//! JND-quality image.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::types::ImageTensor;
use crate::data::io::load_image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    JndLabeled,
    #[serde(alias = "unlabeled")]
    UnlabeledProxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub path_o: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_j: Option<PathBuf>,
    pub source: SourceKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: SplitKind,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn load_jsonl(path: &Path, split: SplitKind) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
                Error::Format(format!("{}:{}: bad manifest line: {e}", path.display(), i + 1))
            })?;
            entries.push(entry);
        }
        Ok(DatasetManifest {
            entries,
            split,
            seed: 0,
        })
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.write_all(b"\n")?;
        }
        crate::util::write_atomic(path, &buf)
    }

    pub fn labeled(&self) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.source == SourceKind::JndLabeled)
            .cloned()
            .collect()
    }

    pub fn unlabeled(&self) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.source == SourceKind::UnlabeledProxy)
            .cloned()
            .collect()
    }
}

/// Deterministic seeded shuffle-then-split. The floor of
/// `n * train_fraction` entries go to the train side.
pub fn split_manifest(
    entries: &[ManifestEntry],
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if entries.is_empty() {
        return Err(Error::Argument("cannot split an empty manifest".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut shuffled = entries.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let cut = (entries.len() as f64 * train_fraction).floor() as usize;
    let eval = shuffled.split_off(cut);
    Ok((
        DatasetManifest {
            entries: shuffled,
            split: SplitKind::Train,
            seed,
        },
        DatasetManifest {
            entries: eval,
            split: SplitKind::Eval,
            seed,
        },
    ))
}

/// One slot of an epoch schedule: an index into the labeled pool or into
/// the unlabeled pool (to be emitted as a proxy pair).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixSlot {
    Labeled(usize),
    Proxy(usize),
}

/// Index-level mixing schedule: every labeled index once, plus an equal
/// count of unlabeled indices (sampled with replacement, with a warning,
/// when the pool is smaller), in seeded random order.
pub fn mix_schedule(labeled_n: usize, unlabeled_n: usize, seed: u64) -> Result<Vec<MixSlot>> {
    if labeled_n == 0 {
        return Err(Error::Argument("mixing needs a non-empty labeled set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<MixSlot> = (0..labeled_n).map(MixSlot::Labeled).collect();

    if unlabeled_n == 0 {
        log::warn!("no unlabeled images available; epoch stream is labeled-only");
    } else if unlabeled_n >= labeled_n {
        let mut pool: Vec<usize> = (0..unlabeled_n).collect();
        pool.shuffle(&mut rng);
        slots.extend(pool.into_iter().take(labeled_n).map(MixSlot::Proxy));
    } else {
        log::warn!(
            "unlabeled pool ({unlabeled_n}) smaller than labeled set ({labeled_n}); \
             sampling with replacement"
        );
        slots.extend((0..labeled_n).map(|_| MixSlot::Proxy(rng.gen_range(0..unlabeled_n))));
    }
    slots.shuffle(&mut rng);
    Ok(slots)
}

/// One epoch's interleaved manifest stream per the mixing schedule.
/// Unlabeled entries are emitted as proxy pairs.
pub fn mix_sources(
    labeled: &[ManifestEntry],
    unlabeled: &[ManifestEntry],
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    let slots = mix_schedule(labeled.len(), unlabeled.len(), seed)?;
    Ok(slots
        .into_iter()
        .map(|slot| match slot {
            MixSlot::Labeled(i) => labeled[i].clone(),
            MixSlot::Proxy(j) => ManifestEntry {
                image_id: unlabeled[j].image_id.clone(),
                path_o: unlabeled[j].path_o.clone(),
                path_j: None,
                source: SourceKind::UnlabeledProxy,
            },
        })
        .collect())
}

/// An aligned (original, JND-quality) image pair.
#[derive(Clone, Debug)]
pub struct SamplePair {
    pub x_o: ImageTensor,
    pub x_j: ImageTensor,
    pub source: SourceKind,
    pub image_id: String,
}

impl SamplePair {
    pub fn new(
        x_o: ImageTensor,
        x_j: ImageTensor,
        source: SourceKind,
        image_id: String,
    ) -> Result<Self> {
        if x_o.dims() != x_j.dims() {
            return Err(Error::Shape(format!(
                "pair '{image_id}': x_o {:?} and x_j {:?} differ",
                x_o.dims(),
                x_j.dims()
            )));
        }
        if source == SourceKind::UnlabeledProxy && x_o.tensor() != x_j.tensor() {
            return Err(Error::Argument(format!(
                "pair '{image_id}': proxy pairs must have x_j identical to x_o"
            )));
        }
        Ok(SamplePair {
            x_o,
            x_j,
            source,
            image_id,
        })
    }

    /// Proxy pair from a single image: x_j is bit-identical to x_o.
    pub fn proxy(x_o: ImageTensor, image_id: String) -> Self {
        SamplePair {
            x_j: x_o.clone(),
            x_o,
            source: SourceKind::UnlabeledProxy,
            image_id,
        }
    }
}

/// Load the images behind a manifest entry.
pub fn load_pair(entry: &ManifestEntry) -> Result<SamplePair> {
    let x_o = load_image(&entry.path_o)?;
    match entry.source {
        SourceKind::UnlabeledProxy => Ok(SamplePair::proxy(x_o, entry.image_id.clone())),
        SourceKind::JndLabeled => {
            let path_j = entry.path_j.as_ref().ok_or_else(|| {
                Error::Format(format!(
                    "labeled entry '{}' is missing path_j",
                    entry.image_id
                ))
            })?;
            let x_j = load_image(path_j)?;
            SamplePair::new(x_o, x_j, SourceKind::JndLabeled, entry.image_id.clone())
        }
    }
}
