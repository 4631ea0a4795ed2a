//! Training-pixel samplers and the stratified validation split.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{class_counts, GroundTruth, LabeledEntry, LabeledSet, PixelIndex};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    FractionPerClass,
    CountPerClass,
    PatchPerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingSpec {
    pub mode: SamplingMode,
    pub fraction: f64,
    pub count: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            mode: SamplingMode::FractionPerClass,
            fraction: 0.01,
            count: 10,
            patch_size: 7,
            seed: 0,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SamplingMode::FractionPerClass if !(self.fraction > 0.0 && self.fraction <= 1.0) => {
                Err(Error::Validation(format!(
                    "sampling fraction {} outside (0, 1]",
                    self.fraction
                )))
            }
            SamplingMode::CountPerClass if self.count == 0 => Err(Error::Validation(
                "sampling count must be at least 1".into(),
            )),
            SamplingMode::PatchPerClass if self.patch_size.is_multiple_of(2) => Err(Error::Validation(
                format!("patch size {} must be odd", self.patch_size),
            )),
            _ => Ok(()),
        }
    }

    /// Draws a labeled set with the active mode, using `self.seed`.
    pub fn sample(&self, gt: &GroundTruth) -> Result<LabeledSet> {
        self.validate()?;
        match self.mode {
            SamplingMode::FractionPerClass => sample_fraction(gt, self.fraction, self.seed),
            SamplingMode::CountPerClass => sample_count(gt, self.count, self.seed),
            SamplingMode::PatchPerClass => sample_patch_per_class(gt, self.patch_size, self.seed),
        }
    }
}

/// Round half up, as used for every per-class quota.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn pixels_by_class(gt: &GroundTruth) -> Vec<Vec<PixelIndex>> {
    let mut by_class = vec![Vec::new(); gt.num_classes()];
    for (i, &l) in gt.labels().iter().enumerate() {
        if l > 0 {
            by_class[l as usize - 1].push(PixelIndex::new(i / gt.width(), i % gt.width()));
        }
    }
    by_class
}

fn sample_quota(gt: &GroundTruth, seed: u64, quota: impl Fn(usize) -> usize) -> LabeledSet {
    let mut rng = rng::rng(seed);
    let mut entries = Vec::new();
    for (k, pixels) in pixels_by_class(gt).iter().enumerate() {
        let take = quota(pixels.len()).min(pixels.len());
        for i in index::sample(&mut rng, pixels.len(), take) {
            entries.push(LabeledEntry::sampled(pixels[i], k as u32 + 1));
        }
    }
    entries.sort_by_key(|e| e.pixel);
    LabeledSet::new(entries)
}

/// Per class, `max(1, round(fraction · total))` pixels without replacement.
pub fn sample_fraction(gt: &GroundTruth, fraction: f64, seed: u64) -> Result<LabeledSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!(
            "sampling fraction {fraction} outside (0, 1]"
        )));
    }
    Ok(sample_quota(gt, seed, |total| {
        round_half_up(fraction * total as f64).max(1)
    }))
}

/// Per class, `min(count, total)` pixels without replacement.
pub fn sample_count(gt: &GroundTruth, count: usize, seed: u64) -> Result<LabeledSet> {
    if count == 0 {
        return Err(Error::Validation(
            "sampling count must be at least 1".into(),
        ));
    }
    Ok(sample_quota(gt, seed, |_| count))
}

/// One square window per class, centered on a random pixel of that class,
/// keeping only the pixels of that class inside the window.
pub fn sample_patch_per_class(
    gt: &GroundTruth,
    patch_size: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if patch_size.is_multiple_of(2) || patch_size == 0 {
        return Err(Error::Validation(format!(
            "patch size {patch_size} must be odd"
        )));
    }
    if patch_size > gt.height().min(gt.width()) {
        return Err(Error::Validation(format!(
            "patch size {patch_size} exceeds image {}x{}",
            gt.height(),
            gt.width()
        )));
    }
    let half = patch_size / 2;
    let mut rng: Rng = rng::rng(seed);
    let mut entries = Vec::new();
    for (k, pixels) in pixels_by_class(gt).iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let label = k as u32 + 1;
        let center = pixels[index::sample(&mut rng, pixels.len(), 1).index(0)];
        let rows = center.row.saturating_sub(half)..=(center.row + half).min(gt.height() - 1);
        for r in rows {
            let cols = center.col.saturating_sub(half)..=(center.col + half).min(gt.width() - 1);
            for c in cols {
                let p = PixelIndex::new(r, c);
                if gt.label(p) == label {
                    entries.push(LabeledEntry::sampled(p, label));
                }
            }
        }
    }
    entries.sort_by_key(|e| e.pixel);
    Ok(LabeledSet::new(entries))
}

/// Stratified split. Classes with a single entry stay entirely in `train`.
pub fn split_validation(
    labeled: &LabeledSet,
    val_fraction: f64,
    seed: u64,
) -> Result<(LabeledSet, LabeledSet)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    if labeled.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let k = labeled.iter().map(|e| e.label as usize).max().unwrap_or(0);
    let counts = class_counts(labeled, k);
    let mut positions = vec![Vec::new(); k];
    for (i, e) in labeled.iter().enumerate() {
        positions[e.label as usize - 1].push(i);
    }

    let mut rng = rng::rng(seed);
    let mut to_val = vec![false; labeled.len()];
    for (class_positions, &c) in positions.iter().zip(&counts) {
        if c < 2 {
            continue;
        }
        let n_val = round_half_up(val_fraction * c as f64).clamp(1, c - 1);
        for i in index::sample(&mut rng, c, n_val) {
            to_val[class_positions[i]] = true;
        }
    }

    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (e, v) in labeled.iter().zip(to_val) {
        if v {
            val.push(*e);
        } else {
            train.push(*e);
        }
    }
    Ok((LabeledSet::new(train), LabeledSet::new(val)))
}
