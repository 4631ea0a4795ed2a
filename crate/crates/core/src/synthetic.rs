//! Generated scenes with known class structure, for tests and demos.
//!
//! Classes occupy rectangular blocks of a grid laid over the image. Every
//! class shares a smooth baseline spectrum and is distinguished by a narrow
//! Gaussian bump centered on its own band; i.i.d. Gaussian noise is then added
//! to every value.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{CubeKind, Dataset, GroundTruth, SpectralCube};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub bump_height: f64,
    /// Standard deviation of the bump, in bands.
    pub bump_width: f64,
    pub noise_std: f64,
    /// Width in pixels of a background (label 0) frame around the scene.
    pub border: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 60,
            width: 60,
            bands: 32,
            classes: 4,
            bump_height: 1.0,
            bump_width: 1.5,
            noise_std: 0.5,
            border: 0,
            seed: 0,
        }
    }
}

/// Class of each pixel: an `g × g` grid of blocks with `g = ⌈√K⌉`, blocks
/// numbered row-major and wrapped modulo `K`.
pub fn block_labels(spec: &SceneSpec) -> Vec<u32> {
    let grid = (spec.classes as f64).sqrt().ceil() as usize;
    let (h, w, b) = (spec.height, spec.width, spec.border);
    let inner_h = h.saturating_sub(2 * b).max(1);
    let inner_w = w.saturating_sub(2 * b).max(1);
    let mut labels = vec![0u32; h * w];
    for i in b..h.saturating_sub(b) {
        for j in b..w.saturating_sub(b) {
            let gi = (i - b) * grid / inner_h;
            let gj = (j - b) * grid / inner_w;
            labels[i * w + j] = ((gi * grid + gj) % spec.classes) as u32 + 1;
        }
    }
    labels
}

/// Noise-free spectrum of class `class` (1-based); background gets the baseline.
pub fn class_signature(spec: &SceneSpec, class: u32) -> Vec<f64> {
    let m = spec.bands as f64;
    (0..spec.bands)
        .map(|k| {
            let x = k as f64;
            let baseline = 0.5 + 0.2 * (std::f64::consts::PI * x / m).sin();
            if class == 0 {
                return baseline;
            }
            let center = class as f64 * m / (spec.classes as f64 + 1.0);
            let z = (x - center) / spec.bump_width;
            baseline + spec.bump_height * (-0.5 * z * z).exp()
        })
        .collect()
}

pub fn generate(spec: &SceneSpec) -> Result<Dataset> {
    let labels = block_labels(spec);
    let signatures: Vec<Vec<f64>> = (0..=spec.classes as u32)
        .map(|c| class_signature(spec, c))
        .collect();
    let mut rng = rng::rng(spec.seed);
    let mut data = Vec::with_capacity(labels.len() * spec.bands);
    for &l in &labels {
        for &v in &signatures[l as usize] {
            let eps: f64 = rng.sample(StandardNormal);
            data.push((v + spec.noise_std * eps) as f32);
        }
    }
    let cube = SpectralCube::new(
        spec.height,
        spec.width,
        spec.bands,
        data,
        CubeKind::Original,
    )?;
    let gt = GroundTruth::new(spec.height, spec.width, labels)?;
    Dataset::new(cube, gt)
}
