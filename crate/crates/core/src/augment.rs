//! Gaussian-noise, spatial-smoothing and label-propagation augmentation, and
//! assembly of the rescaled training matrix.

use std::borrow::Cow;

use log::warn;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    class_counts, CubeKind, Dataset, LabeledEntry, LabeledSet, PixelIndex, Provenance, SpectralCube,
};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningSetting {
    /// Unlabeled pixels of the image may inform training.
    Transductive,
    /// Only the sampled training pixels may inform training.
    NonOverlapping,
}

impl LearningSetting {
    pub fn as_str(self) -> &'static str {
        match self {
            LearningSetting::Transductive => "transductive",
            LearningSetting::NonOverlapping => "non-overlapping",
        }
    }
}

impl std::str::FromStr for LearningSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(LearningSetting::Transductive),
            "non-overlapping" | "non_overlapping" => Ok(LearningSetting::NonOverlapping),
            other => Err(Error::Validation(format!("unknown setting '{other}'"))),
        }
    }
}

/// Which spectrum a test pixel is classified from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSpectrum {
    Original,
    /// Smoothing of the noise-free image over all pixels.
    Smoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    pub beta: f64,
    pub sigma: f64,
    pub use_smoothing: bool,
    pub use_label_aug: bool,
    pub setting: LearningSetting,
    pub seed: u64,
    /// `None` selects the setting's default: smoothed under transductive
    /// smoothing, original otherwise.
    pub test_spectrum: Option<TestSpectrum>,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            beta: 0.01,
            sigma: 3.0,
            use_smoothing: true,
            use_label_aug: true,
            setting: LearningSetting::Transductive,
            seed: 0,
            test_spectrum: None,
        }
    }
}

impl AugmentOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Validation(format!(
                "beta {} must be >= 0",
                self.beta
            )));
        }
        if self.use_smoothing && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Validation(format!(
                "sigma {} must be > 0 when smoothing",
                self.sigma
            )));
        }
        if self.setting == LearningSetting::NonOverlapping {
            if self.use_label_aug {
                return Err(Error::Validation(
                    "label augmentation is not available in the non-overlapping setting".into(),
                ));
            }
            if self.test_spectrum == Some(TestSpectrum::Smoothed) {
                return Err(Error::Validation(
                    "smoothed test spectra would use unlabeled pixels in the non-overlapping setting"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    pub fn resolved_test_spectrum(&self) -> TestSpectrum {
        match (self.test_spectrum, self.setting) {
            (Some(t), _) => t,
            (None, LearningSetting::Transductive) if self.use_smoothing => TestSpectrum::Smoothed,
            (None, _) => TestSpectrum::Original,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleParams {
    pub min_value: f64,
    pub max_value: f64,
}

impl RescaleParams {
    pub const IDENTITY: RescaleParams = RescaleParams {
        min_value: 0.0,
        max_value: 1.0,
    };

    pub fn new(min_value: f64, max_value: f64) -> Result<Self> {
        if !(max_value > min_value) {
            return Err(Error::Validation(format!(
                "rescale max {max_value} must exceed min {min_value}"
            )));
        }
        Ok(Self {
            min_value,
            max_value,
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.min_value) / (self.max_value - self.min_value)).clamp(0.0, 1.0)
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.min_value + y * (self.max_value - self.min_value)
    }
}

/// Fits one global affine map from the matrix range onto `[0, 1]`.
pub fn rescale(spectra: &[f64]) -> Result<(Vec<f64>, RescaleParams)> {
    if spectra.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (lo, hi) = spectra
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let params = if hi > lo {
        RescaleParams::new(lo, hi)?
    } else {
        warn!("constant training spectra ({lo}); rescale degenerates to identity");
        RescaleParams::IDENTITY
    };
    Ok((apply_rescale(spectra, &params), params))
}

pub fn apply_rescale(spectra: &[f64], params: &RescaleParams) -> Vec<f64> {
    spectra.iter().map(|&x| params.apply(x)).collect()
}

/// Rescaled rows of spectra with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    spectra: Vec<f64>,
    labels: Vec<u32>,
    bands: usize,
    num_classes: usize,
    pub rescale: RescaleParams,
}

impl TrainingSet {
    /// `spectra` is row-major `labels.len() × bands`; labels are class ids `1..=num_classes`.
    pub fn new(
        spectra: Vec<f64>,
        labels: Vec<u32>,
        bands: usize,
        num_classes: usize,
        rescale: RescaleParams,
    ) -> Result<Self> {
        if spectra.len() != labels.len() * bands {
            return Err(Error::Shape(format!(
                "{} spectrum values for {} rows of {bands} bands",
                spectra.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l == 0 || l as usize > num_classes) {
            return Err(Error::Validation(format!(
                "label {l} outside 1..={num_classes}"
            )));
        }
        Ok(Self {
            spectra,
            labels,
            bands,
            num_classes,
            rescale,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn spectra(&self) -> &[f64] {
        &self.spectra
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.spectra[i * self.bands..(i + 1) * self.bands]
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.labels[i] as usize - 1] = 1.0;
        v
    }

    /// The subset of rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> TrainingSet {
        let mut spectra = Vec::with_capacity(indices.len() * self.bands);
        for &i in indices {
            spectra.extend_from_slice(self.row(i));
        }
        TrainingSet {
            spectra,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            bands: self.bands,
            num_classes: self.num_classes,
            rescale: self.rescale,
        }
    }
}

/// `P + beta · ε` with i.i.d. standard normal `ε`, one draw per value.
pub fn add_noise(cube: &SpectralCube, beta: f64, seed: u64) -> Result<SpectralCube> {
    if cube.kind() != CubeKind::Original {
        return Err(Error::Validation(format!(
            "noise must be added to the original cube, got {:?}",
            cube.kind()
        )));
    }
    if !(beta >= 0.0) {
        return Err(Error::Validation(format!("beta {beta} must be >= 0")));
    }
    let mut rng = rng::rng(seed);
    let data = cube
        .data()
        .iter()
        .map(|&v| {
            let eps: f64 = rng.sample(StandardNormal);
            (v as f64 + beta * eps) as f32
        })
        .collect();
    Ok(cube.derived(data, CubeKind::Noisy))
}

/// Offsets inside the radius-`3σ` disc with weights `exp(-d² / 2σ)`.
pub fn smoothing_window(sigma: f64) -> Vec<(isize, isize, f64)> {
    let radius = 3.0 * sigma;
    let reach = radius.floor() as isize;
    let mut window = Vec::new();
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let d2 = (dr * dr + dc * dc) as f64;
            if d2 <= radius * radius {
                window.push((dr, dc, (-d2 / (2.0 * sigma)).exp()));
            }
        }
    }
    window
}

/// Truncated Gaussian spatial smoothing, applied band by band.
///
/// Each output pixel is the normalized weighted mean of the pixels within
/// distance `3σ`. With a `support`, neighbors are restricted to support pixels;
/// the pixel itself always contributes with weight 1, so a pixel with no
/// support neighbors keeps its own spectrum. Rows are processed in parallel on
/// the current rayon pool.
pub fn gaussian_smooth(
    cube: &SpectralCube,
    sigma: f64,
    support: Option<&[PixelIndex]>,
) -> Result<SpectralCube> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("sigma {sigma} must be > 0")));
    }
    let (h, w, m) = (cube.height(), cube.width(), cube.bands());
    let mask = match support {
        Some(pixels) => {
            if pixels.is_empty() {
                return Err(Error::Validation("smoothing support is empty".into()));
            }
            let mut mask = vec![false; h * w];
            for p in pixels {
                if p.row >= h || p.col >= w {
                    return Err(Error::Validation(format!(
                        "support pixel {p} out of bounds"
                    )));
                }
                mask[p.row * w + p.col] = true;
            }
            Some(mask)
        }
        None => None,
    };
    let window = smoothing_window(sigma);
    let src = cube.data();
    let mut out = vec![0f32; src.len()];
    if m == 0 {
        return Ok(cube.derived(out, CubeKind::Smoothed));
    }

    out.par_chunks_mut(w * m)
        .enumerate()
        .for_each(|(i, row_out)| {
            let mut acc = vec![0f64; m];
            for j in 0..w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut total = 0.0;
                for &(dr, dc, weight) in &window {
                    let r = i as isize + dr;
                    let c = j as isize + dc;
                    if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                        continue;
                    }
                    let flat = r as usize * w + c as usize;
                    let is_self = dr == 0 && dc == 0;
                    if !is_self {
                        if let Some(mask) = &mask {
                            if !mask[flat] {
                                continue;
                            }
                        }
                    }
                    total += weight;
                    let spectrum = &src[flat * m..(flat + 1) * m];
                    for (a, &v) in acc.iter_mut().zip(spectrum) {
                        *a += weight * v as f64;
                    }
                }
                let dst = &mut row_out[j * m..(j + 1) * m];
                for (d, a) in dst.iter_mut().zip(&acc) {
                    *d = (a / total) as f32;
                }
            }
        });
    Ok(cube.derived(out, CubeKind::Smoothed))
}

/// Probability that a neighbor of a class-`class` pixel is propagated.
///
/// `counts` is indexed `class - 1`. When every class has the same count the
/// ratio is undefined and the probability is 1.
pub fn selection_probability(counts: &[usize], class: u32) -> f64 {
    let min = *counts.iter().min().expect("non-empty counts") as f64;
    let max = *counts.iter().max().expect("non-empty counts") as f64;
    if max == min {
        return 1.0;
    }
    1.0 - (counts[class as usize - 1] as f64 - min) / (max - min)
}

/// Propagates labels to Moore neighbors, favoring under-represented classes.
///
/// Class counts are taken once from `labeled`. The output keeps every input
/// entry and appends the accepted neighbors, which may repeat pixels or
/// disagree with one another.
pub fn label_augment(
    labeled: &LabeledSet,
    dims: (usize, usize),
    num_classes: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if labeled.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if labeled.iter().any(|e| e.provenance != Provenance::Sampled) {
        return Err(Error::Validation(
            "label augmentation expects only sampled entries".into(),
        ));
    }
    let counts = class_counts(labeled, num_classes);
    let (h, w) = dims;
    let mut rng = rng::rng(seed);
    let mut entries = labeled.entries.clone();
    for e in labeled {
        let p = selection_probability(&counts, e.label);
        for neighbor in e.pixel.moore_neighbors(h, w) {
            if rng.random::<f64>() < p {
                entries.push(LabeledEntry {
                    pixel: neighbor,
                    label: e.label,
                    provenance: Provenance::LabelAugmented,
                });
            }
        }
    }
    Ok(LabeledSet::new(entries))
}

/// Everything produced while building a training set.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub training: TrainingSet,
    /// The labeled set after optional label propagation.
    pub labeled: LabeledSet,
    pub noisy: SpectralCube,
    pub smoothed: Option<SpectralCube>,
}

impl Assembly {
    pub fn num_variants(&self) -> usize {
        2 + usize::from(self.smoothed.is_some())
    }
}

pub fn assemble_training_set(
    dataset: &Dataset,
    labeled: &LabeledSet,
    opts: &AugmentOptions,
) -> Result<TrainingSet> {
    assemble(dataset, labeled, opts).map(|a| a.training)
}

/// Noise, optional smoothing, optional label propagation, then one row per
/// (entry, image variant), rescaled globally.
pub fn assemble(
    dataset: &Dataset,
    labeled: &LabeledSet,
    opts: &AugmentOptions,
) -> Result<Assembly> {
    opts.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let cube = &dataset.cube;
    labeled.validate(dataset.num_classes, cube.height(), cube.width())?;

    let noisy = add_noise(
        cube,
        opts.beta,
        rng::derive_seed(opts.seed, Stream::Noise as u64),
    )?;
    let smoothed = if opts.use_smoothing {
        let support: Option<Vec<PixelIndex>> = match opts.setting {
            LearningSetting::Transductive => None,
            LearningSetting::NonOverlapping => Some(labeled.pixels().collect()),
        };
        Some(gaussian_smooth(&noisy, opts.sigma, support.as_deref())?)
    } else {
        None
    };
    let final_labeled = if opts.use_label_aug {
        label_augment(
            labeled,
            (cube.height(), cube.width()),
            dataset.num_classes,
            rng::derive_seed(opts.seed, Stream::LabelAugment as u64),
        )?
    } else {
        labeled.clone()
    };

    let m = cube.bands();
    let variants: Vec<&SpectralCube> = [Some(cube), Some(&noisy), smoothed.as_ref()]
        .into_iter()
        .flatten()
        .collect();
    let rows = variants.len() * final_labeled.len();
    let mut raw = Vec::with_capacity(rows * m);
    let mut labels = Vec::with_capacity(rows);
    for image in &variants {
        for e in &final_labeled {
            raw.extend(image.spectrum(e.pixel).iter().map(|&v| v as f64));
            labels.push(e.label);
        }
    }
    let (spectra, params) = rescale(&raw)?;
    let training = TrainingSet::new(spectra, labels, m, dataset.num_classes, params)?;
    Ok(Assembly {
        training,
        labeled: final_labeled,
        noisy,
        smoothed,
    })
}

/// The image test pixels are classified from under `opts`.
pub fn test_cube<'a>(dataset: &'a Dataset, opts: &AugmentOptions) -> Result<Cow<'a, SpectralCube>> {
    match opts.resolved_test_spectrum() {
        TestSpectrum::Original => Ok(Cow::Borrowed(&dataset.cube)),
        TestSpectrum::Smoothed => Ok(Cow::Owned(gaussian_smooth(
            &dataset.cube,
            opts.sigma,
            None,
        )?)),
    }
}

/// Rescaled spectra of `pixels` read from `cube`, row-major `pixels.len() × M`.
pub fn gather_spectra(
    cube: &SpectralCube,
    pixels: &[PixelIndex],
    params: &RescaleParams,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(pixels.len() * cube.bands());
    for &p in pixels {
        out.extend(cube.spectrum(p).iter().map(|&v| params.apply(v as f64)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroundTruth;
    use proptest::prelude::*;
    use rand::Rng;

    fn cube_from(
        h: usize,
        w: usize,
        m: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> SpectralCube {
        let mut data = Vec::with_capacity(h * w * m);
        for i in 0..h {
            for j in 0..w {
                for k in 0..m {
                    data.push(f(i, j, k));
                }
            }
        }
        SpectralCube::new(h, w, m, data, CubeKind::Original).unwrap()
    }

    fn random_cube(h: usize, w: usize, m: usize, seed: u64) -> SpectralCube {
        let mut rng = rng::rng(seed);
        let data = (0..h * w * m)
            .map(|_| rng.random_range(-2.0f32..2.0))
            .collect();
        SpectralCube::new(h, w, m, data, CubeKind::Original).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let cube = random_cube(4, 5, 3, 1);
        let noisy = add_noise(&cube, 0.0, 9).unwrap();
        assert_eq!(noisy.data(), cube.data());
        assert_eq!(noisy.kind(), CubeKind::Noisy);
        assert!(add_noise(&noisy, 0.1, 9).is_err());
    }

    #[test]
    fn noise_magnitude_matches_folded_normal() {
        // Monte-Carlo oracle for E|beta * N(0,1)| independent of add_noise
        let mut rng = rng::rng(777);
        let n = 200_000;
        let mc: f64 = (0..n)
            .map(|_| (0.01 * rng.sample::<f64, _>(StandardNormal)).abs())
            .sum::<f64>()
            / n as f64;
        let analytic = 0.01 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mc - analytic).abs() / analytic < 0.01);

        let cube = cube_from(100, 100, 20, |_, _, _| 0.5);
        let noisy = add_noise(&cube, 0.01, 3).unwrap();
        let mean_abs = cube
            .data()
            .iter()
            .zip(noisy.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / cube.data().len() as f64;
        assert!((mean_abs - 0.00798).abs() / 0.00798 < 0.05, "{mean_abs}");
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let cube = random_cube(6, 6, 4, 2);
        assert_eq!(
            add_noise(&cube, 0.01, 5).unwrap(),
            add_noise(&cube, 0.01, 5).unwrap()
        );
        assert_ne!(
            add_noise(&cube, 0.01, 5).unwrap(),
            add_noise(&cube, 0.01, 6).unwrap()
        );
    }

    #[test]
    fn smoothing_hand_example() {
        let cube = cube_from(1, 3, 1, |_, j, _| if j == 1 { 1.0 } else { 0.0 });
        let out = gaussian_smooth(&cube, 1.0, None).unwrap();
        let e = (-0.5f64).exp();
        let expected = 1.0 / (1.0 + 2.0 * e);
        assert!((out.data()[1] as f64 - expected).abs() < 1e-6);
        assert!((out.data()[1] - 0.4519).abs() < 1e-4);
        assert_eq!(out.kind(), CubeKind::Smoothed);
    }

    #[test]
    fn smoothing_window_is_a_disc() {
        let w = smoothing_window(1.0);
        // integer offsets with dr^2 + dc^2 <= 9
        let brute = (-3i32..=3)
            .flat_map(|a| (-3i32..=3).map(move |b| a * a + b * b))
            .filter(|&d| d <= 9)
            .count();
        assert_eq!(w.len(), brute);
        assert!(w.iter().any(|&(r, c, wt)| r == 0 && c == 0 && wt == 1.0));
        assert!(!w.iter().any(|&(r, c, _)| r == 3 && c == 1));
    }

    #[test]
    fn smoothing_single_support_pixel_is_identity() {
        let cube = random_cube(5, 5, 3, 4);
        let p = PixelIndex::new(2, 3);
        let out = gaussian_smooth(&cube, 2.0, Some(&[p])).unwrap();
        assert_eq!(out.spectrum(p), cube.spectrum(p));
        assert!(gaussian_smooth(&cube, 2.0, Some(&[])).is_err());
        assert!(gaussian_smooth(&cube, 0.0, None).is_err());
    }

    #[test]
    fn smoothing_support_restricts_neighbors() {
        let cube = cube_from(1, 5, 1, |_, j, _| j as f32);
        let support = [PixelIndex::new(0, 0), PixelIndex::new(0, 4)];
        let out = gaussian_smooth(&cube, 1.0, Some(&support)).unwrap();
        // pixel 0 sees itself and pixel 4 (distance 4 > 3 excluded): identity
        assert_eq!(out.data()[0], 0.0);
        // pixel 2 sees itself only among in-disc support? distance 2 to both ends
        let e = (-4.0f64 / 2.0).exp();
        let expected = (2.0 + e * 0.0 + e * 4.0) / (1.0 + 2.0 * e);
        assert!((out.data()[2] as f64 - expected).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn smoothing_preserves_constant_bands(
            c in -100f32..100.0, sigma in prop::sample::select(vec![1.0, 1.67, 3.0, 5.0]),
            h in 1usize..12, w in 1usize..12
        ) {
            let cube = cube_from(h, w, 2, |_, _, k| if k == 0 { c } else { -c });
            let out = gaussian_smooth(&cube, sigma, None).unwrap();
            for (i, v) in out.data().iter().enumerate() {
                let want = if i % 2 == 0 { c } else { -c };
                prop_assert!((v - want).abs() <= 1e-6 * want.abs().max(1.0));
            }
        }

        #[test]
        fn smoothing_is_convex(seed in any::<u64>(), sigma in 0.5f64..2.5) {
            let cube = random_cube(7, 6, 2, seed);
            let out = gaussian_smooth(&cube, sigma, None).unwrap();
            let window = smoothing_window(sigma);
            for i in 0..7isize {
                for j in 0..6isize {
                    for k in 0..2 {
                        let vals: Vec<f32> = window
                            .iter()
                            .filter_map(|&(dr, dc, _)| {
                                let (r, c) = (i + dr, j + dc);
                                (r >= 0 && c >= 0 && r < 7 && c < 6).then(|| {
                                    cube.spectrum(PixelIndex::new(r as usize, c as usize))[k]
                                })
                            })
                            .collect();
                        let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
                        let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                        let v = out.spectrum(PixelIndex::new(i as usize, j as usize))[k];
                        prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
                    }
                }
            }
        }

        #[test]
        fn smoothing_ignores_pixels_beyond_reach(seed in any::<u64>(), r in 0usize..15, c in 0usize..15) {
            let sigma = 1.0;
            let cube = random_cube(15, 15, 2, seed);
            let target = PixelIndex::new(7, 7);
            let d2 = (r as f64 - 7.0).powi(2) + (c as f64 - 7.0).powi(2);
            prop_assume!(d2 > 9.0);
            let mut data = cube.data().to_vec();
            data[(r * 15 + c) * 2] += 1000.0;
            let perturbed = SpectralCube::new(15, 15, 2, data, CubeKind::Original).unwrap();
            let a = gaussian_smooth(&cube, sigma, None).unwrap();
            let b = gaussian_smooth(&perturbed, sigma, None).unwrap();
            prop_assert_eq!(a.spectrum(target), b.spectrum(target));
        }
    }

    fn labeled_with_counts(counts: &[usize], width: usize) -> LabeledSet {
        // entries laid out sparsely (every third column) so neighbors are distinct
        let mut entries = Vec::new();
        let mut slot = 0;
        for (k, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                let row = 1 + 3 * (slot / width);
                let col = 1 + 3 * (slot % width);
                entries.push(LabeledEntry::sampled(
                    PixelIndex::new(row, col),
                    k as u32 + 1,
                ));
                slot += 1;
            }
        }
        LabeledSet::new(entries)
    }

    #[test]
    fn selection_probability_limits() {
        let c = [100, 10, 50];
        assert_eq!(selection_probability(&c, 2), 1.0);
        assert_eq!(selection_probability(&c, 1), 0.0);
        assert!((selection_probability(&c, 3) - (1.0 - 40.0 / 90.0)).abs() < 1e-15);
        assert_eq!(selection_probability(&[7, 7, 7], 2), 1.0);
    }

    #[test]
    fn label_augment_min_and_max_classes() {
        let set = labeled_with_counts(&[100, 10, 50], 20);
        let dims = (1 + 3 * 9, 1 + 3 * 20);
        let out = label_augment(&set, dims, 3, 11).unwrap();
        assert_eq!(&out.entries[..set.len()], &set.entries[..]);
        let added = &out.entries[set.len()..];
        assert!(added
            .iter()
            .all(|e| e.provenance == Provenance::LabelAugmented));
        let by_class = class_counts(&LabeledSet::new(added.to_vec()), 3);
        assert_eq!(by_class[0], 0);
        assert_eq!(by_class[1], 10 * 8);
    }

    #[test]
    fn label_augment_clips_at_borders_and_allows_conflicts() {
        let set = LabeledSet::new(vec![
            LabeledEntry::sampled(PixelIndex::new(0, 0), 1),
            LabeledEntry::sampled(PixelIndex::new(0, 1), 2),
        ]);
        // balanced counts: every neighbor accepted
        let out = label_augment(&set, (2, 2), 2, 0).unwrap();
        assert_eq!(out.len(), 2 + 3 + 3);
        assert!(out.validate(2, 2, 2).is_ok());
        let conflicts = out
            .iter()
            .filter(|e| e.pixel == PixelIndex::new(1, 0))
            .map(|e| e.label)
            .collect::<Vec<_>>();
        assert_eq!(conflicts, vec![1, 2]);

        let aug = out.clone();
        assert!(label_augment(&aug, (2, 2), 2, 0).is_err());
        assert!(label_augment(&LabeledSet::default(), (2, 2), 2, 0).is_err());
    }

    #[test]
    fn label_augment_is_deterministic() {
        let set = labeled_with_counts(&[30, 5, 12], 10);
        let dims = (1 + 3 * 5, 1 + 3 * 10);
        assert_eq!(
            label_augment(&set, dims, 3, 4).unwrap(),
            label_augment(&set, dims, 3, 4).unwrap()
        );
    }

    #[test]
    fn rescale_examples() {
        let (out, p) = rescale(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 1.0]);
        assert_eq!((p.min_value, p.max_value), (2.0, 6.0));
        assert_eq!(apply_rescale(&[1.0, 7.0], &p), vec![0.0, 1.0]);

        let (out, p) = rescale(&[5.0, 5.0]).unwrap();
        assert_eq!(p, RescaleParams::IDENTITY);
        assert_eq!(out, vec![1.0, 1.0]);
        assert!(rescale(&[]).is_err());
        assert!(RescaleParams::new(1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn rescale_round_trips(values in proptest::collection::vec(-1e4f64..1e4, 2..50)) {
            let (out, p) = rescale(&values).unwrap();
            prop_assume!(p != RescaleParams::IDENTITY);
            for (x, y) in values.iter().zip(&out) {
                prop_assert!((0.0..=1.0).contains(y));
                let back = p.invert(*y);
                prop_assert!((back - x).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }

    fn toy_dataset() -> Dataset {
        let (h, w) = (8, 8);
        let cube = cube_from(h, w, 5, |i, j, k| (i * 7 + j * 3 + k) as f32 * 0.1);
        let labels = (0..h * w)
            .map(|i| if i % 9 == 0 { 0 } else { 1 + (i % 3) as u32 })
            .collect();
        Dataset::new(cube, GroundTruth::new(h, w, labels).unwrap()).unwrap()
    }

    #[test]
    fn assembly_row_counts_for_all_flag_combinations() {
        let ds = toy_dataset();
        let labeled = crate::sampling::sample_count(&ds.gt, 3, 1).unwrap();
        for smoothing in [false, true] {
            for label_aug in [false, true] {
                for setting in [
                    LearningSetting::Transductive,
                    LearningSetting::NonOverlapping,
                ] {
                    let opts = AugmentOptions {
                        use_smoothing: smoothing,
                        use_label_aug: label_aug,
                        setting,
                        sigma: 1.0,
                        seed: 5,
                        ..Default::default()
                    };
                    let result = assemble(&ds, &labeled, &opts);
                    if setting == LearningSetting::NonOverlapping && label_aug {
                        assert!(matches!(result, Err(Error::Validation(_))));
                        continue;
                    }
                    let a = result.unwrap();
                    let variants = if smoothing { 3 } else { 2 };
                    assert_eq!(a.training.len(), variants * a.labeled.len());
                    if !label_aug {
                        assert_eq!(a.labeled, labeled);
                    }
                    assert!(a.training.spectra().iter().all(|v| (0.0..=1.0).contains(v)));
                    for i in 0..a.training.len() {
                        let oh = a.training.one_hot(i);
                        assert_eq!(oh.iter().filter(|&&v| v == 1.0).count(), 1);
                        assert_eq!(oh.iter().sum::<f64>(), 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn assembly_of_constant_single_pixel() {
        let cube = cube_from(3, 3, 4, |_, _, _| 2.0);
        let gt = GroundTruth::new(3, 3, vec![0, 0, 0, 0, 1, 0, 0, 0, 0]).unwrap();
        let ds = Dataset::new(cube, gt).unwrap();
        let labeled = LabeledSet::new(vec![LabeledEntry::sampled(PixelIndex::new(1, 1), 1)]);
        let opts = AugmentOptions {
            beta: 0.0,
            use_label_aug: false,
            sigma: 1.0,
            ..Default::default()
        };
        let t = assemble_training_set(&ds, &labeled, &opts).unwrap();
        assert_eq!(t.len(), 3);
        assert!((0..3).all(|i| t.row(i) == t.row(0)));
        assert!(matches!(
            assemble_training_set(&ds, &LabeledSet::default(), &opts),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn non_overlapping_smoothing_uses_only_labeled_pixels() {
        let ds = toy_dataset();
        let labeled = crate::sampling::sample_count(&ds.gt, 2, 3).unwrap();
        let opts = AugmentOptions {
            use_label_aug: false,
            setting: LearningSetting::NonOverlapping,
            sigma: 2.0,
            beta: 0.0,
            ..Default::default()
        };
        let a = assemble(&ds, &labeled, &opts).unwrap();
        let pixels: Vec<_> = labeled.pixels().collect();
        let expected = gaussian_smooth(&ds.cube, 2.0, Some(&pixels)).unwrap();
        for p in &pixels {
            assert_eq!(
                a.smoothed.as_ref().unwrap().spectrum(*p),
                expected.spectrum(*p)
            );
        }
        assert_eq!(opts.resolved_test_spectrum(), TestSpectrum::Original);
    }

    #[test]
    fn test_spectrum_defaults() {
        let mut opts = AugmentOptions::default();
        assert_eq!(opts.resolved_test_spectrum(), TestSpectrum::Smoothed);
        opts.use_smoothing = false;
        assert_eq!(opts.resolved_test_spectrum(), TestSpectrum::Original);
        opts.test_spectrum = Some(TestSpectrum::Smoothed);
        assert_eq!(opts.resolved_test_spectrum(), TestSpectrum::Smoothed);
        opts.setting = LearningSetting::NonOverlapping;
        opts.use_label_aug = false;
        assert!(opts.validate().is_err());
    }
}
