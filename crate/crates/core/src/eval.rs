//! Accuracy, the exact sign test for paired classifier comparison, repeated
//! experiment runs, and result/map writers.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, gather_spectra, AugmentOptions, LearningSetting, TrainingSet};
use crate::data::{Dataset, GroundTruth, LabeledSet, PixelIndex};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::net::{self, HyperParams, TrainReport};
use crate::rng::{self, Stream};
use crate::sampling::{self, SamplingSpec};

pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

/// Which of the three tricks are enabled: locality regularization (R),
/// smoothing augmentation (S) and label augmentation (L).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Variant {
    pub regularize: bool,
    pub smooth: bool,
    pub label_aug: bool,
}

impl Variant {
    pub const CNN: Variant = Variant {
        regularize: false,
        smooth: false,
        label_aug: false,
    };
    pub const CNN_RSL: Variant = Variant {
        regularize: true,
        smooth: true,
        label_aug: true,
    };

    pub fn letters(&self) -> String {
        [
            (self.regularize, 'R'),
            (self.smooth, 'S'),
            (self.label_aug, 'L'),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, c)| *c)
        .collect()
    }

    pub fn all() -> impl Iterator<Item = Variant> {
        (0..8u8).map(|bits| Variant {
            regularize: bits & 1 != 0,
            smooth: bits & 2 != 0,
            label_aug: bits & 4 != 0,
        })
    }

    /// Augmentation options and hyperparameters with this variant's tricks applied.
    pub fn apply(
        &self,
        opts: &AugmentOptions,
        hyper: &HyperParams,
    ) -> (AugmentOptions, HyperParams) {
        let mut opts = opts.clone();
        opts.use_smoothing = self.smooth;
        opts.use_label_aug = self.label_aug;
        let mut hyper = hyper.clone();
        if !self.regularize {
            hyper.lambda2 = 0.0;
        }
        (opts, hyper)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letters = self.letters();
        if letters.is_empty() {
            write!(f, "CNN")
        } else {
            write!(f, "CNN-{letters}")
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts a subset of `RSL` (any order, optionally prefixed `CNN-`), or `CNN`/empty.
    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim();
        let body = body
            .strip_prefix("CNN-")
            .or_else(|| body.strip_prefix("cnn-"))
            .unwrap_or(body);
        let body = if body.eq_ignore_ascii_case("cnn") {
            ""
        } else {
            body
        };
        let mut v = Variant::default();
        for c in body.chars() {
            let slot = match c.to_ascii_uppercase() {
                'R' => &mut v.regularize,
                'S' => &mut v.smooth,
                'L' => &mut v.label_aug,
                _ => return Err(Error::Validation(format!("bad variant '{s}'"))),
            };
            if *slot {
                return Err(Error::Validation(format!("repeated flag in variant '{s}'")));
            }
            *slot = true;
        }
        Ok(v)
    }
}

pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Shape("no predictions to score".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Accuracy restricted to each true class; NaN for classes with no pixels.
pub fn per_class_accuracy(pred: &[u32], truth: &[u32], num_classes: usize) -> Vec<f64> {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        let k = t as usize - 1;
        totals[k] += 1;
        hits[k] += usize::from(p == t);
    }
    hits.iter()
        .zip(&totals)
        .map(|(&h, &n)| {
            if n == 0 {
                f64::NAN
            } else {
                h as f64 / n as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub n_discordant: usize,
    pub wins_a: usize,
    pub p_value: f64,
}

impl ComparisonResult {
    pub fn significant(&self, threshold: f64) -> bool {
        self.p_value < threshold
    }
}

/// Exact two-sided sign test over the pixels where exactly one classifier is right.
pub fn binomial_compare(
    preds_a: &[u32],
    preds_b: &[u32],
    truth: &[u32],
) -> Result<ComparisonResult> {
    if preds_a.len() != truth.len() || preds_b.len() != truth.len() {
        return Err(Error::Shape(format!(
            "prediction lengths {} and {} differ from {} labels",
            preds_a.len(),
            preds_b.len(),
            truth.len()
        )));
    }
    let (mut n, mut wins_a) = (0, 0);
    for ((a, b), t) in preds_a.iter().zip(preds_b).zip(truth) {
        match (a == t, b == t) {
            (true, false) => {
                n += 1;
                wins_a += 1;
            }
            (false, true) => n += 1,
            _ => {}
        }
    }
    Ok(ComparisonResult {
        n_discordant: n,
        wins_a,
        p_value: sign_test_p_value(n, wins_a),
    })
}

/// `min(1, 2 · P[X ≥ max(w, n − w)])` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p_value(n: usize, wins: usize) -> f64 {
    assert!(wins <= n, "wins {wins} exceed trials {n}");
    if n == 0 {
        return 1.0;
    }
    let t = wins.max(n - wins);
    let tail = if n <= 126 {
        upper_tail_exact(n, t)
    } else {
        upper_tail_log(n, t)
    };
    (2.0 * tail).min(1.0)
}

/// `P[X ≥ t]` from an exact integer count of outcomes.
fn upper_tail_exact(n: usize, t: usize) -> f64 {
    // Pascal's rule keeps every intermediate below 2^n.
    let mut row: Vec<u128> = vec![1];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    let count: u128 = row[t..].iter().sum();
    count as f64 / 2f64.powi(n as i32)
}

/// `P[X ≥ t]` summed in log space, for `n` too large for exact counts.
fn upper_tail_log(n: usize, t: usize) -> f64 {
    // ln C(n, t) via C(n, t) = Π_{i=1}^{n−t} (t + i) / i
    let mut ln_c: f64 = (1..=n - t).map(|i| ((t + i) as f64 / i as f64).ln()).sum();
    let mut terms = Vec::with_capacity(n - t + 1);
    for k in t..=n {
        terms.push(ln_c - n as f64 * std::f64::consts::LN_2);
        if k < n {
            ln_c += ((n - k) as f64 / (k + 1) as f64).ln();
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max.exp() * terms.iter().map(|x| (x - max).exp()).sum::<f64>()
}

/// Everything needed to repeat one experimental condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sampling: SamplingSpec,
    pub variant: Variant,
    pub hyper: HyperParams,
    pub augment: AugmentOptions,
    pub val_fraction: f64,
    pub runs: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub setting: LearningSetting,
    pub run: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub test_pixels: Vec<PixelIndex>,
    pub truth: Vec<u32>,
    pub predictions: Vec<u32>,
    pub labeled: LabeledSet,
    pub report: TrainReport,
    pub model: Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub n_runs: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary {
            mean,
            std,
            n_runs: n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub runs: Vec<RunResult>,
    pub summary: Summary,
}

/// Seed used by run `run` of an experiment.
pub fn run_seed(base_seed: u64, run: usize) -> u64 {
    base_seed.wrapping_add(run as u64)
}

/// Runs `spec.runs` independent repetitions, in parallel on the current rayon pool.
pub fn run_experiment(dataset: &Dataset, spec: &ExperimentSpec) -> Result<Experiment> {
    if spec.runs == 0 {
        return Err(Error::Validation("need at least one run".into()));
    }
    let runs: Vec<RunResult> = (0..spec.runs)
        .into_par_iter()
        .map(|r| {
            run_once(dataset, spec, r).map_err(|e| Error::Run {
                run: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let accuracies: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    Ok(Experiment {
        summary: Summary::of(&accuracies),
        runs,
    })
}

/// One repetition: sample, split off validation pixels, augment, train, and
/// score every remaining foreground pixel.
pub fn run_once(dataset: &Dataset, spec: &ExperimentSpec, run: usize) -> Result<RunResult> {
    let seed = run_seed(spec.base_seed, run);
    let sampling = SamplingSpec {
        seed,
        ..spec.sampling.clone()
    };
    let labeled = sampling.sample(&dataset.gt)?;

    let (mut opts, mut hyper) = spec.variant.apply(&spec.augment, &spec.hyper);
    opts.seed = seed;
    hyper.seed = seed;
    opts.validate()?;
    hyper.validate(dataset.cube.bands())?;

    let train_pixels: HashSet<PixelIndex> = labeled.pixels().collect();
    let test_pixels: Vec<PixelIndex> = crate::data::foreground_indices(&dataset.gt)
        .into_iter()
        .filter(|p| !train_pixels.contains(p))
        .collect();
    assert!(
        test_pixels.iter().all(|p| !train_pixels.contains(p)),
        "test pixels overlap the training sample"
    );
    if test_pixels.is_empty() {
        return Err(Error::Validation("sampling left no test pixels".into()));
    }

    let (fit, val) = sampling::split_validation(
        &labeled,
        spec.val_fraction,
        rng::derive_seed(seed, Stream::Validation as u64),
    )?;
    let (fit, val) = if val.is_empty() {
        warn!("run {run}: every class has a single pixel; validating on the training pixels");
        (fit.clone(), fit)
    } else {
        (fit, val)
    };

    let assembly = augment::assemble(dataset, &fit, &opts)?;
    let rescale = assembly.training.rescale;
    let test_image = augment::test_cube(dataset, &opts)?;

    let val_pixels: Vec<PixelIndex> = val.pixels().collect();
    let valset = TrainingSet::new(
        gather_spectra(&test_image, &val_pixels, &rescale),
        val.iter().map(|e| e.label).collect(),
        dataset.cube.bands(),
        dataset.num_classes,
        rescale,
    )?;
    let (params, report) = net::train(&assembly.training, &valset, &hyper)?;

    let spectra = gather_spectra(&test_image, &test_pixels, &rescale);
    let (predictions, _) = net::predict(&params, &spectra);
    let truth: Vec<u32> = test_pixels.iter().map(|&p| dataset.gt.label(p)).collect();

    Ok(RunResult {
        variant: spec.variant,
        setting: opts.setting,
        run,
        seed,
        accuracy: accuracy(&predictions, &truth)?,
        per_class_accuracy: per_class_accuracy(&predictions, &truth, dataset.num_classes),
        test_pixels,
        truth,
        predictions,
        labeled,
        report,
        model: Model { params, rescale },
    })
}

pub fn write_results_csv<W: Write>(mut w: W, experiment: &Experiment) -> std::io::Result<()> {
    writeln!(w, "variant,setting,run,seed,accuracy")?;
    let mut runs: Vec<&RunResult> = experiment.runs.iter().collect();
    runs.sort_by_key(|r| r.run);
    for r in &runs {
        writeln!(
            w,
            "{},{},{},{},{:.6}",
            r.variant,
            r.setting.as_str(),
            r.run,
            r.seed,
            r.accuracy
        )?;
    }
    if let Some(first) = runs.first() {
        let s = experiment.summary;
        writeln!(w, "variant,setting,mean,std,n_runs")?;
        writeln!(
            w,
            "{},{},{:.6},{:.6},{}",
            first.variant,
            first.setting.as_str(),
            s.mean,
            s.std,
            s.n_runs
        )?;
    }
    Ok(())
}

/// Per-pixel predictions, the input of a later comparison.
pub fn write_predictions_csv<W: Write>(mut w: W, experiment: &Experiment) -> std::io::Result<()> {
    writeln!(w, "variant,setting,run,row,col,truth,pred")?;
    let mut runs: Vec<&RunResult> = experiment.runs.iter().collect();
    runs.sort_by_key(|r| r.run);
    for r in runs {
        for ((p, t), y) in r.test_pixels.iter().zip(&r.truth).zip(&r.predictions) {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.variant,
                r.setting.as_str(),
                r.run,
                p.row,
                p.col,
                t,
                y
            )?;
        }
    }
    Ok(())
}

pub fn write_comparison_csv<W: Write>(
    mut w: W,
    rows: &[(String, String, ComparisonResult)],
) -> std::io::Result<()> {
    writeln!(w, "variant_a,variant_b,n_discordant,wins_a,p_value")?;
    for (a, b, c) in rows {
        writeln!(w, "{a},{b},{},{},{}", c.n_discordant, c.wins_a, c.p_value)?;
    }
    Ok(())
}

/// Classification map as binary PGM: gray level `class · ⌊255 / K⌋`,
/// background 0, training pixels shown with their true class.
pub fn export_map(
    test_pixels: &[PixelIndex],
    predictions: &[u32],
    labeled: &LabeledSet,
    gt: &GroundTruth,
    path: impl AsRef<Path>,
) -> Result<()> {
    if test_pixels.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} test pixels",
            predictions.len(),
            test_pixels.len()
        )));
    }
    let gray = render_map(test_pixels, predictions, labeled, gt);
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", gt.width(), gt.height())
        .and_then(|_| w.write_all(&gray))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn render_map(
    test_pixels: &[PixelIndex],
    predictions: &[u32],
    labeled: &LabeledSet,
    gt: &GroundTruth,
) -> Vec<u8> {
    let k = gt.num_classes().max(1);
    let step = (255 / k) as u32;
    let mut gray = vec![0u8; gt.height() * gt.width()];
    let mut put = |p: PixelIndex, class: u32| {
        gray[p.row * gt.width() + p.col] = (class * step).min(255) as u8;
    };
    for (&p, &c) in test_pixels.iter().zip(predictions) {
        put(p, c);
    }
    for e in labeled.sampled_only().iter() {
        put(e.pixel, gt.label(e.pixel));
    }
    gray
}

/// Parses a binary PGM, returning `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Format("not a binary PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    if fields[0] != "P5" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos + 1..).ok_or_else(bad)?;
    if data.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, data.to_vec()))
}
