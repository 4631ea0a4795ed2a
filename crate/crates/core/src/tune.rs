//! Random grid search with stratified k-fold cross-validation.

use std::io::Write;

use log::{info, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, gather_spectra, AugmentOptions, TrainingSet};
use crate::data::{class_counts, Dataset, LabeledSet, PixelIndex};
use crate::error::{Error, Result};
use crate::eval::{accuracy, DEFAULT_VAL_FRACTION};
use crate::net::{self, HyperParams};
use crate::rng::{self, Stream};
use crate::sampling::split_validation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub num_kernels_choices: Vec<usize>,
    /// Inclusive bounds.
    pub kernel_size_range: (usize, usize),
    pub stride_range: (usize, usize),
    /// Inclusive integer exponent bounds; the value is `10^n`.
    pub lambda1_exponent_range: (i32, i32),
    pub lambda2_exponent_range: (i32, i32),
    pub eta_exponent_range: (i32, i32),
    pub sigma_choices: Vec<f64>,
    pub num_draws: usize,
    pub folds: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            num_kernels_choices: vec![4, 8, 16, 32],
            kernel_size_range: (2, 91),
            stride_range: (1, 4),
            lambda1_exponent_range: (-4, 4),
            lambda2_exponent_range: (-4, 4),
            eta_exponent_range: (-4, -1),
            sigma_choices: vec![1.0, 1.67, 2.33, 3.0, 3.67, 4.33, 5.0],
            num_draws: 50,
            folds: 10,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(format!("search space: {m}")));
        if self.num_kernels_choices.is_empty() || self.num_kernels_choices.contains(&0) {
            return fail("num_kernels_choices must be non-empty and positive");
        }
        if self.sigma_choices.is_empty() || self.sigma_choices.iter().any(|s| !(*s > 0.0)) {
            return fail("sigma_choices must be non-empty and positive");
        }
        let (klo, khi) = self.kernel_size_range;
        let (slo, shi) = self.stride_range;
        if klo == 0 || klo > khi {
            return fail("kernel_size_range is empty");
        }
        if slo == 0 || slo > shi {
            return fail("stride_range is empty");
        }
        for (name, (lo, hi)) in [
            ("lambda1_exponent_range", self.lambda1_exponent_range),
            ("lambda2_exponent_range", self.lambda2_exponent_range),
            ("eta_exponent_range", self.eta_exponent_range),
        ] {
            if lo > hi {
                return Err(Error::Validation(format!("search space: {name} is empty")));
            }
        }
        if self.num_draws == 0 {
            return fail("num_draws must be >= 1");
        }
        if self.folds < 2 {
            return fail("folds must be >= 2");
        }
        Ok(())
    }

    /// Whether the configuration could have been drawn from this space
    /// (kernel size may have been clamped to the band count).
    pub fn contains(&self, config: &Config) -> bool {
        let h = &config.hyper;
        let exp_in = |v: f64, (lo, hi): (i32, i32)| {
            let n = v.log10().round();
            (v / 10f64.powi(n as i32) - 1.0).abs() < 1e-9 && n >= lo as f64 && n <= hi as f64
        };
        self.num_kernels_choices.contains(&h.num_kernels)
            && h.kernel_size <= self.kernel_size_range.1
            && h.kernel_size >= 1
            && (self.stride_range.0..=self.stride_range.1).contains(&h.stride)
            && exp_in(h.lambda1, self.lambda1_exponent_range)
            && exp_in(h.lambda2, self.lambda2_exponent_range)
            && exp_in(h.eta, self.eta_exponent_range)
            && self
                .sigma_choices
                .iter()
                .any(|s| (s - config.sigma).abs() < 1e-12)
    }
}

/// One point of the search: network hyperparameters plus smoothing width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub hyper: HyperParams,
    pub sigma: f64,
}

/// Draws `num_draws` configurations, each axis uniform and independent.
/// Fields not searched (momentum, batch size, epochs, patience, seed) come
/// from `base`.
pub fn random_configs(space: &SearchSpace, base: &HyperParams, seed: u64) -> Result<Vec<Config>> {
    space.validate()?;
    let mut rng = rng::stream(seed, Stream::Search);
    Ok((0..space.num_draws)
        .map(|_| {
            let num_kernels = *space.num_kernels_choices.choose(&mut rng).unwrap();
            let kernel_size =
                rng.random_range(space.kernel_size_range.0..=space.kernel_size_range.1);
            let stride = rng.random_range(space.stride_range.0..=space.stride_range.1);
            let mut pow = |(lo, hi): (i32, i32)| 10f64.powi(rng.random_range(lo..=hi));
            let lambda1 = pow(space.lambda1_exponent_range);
            let lambda2 = pow(space.lambda2_exponent_range);
            let eta = pow(space.eta_exponent_range);
            let sigma = *space.sigma_choices.choose(&mut rng).unwrap();
            Config {
                hyper: HyperParams {
                    num_kernels,
                    kernel_size,
                    stride,
                    lambda1,
                    lambda2,
                    eta,
                    ..base.clone()
                },
                sigma,
            }
        })
        .collect())
}

/// Stratified assignment of each entry to one of `folds` folds.
pub fn stratified_folds(
    labeled: &LabeledSet,
    num_classes: usize,
    folds: usize,
    seed: u64,
) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, e) in labeled.iter().enumerate() {
        by_class[e.label as usize - 1].push(i);
    }
    let mut rng = rng::stream(seed, Stream::Folds);
    let mut assignment = vec![0; labeled.len()];
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = j % folds;
        }
    }
    assignment
}

/// Fold count actually used: the requested count, reduced to the smallest
/// class size, but never below 2.
pub fn effective_folds(labeled: &LabeledSet, num_classes: usize, folds: usize) -> usize {
    let smallest = class_counts(labeled, num_classes)
        .into_iter()
        .filter(|&c| c > 0)
        .min()
        .unwrap_or(0);
    folds.min(smallest).max(2)
}

/// Mean held-out accuracy over stratified folds of `labeled`.
pub fn cross_validate(
    dataset: &Dataset,
    labeled: &LabeledSet,
    config: &Config,
    opts: &AugmentOptions,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if folds < 2 {
        return Err(Error::Validation(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    let k = dataset.num_classes;
    let m = dataset.cube.bands();
    let folds = effective_folds(labeled, k, folds);
    let assignment = stratified_folds(labeled, k, folds, seed);

    let mut opts = AugmentOptions {
        sigma: config.sigma,
        ..opts.clone()
    };
    opts.validate()?;
    let mut hyper = config.hyper.clone();
    hyper.kernel_size = hyper.kernel_size.min(m);
    hyper.validate(m)?;
    let test_image = augment::test_cube(dataset, &opts)?;

    let mut scores = Vec::new();
    for fold in 0..folds {
        let (held, rest): (Vec<_>, Vec<_>) = labeled
            .iter()
            .zip(&assignment)
            .partition(|(_, &f)| f == fold);
        let rest = LabeledSet::new(rest.into_iter().map(|(e, _)| *e).collect());
        let held: Vec<_> = held.into_iter().map(|(e, _)| *e).collect();
        if held.is_empty() {
            continue;
        }
        let counts = class_counts(&rest, k);
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            warn!(
                "fold {fold}: class {} has no training entries; skipping",
                empty + 1
            );
            continue;
        }

        let fold_seed = rng::derive_seed(seed, 1000 + fold as u64);
        opts.seed = fold_seed;
        hyper.seed = fold_seed;
        let (fit, val) = split_validation(
            &rest,
            DEFAULT_VAL_FRACTION,
            rng::derive_seed(fold_seed, Stream::Validation as u64),
        )?;
        let (fit, val) = if val.is_empty() {
            (fit.clone(), fit)
        } else {
            (fit, val)
        };
        let assembly = augment::assemble(dataset, &fit, &opts)?;
        let rescale = assembly.training.rescale;

        let val_pixels: Vec<PixelIndex> = val.pixels().collect();
        let valset = TrainingSet::new(
            gather_spectra(&test_image, &val_pixels, &rescale),
            val.iter().map(|e| e.label).collect(),
            m,
            k,
            rescale,
        )?;
        let (params, _) = net::train(&assembly.training, &valset, &hyper)?;

        let held_pixels: Vec<PixelIndex> = held.iter().map(|e| e.pixel).collect();
        let truth: Vec<u32> = held.iter().map(|e| e.label).collect();
        let (pred, _) = net::predict(
            &params,
            &gather_spectra(&test_image, &held_pixels, &rescale),
        );
        scores.push(accuracy(&pred, &truth)?);
    }
    if scores.is_empty() {
        return Err(Error::Tuning("every fold was skipped".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    /// Position of the configuration in the draw order.
    pub draw: usize,
    pub mean_acc: f64,
    pub config: Config,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: Config,
    /// Sorted by decreasing mean accuracy, ties in draw order.
    pub leaderboard: Vec<LeaderboardEntry>,
    pub seed: u64,
}

/// Cross-validates every drawn configuration and keeps the best.
pub fn rgs_cv(
    dataset: &Dataset,
    labeled: &LabeledSet,
    space: &SearchSpace,
    base: &HyperParams,
    opts: &AugmentOptions,
    seed: u64,
) -> Result<TuneOutcome> {
    let configs = random_configs(space, base, seed)?;
    evaluate_configs(dataset, labeled, configs, space.folds, opts, seed)
}

/// Ranks an explicit list of configurations.
pub fn evaluate_configs(
    dataset: &Dataset,
    labeled: &LabeledSet,
    configs: Vec<Config>,
    folds: usize,
    opts: &AugmentOptions,
    seed: u64,
) -> Result<TuneOutcome> {
    let scored: Vec<(usize, Config, Result<f64>)> = configs
        .into_par_iter()
        .enumerate()
        .map(|(draw, config)| {
            let score = cross_validate(dataset, labeled, &config, opts, folds, seed);
            (draw, config, score)
        })
        .collect();

    let mut leaderboard = Vec::new();
    let mut failures = Vec::new();
    for (draw, config, score) in scored {
        match score {
            Ok(mean_acc) => {
                info!("draw {draw}: mean accuracy {mean_acc:.4}");
                leaderboard.push(LeaderboardEntry {
                    rank: 0,
                    draw,
                    mean_acc,
                    config,
                });
            }
            Err(e @ (Error::Tuning(_) | Error::Divergence { .. })) => {
                warn!("draw {draw} skipped: {e}");
                failures.push(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if leaderboard.is_empty() {
        return Err(Error::Tuning(format!(
            "no configuration could be evaluated ({})",
            failures.join("; ")
        )));
    }
    leaderboard.sort_by(|a, b| b.mean_acc.total_cmp(&a.mean_acc).then(a.draw.cmp(&b.draw)));
    for (i, e) in leaderboard.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(TuneOutcome {
        best: leaderboard[0].config.clone(),
        leaderboard,
        seed,
    })
}

pub fn write_leaderboard_csv<W: Write>(mut w: W, outcome: &TuneOutcome) -> std::io::Result<()> {
    writeln!(
        w,
        "rank,mean_acc,num_kernels,kernel_size,stride,lambda1,lambda2,eta,sigma,seed"
    )?;
    for e in &outcome.leaderboard {
        let h = &e.config.hyper;
        writeln!(
            w,
            "{},{:.6},{},{},{},{},{},{},{},{}",
            e.rank,
            e.mean_acc,
            h.num_kernels,
            h.kernel_size,
            h.stride,
            h.lambda1,
            h.lambda2,
            h.eta,
            e.config.sigma,
            outcome.seed
        )?;
    }
    Ok(())
}
