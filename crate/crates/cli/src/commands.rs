//! The subcommands. Each returns `Ok` or a [`Failure`] naming the stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cnn_rsl::augment::gaussian_smooth;
use cnn_rsl::eval::{self, binomial_compare, ComparisonResult, ExperimentSpec};
use cnn_rsl::tune::{self, write_leaderboard_csv};
use cnn_rsl::{load_cube, load_ground_truth, write_cube, Dataset, Experiment, SamplingSpec};
use log::info;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::failure::{AtStage, Failure, Stage};

pub const RESULTS_FILE: &str = "results.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const MAP_FILE: &str = "map.pgm";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEADERBOARD_FILE: &str = "leaderboard.csv";
pub const BEST_CONFIG_FILE: &str = "best_config.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const LABELED_FILE: &str = "labeled.csv";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, Failure> {
    let dataset = Dataset::load(&config.cube, &config.gt).at(Stage::Load)?;
    let (_, hyper) = config
        .parsed_variant()?
        .apply(&config.augment, &config.hyper);
    hyper.validate(dataset.cube.bands()).at(Stage::Config)?;
    Ok(dataset)
}

fn experiment_spec(config: &ExperimentConfig) -> Result<ExperimentSpec, Failure> {
    Ok(ExperimentSpec {
        sampling: config.sampling.clone(),
        variant: config.parsed_variant()?,
        hyper: config.hyper.clone(),
        augment: config.augment.clone(),
        val_fraction: config.val_fraction,
        runs: config.runs,
        base_seed: config.seed,
    })
}

/// Sample, augment, train and score `runs` times, then write the artifacts.
pub fn pipeline(config: &ExperimentConfig) -> Result<Experiment, Failure> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let spec = experiment_spec(config)?;
    info!(
        "{} runs of {} on {}",
        spec.runs,
        spec.variant,
        config.cube.display()
    );
    let experiment = eval::run_experiment(&dataset, &spec).at(Stage::Train)?;

    let dir = &config.output_dir;
    create_dir(dir)?;
    let mut artifacts = BTreeMap::new();
    let mut emit = |name: &str, bytes: Vec<u8>| -> Result<(), Failure> {
        write_file(&dir.join(name), &bytes)?;
        artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    };

    let mut buf = Vec::new();
    eval::write_results_csv(&mut buf, &experiment).map_err(|e| Failure::io(dir, e))?;
    emit(RESULTS_FILE, buf)?;
    let mut buf = Vec::new();
    eval::write_predictions_csv(&mut buf, &experiment).map_err(|e| Failure::io(dir, e))?;
    emit(PREDICTIONS_FILE, buf)?;
    let first = &experiment.runs[0];
    let mut buf = Vec::new();
    first
        .model
        .write_to(&mut buf)
        .map_err(|e| Failure::io(dir, e))?;
    emit(MODEL_FILE, buf)?;
    let gray = eval::render_map(
        &first.test_pixels,
        &first.predictions,
        &first.labeled,
        &dataset.gt,
    );
    let mut buf = format!("P5\n{} {}\n255\n", dataset.gt.width(), dataset.gt.height()).into_bytes();
    buf.extend_from_slice(&gray);
    emit(MAP_FILE, buf)?;

    let config_json = serde_json::to_value(config).expect("config serializes");
    let config_bytes = serde_json::to_vec(&config_json).expect("config serializes");
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": "pipeline",
        "config": config_json,
        "config_sha256": sha256_hex(&config_bytes),
        "variant": spec.variant.to_string(),
        "setting": config.augment.setting.as_str(),
        "base_seed": config.seed,
        "run_seeds": experiment.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
        "model_run": first.run,
        "artifacts": artifacts,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &bytes)?;

    let s = experiment.summary;
    println!(
        "{} ({}): mean accuracy {:.4} +/- {:.4} over {} runs",
        spec.variant,
        config.augment.setting.as_str(),
        s.mean,
        s.std,
        s.n_runs
    );
    Ok(experiment)
}

/// Random search with cross-validation on one sampled labeled set.
pub fn tune(config: &ExperimentConfig) -> Result<tune::TuneOutcome, Failure> {
    config.validate()?;
    let space = config
        .search
        .as_ref()
        .ok_or_else(|| Failure::new(Stage::Config, "config has no search space"))?;
    let dataset = Dataset::load(&config.cube, &config.gt).at(Stage::Load)?;
    let labeled = SamplingSpec {
        seed: config.seed,
        ..config.sampling.clone()
    }
    .sample(&dataset.gt)
    .at(Stage::Sample)?;
    let variant = config.parsed_variant()?;
    let (mut opts, base) = variant.apply(&config.augment, &config.hyper);
    opts.seed = config.seed;
    let mut configs = tune::random_configs(space, &base, config.seed).at(Stage::Config)?;
    if !variant.regularize {
        for c in &mut configs {
            c.hyper.lambda2 = 0.0;
        }
    }
    let outcome =
        tune::evaluate_configs(&dataset, &labeled, configs, space.folds, &opts, config.seed)
            .at(Stage::Tune)?;

    let dir = &config.output_dir;
    create_dir(dir)?;
    let mut buf = Vec::new();
    write_leaderboard_csv(&mut buf, &outcome).map_err(|e| Failure::io(dir, e))?;
    write_file(&dir.join(LEADERBOARD_FILE), &buf)?;

    let mut best = config.clone();
    best.hyper = outcome.best.hyper.clone();
    best.augment.sigma = outcome.best.sigma;
    best.cube = absolute(&config.cube);
    best.gt = absolute(&config.gt);
    let mut bytes = serde_json::to_vec_pretty(&best).expect("config serializes");
    bytes.push(b'\n');
    write_file(&dir.join(BEST_CONFIG_FILE), &bytes)?;

    let top = &outcome.leaderboard[0];
    println!(
        "best of {} configurations: mean accuracy {:.4} (draw {}, sigma {})",
        outcome.leaderboard.len(),
        top.mean_acc,
        top.draw,
        top.config.sigma
    );
    Ok(outcome)
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Predictions of one run: pixel `(row, col)` to `(truth, pred)`.
type RunPredictions = BTreeMap<(usize, usize), (u32, u32)>;

pub struct PredictionFile {
    pub variant: String,
    pub runs: BTreeMap<usize, RunPredictions>,
}

pub fn read_predictions(path: &Path) -> Result<PredictionFile, Failure> {
    let fail = |m: String| Failure::new(Stage::Compare, format!("{}: {m}", path.display()));
    let file = fs::File::open(path).map_err(|e| fail(e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose().map_err(|e| fail(e.to_string()))?;
    if header.as_deref() != Some("variant,setting,run,row,col,truth,pred") {
        return Err(fail("not a predictions file".into()));
    }
    let mut variant = None;
    let mut runs: BTreeMap<usize, RunPredictions> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| fail(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let bad = || fail(format!("malformed line {}", n + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad());
        }
        let num = |i: usize| fields[i].parse::<usize>().map_err(|_| bad());
        let (run, row, col) = (num(2)?, num(3)?, num(4)?);
        let (truth, pred) = (num(5)? as u32, num(6)? as u32);
        variant.get_or_insert_with(|| fields[0].to_string());
        if runs
            .entry(run)
            .or_default()
            .insert((row, col), (truth, pred))
            .is_some()
        {
            return Err(fail(format!("pixel ({row}, {col}) repeated in run {run}")));
        }
    }
    Ok(PredictionFile {
        variant: variant.ok_or_else(|| fail("no predictions".into()))?,
        runs,
    })
}

/// Sign test of `a` against `b` on every run the two files share.
pub fn compare(
    a: &Path,
    b: &Path,
    threshold: f64,
    output: &Path,
) -> Result<Vec<(usize, ComparisonResult)>, Failure> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Failure::new(
            Stage::Config,
            format!("threshold {threshold} outside (0, 1]"),
        ));
    }
    let fa = read_predictions(a)?;
    let fb = read_predictions(b)?;
    let runs_a: BTreeSet<_> = fa.runs.keys().collect();
    let runs_b: BTreeSet<_> = fb.runs.keys().collect();
    if runs_a != runs_b {
        return Err(Failure::new(
            Stage::Compare,
            format!("runs differ: {runs_a:?} vs {runs_b:?}"),
        ));
    }

    let mut results = Vec::new();
    for (&run, pa) in &fa.runs {
        let pb = &fb.runs[&run];
        if !pa.keys().eq(pb.keys()) {
            return Err(Failure::new(
                Stage::Compare,
                format!("run {run}: the two files cover different test pixels"),
            ));
        }
        let mut truth = Vec::with_capacity(pa.len());
        let (mut preds_a, mut preds_b) = (Vec::new(), Vec::new());
        for (pixel, (&(ta, ya), &(tb, yb))) in pa.keys().zip(pa.values().zip(pb.values())) {
            if ta != tb {
                return Err(Failure::new(
                    Stage::Compare,
                    format!("run {run}: truth differs at pixel {pixel:?}"),
                ));
            }
            truth.push(ta);
            preds_a.push(ya);
            preds_b.push(yb);
        }
        results.push((
            run,
            binomial_compare(&preds_a, &preds_b, &truth).at(Stage::Compare)?,
        ));
    }

    create_dir(output)?;
    let rows: Vec<_> = results
        .iter()
        .map(|(_, c)| (fa.variant.clone(), fb.variant.clone(), *c))
        .collect();
    let mut buf = Vec::new();
    eval::write_comparison_csv(&mut buf, &rows).map_err(|e| Failure::io(output, e))?;
    write_file(&output.join(COMPARISON_FILE), &buf)?;

    let mut significant = 0;
    for (run, c) in &results {
        let verdict = if c.significant(threshold) {
            significant += 1;
            "significant"
        } else {
            "not significant"
        };
        println!(
            "run {run}: {} vs {}: n_discordant={} wins_a={} p={} {verdict} at {threshold}",
            fa.variant, fb.variant, c.n_discordant, c.wins_a, c.p_value
        );
    }
    println!(
        "{} of {} runs significant at {threshold}",
        significant,
        results.len()
    );
    Ok(results)
}

/// Smooths a whole cube on the current thread pool; returns the filter time in seconds.
pub fn smooth(input: &Path, sigma: f64, output: Option<&Path>) -> Result<f64, Failure> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Failure::new(
            Stage::Config,
            format!("sigma {sigma} must be > 0"),
        ));
    }
    let cube = load_cube(input).at(Stage::Load)?;
    let start = Instant::now();
    let smoothed = gaussian_smooth(&cube, sigma, None).at(Stage::Smooth)?;
    let seconds = start.elapsed().as_secs_f64();
    let pixels = cube.num_pixels();
    println!(
        "elapsed_s={seconds:.6} per_pixel_us={:.6} pixels={pixels} threads={} sigma={sigma}",
        seconds * 1e6 / pixels as f64,
        rayon::current_num_threads()
    );
    if let Some(path) = output {
        write_cube(path, &smoothed).at(Stage::Write)?;
    }
    Ok(seconds)
}

/// Draws the labeled set of run 0 and writes it as CSV.
pub fn sample(config: &ExperimentConfig) -> Result<PathBuf, Failure> {
    config
        .sampling
        .validate()
        .map_err(|e| Failure::new(Stage::Config, e.to_string()))?;
    if !config.gt.is_file() {
        return Err(Failure::new(
            Stage::Config,
            format!("gt file not found: {}", config.gt.display()),
        ));
    }
    let gt = load_ground_truth(&config.gt).at(Stage::Load)?;
    let labeled = SamplingSpec {
        seed: config.seed,
        ..config.sampling.clone()
    }
    .sample(&gt)
    .at(Stage::Sample)?;
    create_dir(&config.output_dir)?;
    let path = config.output_dir.join(LABELED_FILE);
    let mut buf = Vec::new();
    labeled
        .write_csv(&mut buf)
        .map_err(|e| Failure::io(&path, e))?;
    write_file(&path, &buf)?;
    println!(
        "{} labeled pixels written to {}",
        labeled.len(),
        path.display()
    );
    Ok(path)
}
