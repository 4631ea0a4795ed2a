//! The experiment document: one JSON file naming the data and every tunable.

use std::fs;
use std::path::{Path, PathBuf};

use cnn_rsl::eval::{DEFAULT_SIGNIFICANCE, DEFAULT_VAL_FRACTION};
use cnn_rsl::{AugmentOptions, HyperParams, LearningSetting, SamplingSpec, SearchSpace, Variant};
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cube: PathBuf,
    pub gt: PathBuf,
    pub sampling: SamplingSpec,
    pub augment: AugmentOptions,
    pub hyper: HyperParams,
    pub search: Option<SearchSpace>,
    pub runs: usize,
    pub output_dir: PathBuf,
    /// Base seed; run `r` uses `seed + r`.
    pub seed: u64,
    /// Subset of `RSL`, or `CNN` for the plain network.
    pub variant: String,
    pub val_fraction: f64,
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cube: PathBuf::new(),
            gt: PathBuf::new(),
            sampling: SamplingSpec::default(),
            augment: AugmentOptions::default(),
            hyper: HyperParams::default(),
            search: None,
            runs: 10,
            output_dir: PathBuf::from("out"),
            seed: 0,
            variant: "RSL".into(),
            val_fraction: DEFAULT_VAL_FRACTION,
            threshold: DEFAULT_SIGNIFICANCE,
        }
    }
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub variant: Option<String>,
    pub setting: Option<LearningSetting>,
}

impl ExperimentConfig {
    /// Reads the document; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| {
            Failure::new(
                Stage::Config,
                format!("cannot read config {}: {e}", path.display()),
            )
        })?;
        let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            Failure::new(
                Stage::Config,
                format!("invalid config {}: {e}", path.display()),
            )
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.cube, &mut config.gt] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.output {
            self.output_dir = out.clone();
        }
        if let Some(v) = &o.variant {
            self.variant = v.clone();
        }
        if let Some(s) = o.setting {
            self.augment.setting = s;
        }
    }

    pub fn parsed_variant(&self) -> Result<Variant, Failure> {
        self.variant
            .parse()
            .map_err(|e| Failure::new(Stage::Config, format!("{e}")))
    }

    /// Checks everything that does not need the data loaded: file presence,
    /// parameter ranges, and the variant against the learning setting.
    pub fn validate(&self) -> Result<(), Failure> {
        let fail = |m: String| Err(Failure::new(Stage::Config, m));
        for (name, p) in [("cube", &self.cube), ("gt", &self.gt)] {
            if p.as_os_str().is_empty() {
                return fail(format!("config names no {name} file"));
            }
            if !p.is_file() {
                return fail(format!("{name} file not found: {}", p.display()));
            }
        }
        let variant = self.parsed_variant()?;
        if variant.label_aug && self.augment.setting == LearningSetting::NonOverlapping {
            return fail(format!(
                "variant {variant} uses label augmentation, which the non-overlapping setting forbids"
            ));
        }
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return fail(format!("threshold {} outside (0, 1]", self.threshold));
        }
        let config_err = |e: cnn_rsl::Error| Failure::new(Stage::Config, e.to_string());
        self.sampling.validate().map_err(config_err)?;
        let (opts, hyper) = variant.apply(&self.augment, &self.hyper);
        opts.validate().map_err(config_err)?;
        // The kernel-size bound needs the band count; checked after loading.
        hyper.validate(usize::MAX).map_err(config_err)?;
        if let Some(space) = &self.search {
            space.validate().map_err(config_err)?;
        }
        Ok(())
    }
}
