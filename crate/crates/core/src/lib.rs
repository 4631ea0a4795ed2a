//! Spectral-spatial classification of hyperspectral pixels with a shallow
//! 1D convolutional network.
//!
//! The network sees one pixel spectrum at a time. Spatial context enters only
//! through the training data: every labeled pixel contributes its original,
//! noise-perturbed and (optionally) spatially smoothed spectrum, and labels can
//! be propagated to neighboring pixels with a bias toward small classes. A
//! penalty on differences between adjacent convolution weights ties
//! neighboring wavelengths together.
//!
//! Modules follow the processing order:
//!
//! * [`data`]: cubes, ground truth, labeled pixel sets, NPY I/O
//! * [`sampling`]: per-class training samples and validation splits
//! * [`augment`]: noise, smoothing, label propagation, training-set assembly
//! * [`net`]: the network, its loss and gradients, SGD training
//! * [`tune`]: random search with cross-validation
//! * [`eval`]: accuracy, the sign test, repeated experiments, maps

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod net;
pub mod npy;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod tune;

pub use augment::{AugmentOptions, LearningSetting, RescaleParams, TestSpectrum, TrainingSet};
pub use data::{
    class_counts, foreground_indices, load_cube, load_ground_truth, write_cube, write_ground_truth,
    CubeKind, Dataset, GroundTruth, LabeledEntry, LabeledSet, PixelIndex, Provenance, SpectralCube,
};
pub use error::{Error, Result};
pub use eval::{ComparisonResult, Experiment, ExperimentSpec, RunResult, Summary, Variant};
pub use model::Model;
pub use net::{HyperParams, NetworkParams, TrainReport};
pub use sampling::{SamplingMode, SamplingSpec};
pub use tune::{Config, SearchSpace, TuneOutcome};
