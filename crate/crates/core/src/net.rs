//! Single-hidden-layer 1D CNN: valid-mode convolution with ReLU, a dense
//! softmax output, L2 and adjacent-weight (locality) penalties, and
//! minibatch SGD with momentum and early stopping.

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::TrainingSet;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub num_kernels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub lambda1: f64,
    /// Weight of the adjacent-weight penalty; 0 disables it.
    pub lambda2: f64,
    pub eta: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            num_kernels: 16,
            kernel_size: 5,
            stride: 1,
            lambda1: 1e-3,
            lambda2: 0.1,
            eta: 1e-3,
            momentum: 0.7,
            batch_size: 32,
            max_epochs: 1000,
            patience: 100,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self, bands: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.num_kernels == 0 {
            return fail("num_kernels must be >= 1".into());
        }
        if self.kernel_size == 0 || self.kernel_size > bands {
            return fail(format!(
                "kernel_size {} must be in 1..={bands}",
                self.kernel_size
            ));
        }
        if self.stride == 0 {
            return fail("stride must be >= 1".into());
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("eta", self.eta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        Ok(())
    }

    /// Number of convolution output positions per kernel.
    pub fn positions(&self, bands: usize) -> usize {
        (bands - self.kernel_size) / self.stride + 1
    }
}

/// Weights and biases. Also used to hold gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub bands: usize,
    pub classes: usize,
    pub num_kernels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    /// `num_kernels × kernel_size`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `classes × (num_kernels · positions)`, features flattened kernel-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(
        bands: usize,
        classes: usize,
        num_kernels: usize,
        kernel_size: usize,
        stride: usize,
    ) -> Self {
        let positions = (bands - kernel_size) / stride + 1;
        Self {
            bands,
            classes,
            num_kernels,
            kernel_size,
            stride,
            w1: vec![0.0; num_kernels * kernel_size],
            b1: vec![0.0; num_kernels],
            w2: vec![0.0; classes * num_kernels * positions],
            b2: vec![0.0; classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.bands,
            self.classes,
            self.num_kernels,
            self.kernel_size,
            self.stride,
        )
    }

    pub fn positions(&self) -> usize {
        (self.bands - self.kernel_size) / self.stride + 1
    }

    pub fn num_features(&self) -> usize {
        self.num_kernels * self.positions()
    }

    pub fn kernel(&self, f: usize) -> &[f64] {
        &self.w1[f * self.kernel_size..(f + 1) * self.kernel_size]
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.bands == other.bands
            && self.classes == other.classes
            && self.num_kernels == other.num_kernels
            && self.kernel_size == other.kernel_size
            && self.stride == other.stride
    }
}

/// Uniform Glorot initialization; biases start at zero.
///
/// The convolution uses `fan_in = N` and `fan_out = N · num_kernels`, the
/// dense layer `fan_in = num_kernels · F` and `fan_out = K`.
pub fn glorot_init(
    hyper: &HyperParams,
    bands: usize,
    classes: usize,
    seed: u64,
) -> Result<NetworkParams> {
    hyper.validate(bands)?;
    if classes == 0 {
        return Err(Error::Validation("need at least one class".into()));
    }
    let mut params = NetworkParams::zeros(
        bands,
        classes,
        hyper.num_kernels,
        hyper.kernel_size,
        hyper.stride,
    );
    let mut rng = rng::rng(seed);
    let conv_bound = glorot_bound(hyper.kernel_size, hyper.kernel_size * hyper.num_kernels);
    let dense_bound = glorot_bound(params.num_features(), classes);
    for w in params.w1.iter_mut() {
        *w = rng.random_range(-conv_bound..=conv_bound);
    }
    for w in params.w2.iter_mut() {
        *w = rng.random_range(-dense_bound..=dense_bound);
    }
    Ok(params)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    /// Convolution outputs before ReLU, kernel-major.
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Activations {
    fn for_params(params: &NetworkParams) -> Self {
        let n = params.num_features();
        Self {
            pre: vec![0.0; n],
            hidden: vec![0.0; n],
            logits: vec![0.0; params.classes],
            probs: vec![0.0; params.classes],
        }
    }
}

pub fn forward(params: &NetworkParams, spectrum: &[f64]) -> Activations {
    let mut act = Activations::for_params(params);
    forward_into(params, spectrum, &mut act);
    act
}

fn forward_into(params: &NetworkParams, x: &[f64], act: &mut Activations) {
    debug_assert_eq!(x.len(), params.bands);
    let positions = params.positions();
    let (n, s) = (params.kernel_size, params.stride);
    for f in 0..params.num_kernels {
        let kernel = params.kernel(f);
        let bias = params.b1[f];
        for t in 0..positions {
            let window = &x[t * s..t * s + n];
            let z = bias + kernel.iter().zip(window).map(|(w, v)| w * v).sum::<f64>();
            act.pre[f * positions + t] = z;
            act.hidden[f * positions + t] = z.max(0.0);
        }
    }
    let features = params.num_features();
    for k in 0..params.classes {
        let row = &params.w2[k * features..(k + 1) * features];
        act.logits[k] = params.b2[k] + row.iter().zip(&act.hidden).map(|(w, h)| w * h).sum::<f64>();
    }
    softmax_into(&act.logits, &mut act.probs);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Sum over kernels of squared differences between adjacent weights.
pub fn shift_penalty(params: &NetworkParams) -> f64 {
    (0..params.num_kernels)
        .map(|f| kernel_shift_penalty(params.kernel(f)))
        .sum()
}

pub fn kernel_shift_penalty(kernel: &[f64]) -> f64 {
    kernel.windows(2).map(|p| (p[0] - p[1]).powi(2)).sum()
}

fn sum_squares(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn regularizer(params: &NetworkParams, lambda1: f64, lambda2: f64) -> f64 {
    lambda1 * (sum_squares(&params.w1) + sum_squares(&params.w2)) + lambda2 * shift_penalty(params)
}

fn cross_entropy(probs: &[f64], label: u32) -> f64 {
    -probs[label as usize - 1].max(LOG_FLOOR).ln()
}

/// Mean cross-entropy over `batch` plus both penalties.
pub fn loss(params: &NetworkParams, batch: &TrainingSet, lambda1: f64, lambda2: f64) -> f64 {
    let rows: Vec<usize> = (0..batch.len()).collect();
    data_loss(params, batch, &rows) + regularizer(params, lambda1, lambda2)
}

fn data_loss(params: &NetworkParams, set: &TrainingSet, rows: &[usize]) -> f64 {
    let mut act = Activations::for_params(params);
    let total: f64 = rows
        .iter()
        .map(|&i| {
            forward_into(params, set.row(i), &mut act);
            cross_entropy(&act.probs, set.labels()[i])
        })
        .sum();
    total / rows.len() as f64
}

/// Exact gradient of [`loss`] with respect to every parameter.
pub fn backward(
    params: &NetworkParams,
    batch: &TrainingSet,
    lambda1: f64,
    lambda2: f64,
) -> NetworkParams {
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mut grad = params.zeros_like();
    let mut scratch = Scratch::new(params);
    accumulate_gradient(
        params,
        batch,
        &rows,
        lambda1,
        lambda2,
        &mut grad,
        &mut scratch,
    );
    grad
}

struct Scratch {
    act: Activations,
    dpre: Vec<f64>,
    dlogits: Vec<f64>,
}

impl Scratch {
    fn new(params: &NetworkParams) -> Self {
        Self {
            act: Activations::for_params(params),
            dpre: vec![0.0; params.num_features()],
            dlogits: vec![0.0; params.classes],
        }
    }
}

/// Overwrites `grad` with the minibatch gradient and returns the minibatch loss.
fn accumulate_gradient(
    params: &NetworkParams,
    set: &TrainingSet,
    rows: &[usize],
    lambda1: f64,
    lambda2: f64,
    grad: &mut NetworkParams,
    scratch: &mut Scratch,
) -> f64 {
    for t in grad.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    let scale = 1.0 / rows.len() as f64;
    let features = params.num_features();
    let positions = params.positions();
    let (n, s) = (params.kernel_size, params.stride);
    let mut data_loss = 0.0;

    for &i in rows {
        let x = set.row(i);
        let label = set.labels()[i] as usize - 1;
        forward_into(params, x, &mut scratch.act);
        data_loss += cross_entropy(&scratch.act.probs, label as u32 + 1);

        for (k, d) in scratch.dlogits.iter_mut().enumerate() {
            let target = if k == label { 1.0 } else { 0.0 };
            *d = (scratch.act.probs[k] - target) * scale;
        }

        scratch.dpre.iter_mut().for_each(|v| *v = 0.0);
        for (k, &dz) in scratch.dlogits.iter().enumerate() {
            grad.b2[k] += dz;
            let w_row = &params.w2[k * features..(k + 1) * features];
            let g_row = &mut grad.w2[k * features..(k + 1) * features];
            for ((g, &h), (dh, &w)) in g_row
                .iter_mut()
                .zip(&scratch.act.hidden)
                .zip(scratch.dpre.iter_mut().zip(w_row))
            {
                *g += dz * h;
                *dh += dz * w;
            }
        }
        // ReLU gate; subgradient at 0 is 0
        for (dh, &z) in scratch.dpre.iter_mut().zip(&scratch.act.pre) {
            if z <= 0.0 {
                *dh = 0.0;
            }
        }
        for f in 0..params.num_kernels {
            let dpre = &scratch.dpre[f * positions..(f + 1) * positions];
            let gk = &mut grad.w1[f * n..(f + 1) * n];
            for (t, &d) in dpre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.b1[f] += d;
                for (g, &v) in gk.iter_mut().zip(&x[t * s..t * s + n]) {
                    *g += d * v;
                }
            }
        }
    }

    add_regularizer_gradient(params, lambda1, lambda2, grad);
    data_loss * scale + regularizer(params, lambda1, lambda2)
}

fn add_regularizer_gradient(
    params: &NetworkParams,
    lambda1: f64,
    lambda2: f64,
    grad: &mut NetworkParams,
) {
    if lambda1 != 0.0 {
        for (g, w) in grad.w1.iter_mut().zip(&params.w1) {
            *g += 2.0 * lambda1 * w;
        }
        for (g, w) in grad.w2.iter_mut().zip(&params.w2) {
            *g += 2.0 * lambda1 * w;
        }
    }
    if lambda2 != 0.0 {
        let n = params.kernel_size;
        for f in 0..params.num_kernels {
            let kernel = params.kernel(f);
            let gk = &mut grad.w1[f * n..(f + 1) * n];
            for j in 0..n.saturating_sub(1) {
                let d = 2.0 * lambda2 * (kernel[j] - kernel[j + 1]);
                gk[j] += d;
                gk[j + 1] -= d;
            }
        }
    }
}

/// Gradient of `lambda2 · shift_penalty` alone.
pub fn shift_penalty_gradient(params: &NetworkParams, lambda2: f64) -> NetworkParams {
    let mut grad = params.zeros_like();
    add_regularizer_gradient(params, 0.0, lambda2, &mut grad);
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_error: f64,
    pub train_loss_history: Vec<f64>,
    pub val_error_history: Vec<f64>,
}

/// Minibatch SGD with momentum; returns the parameters from the epoch with
/// the lowest validation error.
///
/// Training stops once the validation error has failed to strictly improve
/// for more than `patience` consecutive epochs, or after `max_epochs`.
pub fn train(
    trainset: &TrainingSet,
    valset: &TrainingSet,
    hyper: &HyperParams,
) -> Result<(NetworkParams, TrainReport)> {
    let init = glorot_init(
        hyper,
        trainset.bands(),
        trainset.num_classes(),
        rng::derive_seed(hyper.seed, Stream::Init as u64),
    )?;
    train_from(init, trainset, valset, hyper)
}

pub fn train_from(
    mut params: NetworkParams,
    trainset: &TrainingSet,
    valset: &TrainingSet,
    hyper: &HyperParams,
) -> Result<(NetworkParams, TrainReport)> {
    if trainset.is_empty() || valset.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if trainset.bands() != params.bands || valset.bands() != params.bands {
        return Err(Error::Shape(format!(
            "network expects {} bands, sets have {} and {}",
            params.bands,
            trainset.bands(),
            valset.bands()
        )));
    }
    hyper.validate(params.bands)?;

    let mut rng = rng::stream(hyper.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..trainset.len()).collect();
    let mut velocity = params.zeros_like();
    let mut grad = params.zeros_like();
    let mut scratch = Scratch::new(&params);

    let mut best = params.clone();
    let mut best_error = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        best_val_error: f64::INFINITY,
        train_loss_history: Vec::new(),
        val_error_history: Vec::new(),
    };

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let batch_loss = accumulate_gradient(
                &params,
                trainset,
                batch,
                hyper.lambda1,
                hyper.lambda2,
                &mut grad,
                &mut scratch,
            );
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            for (v, g) in velocity.tensors_mut().into_iter().zip(grad.tensors()) {
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = hyper.momentum * *vi - hyper.eta * gi;
                }
            }
            for (p, v) in params.tensors_mut().into_iter().zip(velocity.tensors()) {
                for (pi, vi) in p.iter_mut().zip(v) {
                    *pi += vi;
                }
            }
        }
        epoch_loss /= trainset.len() as f64;
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: epoch_loss,
            });
        }

        let val_error = error_rate(&params, valset);
        report.epochs_run = epoch;
        report.train_loss_history.push(epoch_loss);
        report.val_error_history.push(val_error);

        if val_error < best_error {
            best_error = val_error;
            best_epoch = epoch;
            best.clone_from(&params);
            stale = 0;
        } else {
            stale += 1;
            if stale > hyper.patience {
                debug!("early stop at epoch {epoch}, best epoch {best_epoch}");
                break;
            }
        }
    }

    report.best_epoch = best_epoch;
    report.best_val_error = best_error;
    Ok((best, report))
}

/// Fraction of rows whose predicted class differs from the label.
pub fn error_rate(params: &NetworkParams, set: &TrainingSet) -> f64 {
    let mut act = Activations::for_params(params);
    let wrong = (0..set.len())
        .filter(|&i| {
            forward_into(params, set.row(i), &mut act);
            argmax(&act.probs) != set.labels()[i]
        })
        .count();
    wrong as f64 / set.len() as f64
}

/// 1-based index of the largest entry; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> u32 {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = k;
        }
    }
    best as u32 + 1
}

/// Class ids and probabilities for `n × M` row-major spectra.
pub fn predict(params: &NetworkParams, spectra: &[f64]) -> (Vec<u32>, Vec<f64>) {
    let m = params.bands;
    assert_eq!(
        spectra.len() % m,
        0,
        "spectra length is not a multiple of {m}"
    );
    let per_row: Vec<(u32, Vec<f64>)> = spectra
        .par_chunks(m)
        .map_init(
            || Activations::for_params(params),
            |act, x| {
                forward_into(params, x, act);
                (argmax(&act.probs), act.probs.clone())
            },
        )
        .collect();
    let mut ids = Vec::with_capacity(per_row.len());
    let mut probs = Vec::with_capacity(per_row.len() * params.classes);
    for (id, p) in per_row {
        ids.push(id);
        probs.extend(p);
    }
    (ids, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::RescaleParams;
    use proptest::prelude::*;

    fn set(rows: Vec<Vec<f64>>, labels: Vec<u32>, k: usize) -> TrainingSet {
        let m = rows[0].len();
        TrainingSet::new(rows.concat(), labels, m, k, RescaleParams::IDENTITY).unwrap()
    }

    fn random_set(n: usize, m: usize, k: usize, seed: u64) -> TrainingSet {
        let mut rng = rng::rng(seed);
        let rows = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let labels = (0..n).map(|i| (i % k) as u32 + 1).collect();
        set(rows, labels, k)
    }

    fn hyper(kernels: usize, n: usize, s: usize) -> HyperParams {
        HyperParams {
            num_kernels: kernels,
            kernel_size: n,
            stride: s,
            ..Default::default()
        }
    }

    #[test]
    fn glorot_bounds_and_biases() {
        let h = hyper(1, 4, 1);
        let p = glorot_init(&h, 10, 3, 1).unwrap();
        let bound = glorot_bound(4, 4);
        assert!((bound - 0.75f64.sqrt()).abs() < 1e-12);
        assert!((bound - 0.866).abs() < 1e-3);
        assert!(p.w1.iter().all(|w| w.abs() <= bound));
        let dense = glorot_bound(p.num_features(), 3);
        assert!(p.w2.iter().all(|w| w.abs() <= dense));
        assert!(p.b1.iter().chain(&p.b2).all(|&b| b == 0.0));
        assert_eq!(p, glorot_init(&h, 10, 3, 1).unwrap());
        assert_ne!(p, glorot_init(&h, 10, 3, 2).unwrap());

        // many draws fill the range
        let p = glorot_init(&hyper(32, 4, 1), 10, 3, 1).unwrap();
        let widest = p.w1.iter().map(|w| w.abs()).fold(0.0, f64::max);
        let bound = glorot_bound(4, 128);
        assert!(widest <= bound && widest > 0.8 * bound);
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = NetworkParams::zeros(6, 4, 2, 3, 1);
        let act = forward(&p, &[0.3, 0.1, 0.9, 0.2, 0.5, 0.7]);
        assert!(act.probs.iter().all(|&q| (q - 0.25).abs() < 1e-15));
    }

    #[test]
    fn positions_count() {
        assert_eq!(hyper(16, 53, 1).positions(220), 168);
        assert_eq!(hyper(1, 3, 2).positions(8), 3);
        assert_eq!(
            NetworkParams::zeros(220, 12, 16, 53, 1).num_features(),
            16 * 168
        );
    }

    #[test]
    fn hand_convolution() {
        let mut p = NetworkParams::zeros(3, 2, 1, 2, 1);
        p.w1 = vec![1.0, 0.0];
        let act = forward(&p, &[2.0, 3.0, 5.0]);
        assert_eq!(act.pre, vec![2.0, 3.0]);

        // stride 2 picks windows starting at 0 and 2
        let mut p = NetworkParams::zeros(5, 2, 1, 2, 2);
        p.w1 = vec![1.0, -1.0];
        p.b1 = vec![0.5];
        let act = forward(&p, &[1.0, 4.0, 2.0, 1.0, 9.0]);
        assert_eq!(act.pre, vec![-2.5, 1.5]);
        assert_eq!(act.hidden, vec![0.0, 1.5]);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in proptest::collection::vec(-50f64..50.0, 1..10), c in -100f64..100.0
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
            prop_assert_eq!(argmax(&p), argmax(&softmax(&shifted)));
        }

        #[test]
        fn shift_penalty_properties(
            kernel in proptest::collection::vec(-5f64..5.0, 2..8), c in -3f64..3.0, scale in -3f64..3.0
        ) {
            let base = kernel_shift_penalty(&kernel);
            prop_assert!(base >= 0.0);
            let shifted: Vec<f64> = kernel.iter().map(|w| w + c).collect();
            prop_assert!((kernel_shift_penalty(&shifted) - base).abs() <= 1e-9 * base.max(1.0));
            let scaled: Vec<f64> = kernel.iter().map(|w| w * scale).collect();
            prop_assert!((kernel_shift_penalty(&scaled) - scale * scale * base).abs() <= 1e-9 * base.max(1.0));
            let constant = kernel.iter().all(|&w| w == kernel[0]);
            prop_assert_eq!(base == 0.0, constant);
        }
    }

    #[test]
    fn shift_penalty_hand_values() {
        assert_eq!(kernel_shift_penalty(&[2.5, 2.5, 2.5]), 0.0);
        assert_eq!(kernel_shift_penalty(&[0.0, 1.0]), 1.0);
        assert_eq!(kernel_shift_penalty(&[1.0, 3.0, 2.0]), 5.0);
        let mut p = NetworkParams::zeros(4, 2, 2, 3, 1);
        p.w1 = vec![1.0, 3.0, 2.0, 0.0, 1.0, 1.0];
        assert_eq!(shift_penalty(&p), 6.0);
    }

    #[test]
    fn shift_gradient_vanishes_on_constant_kernels() {
        let mut p = NetworkParams::zeros(6, 2, 2, 4, 1);
        p.w1 = vec![0.7; 8];
        let g = shift_penalty_gradient(&p, 1.0);
        assert!(g.w1.iter().all(|&v| v == 0.0));
        // interior position n: 2λ(2w_n − w_{n−1} − w_{n+1})
        p.w1 = vec![1.0, 3.0, 2.0, 5.0, 0.0, 0.0, 0.0, 0.0];
        let g = shift_penalty_gradient(&p, 0.5);
        assert_eq!(g.w1[1], 2.0 * 0.5 * (2.0 * 3.0 - 1.0 - 2.0));
        assert_eq!(g.w1[0], 2.0 * 0.5 * (1.0 - 3.0));
        assert_eq!(g.w1[3], 2.0 * 0.5 * (5.0 - 2.0));
    }

    #[test]
    fn loss_examples() {
        let k = 3;
        let data = set(vec![vec![0.2, 0.4, 0.6, 0.8]], vec![2], k);
        // uniform prediction
        let p = NetworkParams::zeros(4, k, 1, 2, 1);
        assert!((loss(&p, &data, 0.0, 0.0) - (k as f64).ln()).abs() < 1e-12);

        // near-perfect prediction through a huge bias
        let mut p = NetworkParams::zeros(4, k, 1, 2, 1);
        p.b2 = vec![-50.0, 50.0, -50.0];
        assert!(loss(&p, &data, 0.0, 0.0) <= 1e-6);

        // L2 term: one weight of value 2, data term removed by subtracting it
        let mut p = NetworkParams::zeros(4, k, 1, 2, 1);
        p.w2[0] = 2.0;
        let with = loss(&p, &data, 1.0, 0.0);
        let without = loss(&p, &data, 0.0, 0.0);
        assert!((with - without - 4.0).abs() < 1e-12);

        // biases are never penalized
        let mut p = NetworkParams::zeros(4, k, 1, 2, 1);
        p.b1 = vec![3.0];
        p.b2 = vec![1.0, 2.0, 3.0];
        assert_eq!(loss(&p, &data, 1.0, 1.0), loss(&p, &data, 0.0, 0.0));
    }

    #[test]
    fn confident_wrong_prediction_is_clamped() {
        let data = set(vec![vec![0.0, 0.0]], vec![1], 2);
        let mut p = NetworkParams::zeros(2, 2, 1, 1, 1);
        p.b2 = vec![-1e4, 1e4];
        let l = loss(&p, &data, 0.0, 0.0);
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    fn finite_difference_check(p: &NetworkParams, data: &TrainingSet, l1: f64, l2: f64) -> f64 {
        // central differences, independent of the analytic path
        let h = 1e-4;
        let analytic = backward(p, data, l1, l2);
        let mut worst: f64 = 0.0;
        for t in 0..4 {
            for i in 0..p.tensors()[t].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[t][i] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[t][i] -= h;
                let numeric = (loss(&plus, data, l1, l2) - loss(&minus, data, l1, l2)) / (2.0 * h);
                let exact = analytic.tensors()[t][i];
                let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-2);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = hyper(2, 3, 1);
        for (seed, (l1, l2)) in [(0.0, 0.0), (0.1, 0.0), (0.0, 1.0), (1.0, 0.1)]
            .into_iter()
            .enumerate()
        {
            let p = glorot_init(&h, 12, 2, seed as u64).unwrap();
            let data = random_set(6, 12, 2, 100 + seed as u64);
            let worst = finite_difference_check(&p, &data, l1, l2);
            assert!(worst <= 1e-4, "λ=({l1},{l2}): {worst}");
        }
    }

    #[test]
    fn zero_input_leaves_only_regularizer_in_w1_gradient() {
        let h = hyper(2, 3, 1);
        let p = glorot_init(&h, 8, 2, 3).unwrap();
        let data = set(vec![vec![0.0; 8], vec![0.0; 8]], vec![1, 2], 2);
        let g = backward(&p, &data, 0.0, 0.0);
        assert!(g.w1.iter().all(|&v| v == 0.0));
        let g = backward(&p, &data, 0.1, 0.3);
        let mut reg = p.zeros_like();
        add_regularizer_gradient(&p, 0.1, 0.3, &mut reg);
        assert_eq!(g.w1, reg.w1);
    }

    #[test]
    fn small_steps_decrease_loss_on_smooth_region() {
        // positive inputs and positive kernels keep every ReLU active
        let mut p = NetworkParams::zeros(6, 2, 1, 2, 1);
        p.w1 = vec![0.5, 0.4];
        p.b1 = vec![0.1];
        p.w2 = vec![0.3, -0.2, 0.1, 0.2, 0.1, -0.3, 0.05, 0.0, -0.1, 0.2];
        let data = set(
            vec![
                vec![0.9, 0.8, 0.7, 0.2, 0.1, 0.3],
                vec![0.1, 0.2, 0.3, 0.8, 0.9, 0.7],
            ],
            vec![1, 2],
            2,
        );
        let mut last = loss(&p, &data, 0.01, 0.01);
        for _ in 0..10 {
            let g = backward(&p, &data, 0.01, 0.01);
            for (w, d) in p.tensors_mut().into_iter().zip(g.tensors()) {
                w.iter_mut().zip(d).for_each(|(w, d)| *w -= 1e-3 * d);
            }
            let act0 = forward(&p, data.row(0));
            let act1 = forward(&p, data.row(1));
            assert!(act0.pre.iter().chain(&act1.pre).all(|&z| z > 0.0));
            let now = loss(&p, &data, 0.01, 0.01);
            assert!(now <= last);
            last = now;
        }
    }

    #[test]
    fn argmax_and_predict() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 2);

        let p = glorot_init(&hyper(3, 3, 1), 10, 4, 8).unwrap();
        let data = random_set(100, 10, 4, 9);
        let (ids, probs) = predict(&p, data.spectra());
        assert_eq!(ids.len(), 100);
        for i in 0..100 {
            let act = forward(&p, data.row(i));
            assert_eq!(argmax(&act.probs), ids[i]);
            assert_eq!(&probs[i * 4..(i + 1) * 4], &act.probs[..]);
        }
    }

    fn separable(n_per_class: usize, seed: u64) -> TrainingSet {
        let mut rng = rng::rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per_class {
            let class = i % 2;
            let row: Vec<f64> = (0..10)
                .map(|b| {
                    let bump = if (class == 0 && b < 5) || (class == 1 && b >= 5) {
                        0.6
                    } else {
                        0.0
                    };
                    bump + rng.random_range(0.0..0.3)
                })
                .collect();
            rows.push(row);
            labels.push(class as u32 + 1);
        }
        set(rows, labels, 2)
    }

    #[test]
    fn trains_to_perfect_accuracy_on_separable_data() {
        let train_set = separable(20, 1);
        let val_set = separable(10, 2);
        let h = HyperParams {
            num_kernels: 4,
            kernel_size: 3,
            eta: 0.05,
            lambda1: 1e-4,
            lambda2: 1e-3,
            max_epochs: 500,
            patience: 20,
            batch_size: 8,
            ..Default::default()
        };
        let (p, report) = train(&train_set, &val_set, &h).unwrap();
        assert_eq!(error_rate(&p, &train_set), 0.0);
        assert!(report.epochs_run < h.max_epochs);
        assert!(report.best_epoch <= report.epochs_run);
        assert_eq!(report.val_error_history.len(), report.epochs_run);
        assert_eq!(report.best_val_error, 0.0);
    }

    #[test]
    fn patience_zero_and_null_step() {
        let train_set = separable(10, 3);
        let val_set = separable(5, 4);
        let h = HyperParams {
            num_kernels: 2,
            kernel_size: 3,
            eta: 0.0,
            patience: 0,
            max_epochs: 50,
            ..Default::default()
        };
        let init = glorot_init(&h, 10, 2, 77).unwrap();
        let (p, report) = train_from(init.clone(), &train_set, &val_set, &h).unwrap();
        assert_eq!(p, init);
        // epoch 1 always improves on the initial infinity; epoch 2 cannot
        assert_eq!(report.epochs_run, 2);
        assert_eq!(report.best_epoch, 1);

        let h = HyperParams { patience: 7, ..h };
        let (_, report) = train_from(init, &train_set, &val_set, &h).unwrap();
        assert_eq!(report.epochs_run, 9);
        assert!(report.val_error_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn divergence_is_reported() {
        let train_set = separable(10, 3);
        let val_set = separable(5, 4);
        let h = HyperParams {
            num_kernels: 2,
            kernel_size: 3,
            eta: 1e30,
            lambda1: 1e4,
            momentum: 0.9,
            max_epochs: 50,
            ..Default::default()
        };
        match train(&train_set, &val_set, &h) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let train_set = separable(15, 5);
        let val_set = separable(5, 6);
        let h = HyperParams {
            num_kernels: 3,
            kernel_size: 4,
            eta: 0.01,
            max_epochs: 40,
            patience: 5,
            seed: 99,
            ..Default::default()
        };
        let (a, ra) = train(&train_set, &val_set, &h).unwrap();
        let (b, rb) = train(&train_set, &val_set, &h).unwrap();
        assert_eq!(ra, rb);
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            assert!(x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(hyper(1, 11, 1).validate(10).is_err());
        assert!(hyper(0, 3, 1).validate(10).is_err());
        assert!(hyper(1, 3, 0).validate(10).is_err());
        let mut h = hyper(1, 3, 1);
        h.momentum = 1.0;
        assert!(h.validate(10).is_err());
        h.momentum = 0.7;
        h.lambda2 = -1.0;
        assert!(h.validate(10).is_err());
    }
}
