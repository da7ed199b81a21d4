//! Fully connected feed-forward classifier with logistic units.
//!
//! The network maps a standardized feature vector to a single output in
//! `(0, 1)`, read as the probability of instability. Training minimizes
//! `mean BCE + (l2 / 2n) · Σ‖W‖²` over each minibatch of size `n` (biases
//! unpenalized) with Adam, stopping early on a held-out part of the
//! training data. Scaling the penalty by the batch size follows the usual
//! convention for this architecture; the undivided penalty at `l2 = 1e-4`
//! outweighs the small gradients of a deep logistic stack and collapses
//! the weights to zero.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::real::Real;

pub const FORMAT_TAG: &str = "quadstab-mlp";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of the training data held out for early stopping; 0
    /// disables early stopping.
    pub validation_fraction: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            hidden: vec![50; 4],
            batch_size: 1000,
            l2: 1e-4,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 500,
            patience: 20,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weights: vec![T::zero(); n_in * n_out], biases: vec![T::zero(); n_out] }
    }

    fn apply(&self, input: &[T], out: &mut [T]) {
        for (o, (row, &b)) in out.iter_mut().zip(self.weights.chunks_exact(self.n_in).zip(&self.biases)) {
            let mut z = b;
            for (&w, &x) in row.iter().zip(input) {
                z += w * x;
            }
            *o = logistic(z);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer<T> {
    pub means: Vec<T>,
    pub stds: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    /// Per-feature mean and population standard deviation; a zero spread
    /// is replaced by 1 so constant features map to 0.
    pub fn fit(xs: &[Vec<T>]) -> Result<Self> {
        let n = xs.first().map(Vec::len).ok_or_else(|| Error::Training("empty training set".into()))?;
        let count = T::from_usize(xs.len()).expect("row count");
        let mut means = vec![T::zero(); n];
        for x in xs {
            if x.len() != n {
                return Err(Error::Dimension { expected: n, got: x.len() });
            }
            for (m, &v) in means.iter_mut().zip(x) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m = *m / count);
        let mut vars = vec![T::zero(); n];
        for x in xs {
            for ((s, &v), &m) in vars.iter_mut().zip(x).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let stds = vars
            .into_iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > T::zero() && sd.is_finite() {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Self { means, stds })
    }

    pub fn identity(n: usize) -> Self {
        Self { means: vec![T::zero(); n], stds: vec![T::one(); n] }
    }

    pub fn apply(&self, x: &[T], out: &mut [T]) {
        for (((o, &v), &m), &s) in out.iter_mut().zip(x).zip(&self.means).zip(&self.stds) {
            *o = (v - m) / s;
        }
    }

    pub fn transform(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.apply(x, &mut out);
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub topology: Option<String>,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_validation_loss: Option<f64>,
    pub train_score: Option<f64>,
    pub test_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
    pub standardizer: Standardizer<T>,
    pub hyper: Hyperparams,
    pub info: TrainingInfo,
}

#[inline]
fn logistic<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]` evaluated without forming σ(z).
#[inline]
fn bce_from_logit<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p() - y * z
}

/// Scratch space for one forward/backward pass.
struct Workspace<T> {
    /// `acts[0]` is the standardized input, `acts[l + 1]` layer `l`'s output.
    acts: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
    logit: T,
}

impl<T: Real> Workspace<T> {
    fn new(sizes: &[usize]) -> Self {
        Self {
            acts: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            deltas: sizes[1..].iter().map(|&n| vec![T::zero(); n]).collect(),
            logit: T::zero(),
        }
    }
}

impl<T: Real> Mlp<T> {
    /// Network with Glorot-uniform weights and zero biases.
    pub fn init(n_features: usize, hyper: &Hyperparams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = layer_sizes(n_features, &hyper.hidden);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let weights = (0..n_in * n_out).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
                Layer { n_in, n_out, weights, biases: vec![T::zero(); n_out] }
            })
            .collect();
        Self {
            layers,
            standardizer: Standardizer::identity(n_features),
            hyper: hyper.clone(),
            info: TrainingInfo { seed, ..Default::default() },
        }
    }

    pub fn n_features(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_features()];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    fn workspace(&self) -> Workspace<T> {
        Workspace::new(&self.layer_sizes())
    }

    /// Forward pass on an already standardized input; fills `ws`.
    fn forward_ws(&self, ws: &mut Workspace<T>) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            if l == last {
                let mut z = layer.biases[0];
                for (&w, &x) in layer.weights.iter().zip(&head[l]) {
                    z += w * x;
                }
                ws.logit = z;
                tail[0][0] = logistic(z);
            } else {
                layer.apply(&head[l], &mut tail[0]);
            }
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::Dimension { expected: self.n_features(), got: x.len() });
        }
        Ok(())
    }

    /// Probability of instability for a raw (unstandardized) feature vector.
    pub fn forward(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        let mut ws = self.workspace();
        self.standardizer.apply(x, &mut ws.acts[0]);
        self.forward_ws(&mut ws);
        Ok(ws.acts[self.layers.len()][0])
    }

    /// True when the model predicts instability (output ≥ 0.5).
    pub fn predict_unstable(&self, x: &[T]) -> Result<bool> {
        Ok(self.forward(x)? >= T::lit(0.5))
    }

    pub fn predict_proba(&self, xs: &[Vec<T>]) -> Result<Vec<T>> {
        let mut ws = self.workspace();
        xs.iter()
            .map(|x| {
                self.check_dim(x)?;
                self.standardizer.apply(x, &mut ws.acts[0]);
                self.forward_ws(&mut ws);
                Ok(ws.acts[self.layers.len()][0])
            })
            .collect()
    }

    /// Parallel version of [`Self::predict_proba`]; each output is computed
    /// by the same sequence of operations, so results agree bit for bit.
    pub fn predict_proba_par(&self, xs: &[Vec<T>]) -> Result<Vec<T>> {
        xs.par_iter().map(|x| self.forward(x)).collect()
    }

    /// Mean cross-entropy over the batch plus the L2 penalty, on raw inputs.
    pub fn loss(&self, xs: &[Vec<T>], ys: &[T]) -> Result<T> {
        let xs_std: Vec<Vec<T>> = xs.iter().map(|x| self.standardizer.transform(x)).collect();
        self.loss_std(&xs_std, ys, true)
    }

    fn loss_std(&self, xs: &[Vec<T>], ys: &[T], penalty: bool) -> Result<T> {
        if xs.len() != ys.len() {
            return Err(Error::Length(xs.len(), ys.len()));
        }
        let mut ws = self.workspace();
        let mut total = T::zero();
        for (x, &y) in xs.iter().zip(ys) {
            self.check_dim(x)?;
            ws.acts[0].copy_from_slice(x);
            self.forward_ws(&mut ws);
            total += bce_from_logit(ws.logit, y);
        }
        let n = T::from_usize(xs.len().max(1)).expect("batch size");
        let mut loss = total / n;
        if penalty {
            loss += T::lit(0.5 * self.hyper.l2) * self.weight_norm_sq() / n;
        }
        Ok(loss)
    }

    fn weight_norm_sq(&self) -> T {
        self.layers.iter().flat_map(|l| l.weights.iter()).map(|&w| w * w).sum()
    }

    /// Gradient of the penalized loss over a standardized batch, laid out
    /// like the layers (weights then biases per layer).
    fn gradient_std(&self, xs: &[Vec<T>], ys: &[T], ws: &mut Workspace<T>, grads: &mut [Layer<T>]) {
        for g in grads.iter_mut() {
            g.weights.iter_mut().for_each(|v| *v = T::zero());
            g.biases.iter_mut().for_each(|v| *v = T::zero());
        }
        let inv_n = T::one() / T::from_usize(xs.len()).expect("batch size");
        let n_layers = self.layers.len();
        for (x, &y) in xs.iter().zip(ys) {
            ws.acts[0].copy_from_slice(x);
            self.forward_ws(ws);
            ws.deltas[n_layers - 1][0] = (ws.acts[n_layers][0] - y) * inv_n;
            for l in (0..n_layers).rev() {
                if l + 1 < n_layers {
                    let next = &self.layers[l + 1];
                    let (cur, nxt) = ws.deltas.split_at_mut(l + 1);
                    let d = &mut cur[l];
                    d.iter_mut().for_each(|v| *v = T::zero());
                    for (row, &dn) in next.weights.chunks_exact(next.n_in).zip(&nxt[0]) {
                        for (dv, &w) in d.iter_mut().zip(row) {
                            *dv += w * dn;
                        }
                    }
                    for (dv, &a) in d.iter_mut().zip(&ws.acts[l + 1]) {
                        *dv *= a * (T::one() - a);
                    }
                }
                let g = &mut grads[l];
                let input = &ws.acts[l];
                for ((grow, gb), &d) in g.weights.chunks_exact_mut(g.n_in).zip(g.biases.iter_mut()).zip(&ws.deltas[l]) {
                    *gb += d;
                    for (gw, &a) in grow.iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
            }
        }
        let l2 = T::lit(self.hyper.l2) * inv_n;
        for (g, layer) in grads.iter_mut().zip(&self.layers) {
            for (gw, &w) in g.weights.iter_mut().zip(&layer.weights) {
                *gw += l2 * w;
            }
        }
    }

    /// Analytic gradient of [`Self::loss`] on raw inputs.
    pub fn gradient(&self, xs: &[Vec<T>], ys: &[T]) -> Result<Vec<Layer<T>>> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Length(xs.len(), ys.len()));
        }
        for x in xs {
            self.check_dim(x)?;
        }
        let xs_std: Vec<Vec<T>> = xs.iter().map(|x| self.standardizer.transform(x)).collect();
        let mut ws = self.workspace();
        let mut grads: Vec<Layer<T>> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        self.gradient_std(&xs_std, ys, &mut ws, &mut grads);
        Ok(grads)
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameter `k` in the order weights-then-biases, layer by layer.
    pub fn param_mut(&mut self, mut k: usize) -> &mut T {
        for layer in &mut self.layers {
            if k < layer.weights.len() {
                return &mut layer.weights[k];
            }
            k -= layer.weights.len();
            if k < layer.biases.len() {
                return &mut layer.biases[k];
            }
            k -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Same indexing as [`Self::param_mut`] on a gradient.
    pub fn grad_at(grads: &[Layer<T>], mut k: usize) -> T {
        for g in grads {
            if k < g.weights.len() {
                return g.weights[k];
            }
            k -= g.weights.len();
            if k < g.biases.len() {
                return g.biases[k];
            }
            k -= g.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// True when the model predicts a stable system.
pub fn is_stable(model: &Mlp<f64>, features: &[f64]) -> Result<bool> {
    Ok(!model.predict_unstable(features)?)
}

/// Ordered feature vector of a system, as fed to the network.
pub fn featurize(params: &SystemParams) -> Vec<f64> {
    params.features()
}

pub fn layer_sizes(n_features: usize, hidden: &[usize]) -> Vec<usize> {
    let mut s = vec![n_features];
    s.extend_from_slice(hidden);
    s.push(1);
    s
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences with step `1e-6`, over `n_probe` random parameters.
///
/// The relative error of each probe is `|g - g_fd| / max(|g|, |g_fd|, floor)`
/// with `floor = 1e-4`. Rounding in the loss limits the finite-difference
/// estimate to an absolute accuracy of a few `1e-10`, so parameters with
/// smaller gradients are judged on absolute error instead.
pub fn gradient_check(model: &Mlp<f64>, xs: &[Vec<f64>], ys: &[f64], n_probe: usize, seed: u64) -> Result<f64> {
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-4;
    let grads = model.gradient(xs, ys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_parameters();
    let mut probes: Vec<usize> = (0..n).collect();
    probes.shuffle(&mut rng);
    probes.truncate(n_probe.min(n));
    let mut worst = 0.0f64;
    let mut m = model.clone();
    for k in probes {
        let w0 = *m.param_mut(k);
        *m.param_mut(k) = w0 + H;
        let up = m.loss(xs, ys)?;
        *m.param_mut(k) = w0 - H;
        let down = m.loss(xs, ys)?;
        *m.param_mut(k) = w0;
        let fd = (up - down) / (2.0 * H);
        let an = Mlp::grad_at(&grads, k);
        let err = (an - fd).abs() / an.abs().max(fd.abs()).max(FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

struct Adam<T> {
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(layers: &[Layer<T>]) -> Self {
        let zeros = || layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, params: &mut [Layer<T>], grads: &[Layer<T>], h: &Hyperparams) {
        self.t += 1;
        let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
        let lr = T::lit(h.learning_rate);
        let eps = T::lit(h.epsilon);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let one = T::one();
        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        };
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            update(&mut p.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut p.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
    }
}

/// Fraction of correct verdicts at the 0.5 threshold.
pub fn accuracy<T: Real>(model: &Mlp<T>, xs: &[Vec<T>], ys: &[T]) -> Result<f64> {
    let p = model.predict_proba(xs)?;
    let half = T::lit(0.5);
    let correct = p.iter().zip(ys).filter(|(&p, &y)| (p >= half) == (y >= half)).count();
    Ok(correct as f64 / xs.len().max(1) as f64)
}

/// Per-epoch training trace.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

/// Trains a fresh network on raw features `xs` with binary targets `ys`
/// (1 = unstable).
pub fn train<T: Real>(xs: &[Vec<T>], ys: &[T], hyper: &Hyperparams, seed: u64) -> Result<Mlp<T>> {
    train_logged(xs, ys, hyper, seed).map(|(m, _)| m)
}

pub fn train_logged<T: Real>(xs: &[Vec<T>], ys: &[T], hyper: &Hyperparams, seed: u64) -> Result<(Mlp<T>, TrainLog)> {
    if xs.len() != ys.len() {
        return Err(Error::Length(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let half = T::lit(0.5);
    let n_pos = ys.iter().filter(|&&y| y >= half).count();
    if n_pos == 0 || n_pos == ys.len() {
        return Err(Error::Training("training set contains a single class".into()));
    }
    if hyper.batch_size == 0 || hyper.hidden.iter().any(|&h| h == 0) {
        return Err(Error::Training("batch size and layer widths must be positive".into()));
    }
    let n_features = xs[0].len();
    let standardizer = Standardizer::fit(xs)?;
    let mut model = Mlp::init(n_features, hyper, seed);
    model.standardizer = standardizer;
    let xs_std: Vec<Vec<T>> = xs.iter().map(|x| model.standardizer.transform(x)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if hyper.validation_fraction > 0.0 {
        ((xs.len() as f64) * hyper.validation_fraction).round() as usize
    } else {
        0
    };
    let n_val = n_val.min(xs.len() - 1);
    let (val_idx, fit_idx) = order.split_at(n_val);
    let val_x: Vec<Vec<T>> = val_idx.iter().map(|&i| xs_std[i].clone()).collect();
    let val_y: Vec<T> = val_idx.iter().map(|&i| ys[i]).collect();
    let mut fit_idx = fit_idx.to_vec();

    let mut adam = Adam::new(&model.layers);
    let mut ws = model.workspace();
    let mut grads: Vec<Layer<T>> = model.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<Layer<T>>)> = None;
    let mut since_best = 0;
    let mut epochs = 0;
    let mut batch_x: Vec<Vec<T>> = Vec::with_capacity(hyper.batch_size);
    let mut batch_y: Vec<T> = Vec::with_capacity(hyper.batch_size);

    for _ in 0..hyper.max_epochs {
        epochs += 1;
        fit_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in fit_idx.chunks(hyper.batch_size) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| xs_std[i].clone()));
            batch_y.extend(chunk.iter().map(|&i| ys[i]));
            model.gradient_std(&batch_x, &batch_y, &mut ws, &mut grads);
            adam.step(&mut model.layers, &grads, hyper);
            epoch_loss += model.loss_std(&batch_x, &batch_y, false)?.to_f64_lossy() * chunk.len() as f64;
            seen += chunk.len();
        }
        if !model.is_finite() {
            return Err(Error::Training("weights became non-finite".into()));
        }
        log.train_loss.push(epoch_loss / seen as f64);

        if n_val > 0 {
            let vl = model.loss_std(&val_x, &val_y, false)?.to_f64_lossy();
            log.validation_loss.push(vl);
            match &best {
                Some((b, _)) if vl >= *b => {
                    since_best += 1;
                    if since_best >= hyper.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((vl, model.layers.clone()));
                    since_best = 0;
                }
            }
        }
    }
    if let Some((vl, layers)) = best {
        model.layers = layers;
        model.info.best_validation_loss = Some(vl);
    }
    model.info.epochs_run = epochs;
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Storage

#[derive(Serialize, Deserialize)]
struct LayerFile {
    n_in: usize,
    n_out: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StandardizerFile {
    means: Vec<f64>,
    stds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    activation: String,
    layer_sizes: Vec<usize>,
    layers: Vec<LayerFile>,
    standardizer: StandardizerFile,
    hyperparams: Hyperparams,
    info: TrainingInfo,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn to_f64s<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64s<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

impl<T: Real> Mlp<T> {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            activation: "logistic".into(),
            layer_sizes: self.layer_sizes(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile { n_in: l.n_in, n_out: l.n_out, weights: to_f64s(&l.weights), biases: to_f64s(&l.biases) })
                .collect(),
            standardizer: StandardizerFile {
                means: to_f64s(&self.standardizer.means),
                stds: to_f64s(&self.standardizer.stds),
            },
            hyperparams: self.hyper.clone(),
            info: self.info.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Training(e.to_string()))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Corrupt { path: path.to_path_buf(), reason };
        let header: Header = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if header.format != FORMAT_TAG {
            return Err(bad(format!("unknown format `{}`", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Version { found: header.version, expected: FORMAT_VERSION });
        }
        let file: ModelFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.activation != "logistic" {
            return Err(bad(format!("unsupported activation `{}`", file.activation)));
        }
        let sizes = &file.layer_sizes;
        if sizes.len() < 2 || file.layers.len() != sizes.len() - 1 || sizes.last() != Some(&1) {
            return Err(bad("inconsistent layer sizes".into()));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (k, l) in file.layers.iter().enumerate() {
            if l.n_in != sizes[k] || l.n_out != sizes[k + 1] || l.weights.len() != l.n_in * l.n_out || l.biases.len() != l.n_out
            {
                return Err(bad(format!("layer {k} has inconsistent shape")));
            }
            layers.push(Layer { n_in: l.n_in, n_out: l.n_out, weights: from_f64s(&l.weights), biases: from_f64s(&l.biases) });
        }
        let st = &file.standardizer;
        if st.means.len() != sizes[0] || st.stds.len() != sizes[0] || st.stds.iter().any(|&s| !(s > 0.0)) {
            return Err(bad("invalid standardizer".into()));
        }
        let model = Self {
            layers,
            standardizer: Standardizer { means: from_f64s(&st.means), stds: from_f64s(&st.stds) },
            hyper: file.hyperparams,
            info: file.info,
        };
        if !model.is_finite() {
            return Err(bad("non-finite weights".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Hyperparams {
        Hyperparams { hidden: vec![4, 3], ..Default::default() }
    }

    #[test]
    fn zero_network_outputs_half() {
        let mut m: Mlp<f64> = Mlp::init(3, &tiny(), 1);
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        assert_eq!(m.forward(&[1.0, -5.0, 100.0]).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        let m: Mlp<f64> = Mlp::init(6, &tiny(), 1);
        assert!(matches!(m.forward(&[0.0; 11]), Err(Error::Dimension { expected: 6, got: 11 })));
    }

    #[test]
    fn monotone_toy_model() {
        let h = Hyperparams { hidden: vec![2], ..Default::default() };
        let mut m: Mlp<f64> = Mlp::init(1, &h, 0);
        m.layers[0].weights = vec![1.5, 0.5];
        m.layers[1].weights = vec![2.0, 1.0];
        let mut prev = 0.0;
        for k in -20..=20 {
            let p = m.forward(&[k as f64 * 0.5]).unwrap();
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn bce_matches_direct_formula() {
        for (z, y) in [(0.3, 1.0), (-2.0, 0.0), (5.0, 0.0), (-1.0, 1.0)] {
            let p = logistic(z);
            let direct = -(y * f64::ln(p) + (1.0 - y) * f64::ln(1.0 - p));
            assert!((bce_from_logit(z, y) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_adds_l2_w_over_batch() {
        let xs = vec![vec![0.1, 0.2], vec![-0.3, 0.5]];
        let ys = vec![0.0, 1.0];
        let h0 = Hyperparams { l2: 0.0, ..tiny() };
        let m0: Mlp<f64> = Mlp::init(2, &h0, 3);
        let mut m1 = m0.clone();
        m1.hyper.l2 = 0.5;
        let g0 = m0.gradient(&xs, &ys).unwrap();
        let g1 = m1.gradient(&xs, &ys).unwrap();
        for ((a, b), l) in g0.iter().zip(&g1).zip(&m0.layers) {
            for ((x, y), w) in a.weights.iter().zip(&b.weights).zip(&l.weights) {
                assert!((y - x - 0.5 * w / 2.0).abs() < 1e-15);
            }
            assert_eq!(a.biases, b.biases);
        }
    }

    #[test]
    fn constant_feature_gets_zero_input_gradient() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 3.0]).collect();
        let ys: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let mut m: Mlp<f64> = Mlp::init(2, &Hyperparams { l2: 0.0, ..tiny() }, 2);
        m.standardizer = Standardizer::fit(&xs).unwrap();
        assert_eq!(m.standardizer.stds[1], 1.0);
        let g = m.gradient(&xs, &ys).unwrap();
        for row in g[0].weights.chunks(2) {
            assert_eq!(row[1], 0.0);
        }
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        assert!(matches!(train(&xs, &[1.0, 1.0], &tiny(), 0), Err(Error::Training(_))));
    }

    #[test]
    fn json_round_trip_and_errors() {
        let m: Mlp<f64> = Mlp::init(3, &tiny(), 9);
        let text = m.to_json().unwrap();
        let p = Path::new("mem");
        let back = Mlp::<f64>::from_json(&text, p).unwrap();
        assert_eq!(back, m);
        assert!(matches!(Mlp::<f64>::from_json(&text[..text.len() / 2], p), Err(Error::Corrupt { .. })));
        let v2 = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Mlp::<f64>::from_json(&v2, p), Err(Error::Version { found: 2, .. })));
    }
}
