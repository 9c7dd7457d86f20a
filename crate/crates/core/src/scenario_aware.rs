//! Scenario-aware batch normalization and scenario-aware feature filtering.
//!
//! SABN normalizes each unit with statistics shared by every scenario, then
//! rescales per sample with `γ(s)` and `β(s)` produced by two small
//! perceptrons. SAFF multiplies the feature vector elementwise by a sigmoid
//! gate computed from the features and the scenario vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, Mlp, MlpCache};
use crate::tensor::{sigmoid, Matrix, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Exponential moving averages of per-dimension mean and variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl MovingStats {
    /// Mean 0, variance 1.
    pub fn new(dim: usize) -> Self {
        MovingStats {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `stored = momentum * stored + (1 - momentum) * batch`.
    pub fn update(&mut self, batch: &MovingStats, momentum: f64) {
        for (m, b) in self.mean.iter_mut().zip(&batch.mean) {
            *m = momentum * *m + (1.0 - momentum) * b;
        }
        for (v, b) in self.var.iter_mut().zip(&batch.var) {
            *v = momentum * *v + (1.0 - momentum) * b;
        }
    }
}

/// Per-column mean and biased (1/B) variance of a batch laid out as rows.
pub fn batch_moments(z: &Matrix) -> MovingStats {
    let b = z.rows() as f64;
    let mut mean = vec![0.0; z.cols()];
    for r in 0..z.rows() {
        for (m, v) in mean.iter_mut().zip(z.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b);
    let mut var = vec![0.0; z.cols()];
    for r in 0..z.rows() {
        for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= b);
    MovingStats { mean, var }
}

/// The scale and shift networks of one SABN layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleNets {
    pub gamma: Mlp,
    pub beta: Mlp,
}

impl RescaleNets {
    /// Hidden layers are Glorot-initialized; output layers start at zero with
    /// the γ bias at one, so a fresh layer is plain batch normalization.
    pub fn new<R: Rng + ?Sized>(scenario_dim: usize, hidden: usize, width: usize, rng: &mut R) -> Self {
        let mut gamma = Mlp::zeros(scenario_dim, hidden, width);
        gamma.hidden = Dense::glorot(scenario_dim, hidden, rng);
        gamma.output.bias.iter_mut().for_each(|b| *b = 1.0);
        let mut beta = Mlp::zeros(scenario_dim, hidden, width);
        beta.hidden = Dense::glorot(scenario_dim, hidden, rng);
        RescaleNets { gamma, beta }
    }
}

impl Parameters for RescaleNets {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.gamma.visit(f);
        self.beta.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.gamma.visit_mut(f);
        self.beta.visit_mut(f);
    }
}

/// One SABN layer: trainable rescale networks plus moving statistics.
///
/// Only the rescale networks are visited as parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SabnState {
    pub nets: RescaleNets,
    pub stats: MovingStats,
    pub momentum: f64,
    pub eps: f64,
}

impl Parameters for SabnState {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.nets.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.nets.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct SabnCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
    pub gamma: Matrix,
    pub gamma_caches: Vec<MlpCache>,
    pub beta_caches: Vec<MlpCache>,
    pub mode: Mode,
    /// Batch moments in train mode, for the moving-average update.
    pub batch_stats: Option<MovingStats>,
}

impl SabnState {
    pub fn new<R: Rng + ?Sized>(scenario_dim: usize, hidden: usize, width: usize, rng: &mut R) -> Self {
        SabnState {
            nets: RescaleNets::new(scenario_dim, hidden, width, rng),
            stats: MovingStats::new(width),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn width(&self) -> usize {
        self.stats.dim()
    }

    /// Forward pass without touching the moving statistics.
    pub fn forward_pure(&self, z: &Matrix, s: &Matrix, mode: Mode) -> Result<(Matrix, SabnCache)> {
        if z.cols() != self.width() {
            return Err(Error::shape("sabn_forward", self.width(), z.cols()));
        }
        if s.rows() != z.rows() || s.cols() != self.nets.gamma.input_dim() {
            return Err(Error::shape(
                "sabn_forward",
                format!("{}x{} scenario batch", z.rows(), self.nets.gamma.input_dim()),
                format!("{}x{}", s.rows(), s.cols()),
            ));
        }
        let (mean, var, batch_stats) = match mode {
            Mode::Train => {
                if z.rows() < 2 {
                    return Err(Error::BatchTooSmall(z.rows()));
                }
                let m = batch_moments(z);
                (m.mean.clone(), m.var.clone(), Some(m))
            }
            Mode::Eval => (self.stats.mean.clone(), self.stats.var.clone(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (b, m) = z.shape();
        let mut normalized = Matrix::zeros(b, m);
        let mut gamma = Matrix::zeros(b, m);
        let mut out = Matrix::zeros(b, m);
        let mut gamma_caches = Vec::with_capacity(b);
        let mut beta_caches = Vec::with_capacity(b);
        for r in 0..b {
            let (g, gc) = self.nets.gamma.forward(s.row(r));
            let (be, bc) = self.nets.beta.forward(s.row(r));
            for c in 0..m {
                let zhat = (z[(r, c)] - mean[c]) * inv_std[c];
                normalized[(r, c)] = zhat;
                gamma[(r, c)] = g[c];
                out[(r, c)] = g[c] * zhat + be[c];
            }
            gamma_caches.push(gc);
            beta_caches.push(bc);
        }
        Ok((
            out,
            SabnCache {
                normalized,
                inv_std,
                gamma,
                gamma_caches,
                beta_caches,
                mode,
                batch_stats,
            },
        ))
    }

    /// Forward pass; in train mode the moving statistics absorb the batch
    /// moments with the configured momentum.
    pub fn forward(&mut self, z: &Matrix, s: &Matrix, mode: Mode) -> Result<Matrix> {
        let (out, cache) = self.forward_pure(z, s, mode)?;
        if let Some(batch) = &cache.batch_stats {
            self.stats.update(batch, self.momentum);
        }
        Ok(out)
    }

    pub fn absorb(&mut self, cache: &SabnCache) {
        if let Some(batch) = &cache.batch_stats {
            self.stats.update(batch, self.momentum);
        }
    }

    /// Backward pass. Accumulates rescale-network gradients into `grad` and
    /// returns the gradient with respect to the pre-normalization batch.
    pub fn backward(&self, cache: &SabnCache, dout: &Matrix, grad: &mut RescaleNets) -> Matrix {
        let (b, m) = dout.shape();
        let mut dzhat = Matrix::zeros(b, m);
        for r in 0..b {
            let mut dgamma = vec![0.0; m];
            for c in 0..m {
                dgamma[c] = dout[(r, c)] * cache.normalized[(r, c)];
                dzhat[(r, c)] = dout[(r, c)] * cache.gamma[(r, c)];
            }
            self.nets
                .gamma
                .backward(&cache.gamma_caches[r], &dgamma, &mut grad.gamma, None);
            self.nets
                .beta
                .backward(&cache.beta_caches[r], dout.row(r), &mut grad.beta, None);
        }
        let mut dz = Matrix::zeros(b, m);
        match cache.mode {
            Mode::Eval => {
                for r in 0..b {
                    for c in 0..m {
                        dz[(r, c)] = dzhat[(r, c)] * cache.inv_std[c];
                    }
                }
            }
            Mode::Train => {
                let bf = b as f64;
                for c in 0..m {
                    let mut sum = 0.0;
                    let mut sum_dot = 0.0;
                    for r in 0..b {
                        sum += dzhat[(r, c)];
                        sum_dot += dzhat[(r, c)] * cache.normalized[(r, c)];
                    }
                    for r in 0..b {
                        dz[(r, c)] = cache.inv_std[c] / bf
                            * (bf * dzhat[(r, c)] - sum - cache.normalized[(r, c)] * sum_dot);
                    }
                }
            }
        }
        dz
    }
}

/// Sigmoid feature gate over `concat(x, s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaffNet {
    pub gate: Dense,
}

#[derive(Clone, Debug)]
pub struct SaffCache {
    pub input: Vec<f64>,
    pub gate: Vec<f64>,
}

impl SaffNet {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, scenario_dim: usize, rng: &mut R) -> Self {
        SaffNet {
            gate: Dense::glorot(feature_dim + scenario_dim, feature_dim, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.gate.output_dim()
    }

    pub fn scenario_dim(&self) -> usize {
        self.gate.input_dim() - self.gate.output_dim()
    }

    pub fn forward(&self, x: &[f64], s: &[f64]) -> Result<(Vec<f64>, SaffCache)> {
        if x.len() != self.feature_dim() || s.len() != self.scenario_dim() {
            return Err(Error::shape(
                "saff",
                format!("x:{} s:{}", self.feature_dim(), self.scenario_dim()),
                format!("x:{} s:{}", x.len(), s.len()),
            ));
        }
        let mut input = Vec::with_capacity(x.len() + s.len());
        input.extend_from_slice(x);
        input.extend_from_slice(s);
        let gate: Vec<f64> = self.gate.forward(&input).into_iter().map(sigmoid).collect();
        let out = x.iter().zip(&gate).map(|(a, g)| a * g).collect();
        Ok((out, SaffCache { input, gate }))
    }

    /// Accumulates gate gradients; adds the feature gradient into `dx`.
    pub fn backward(&self, cache: &SaffCache, dout: &[f64], grad: &mut SaffNet, dx: Option<&mut [f64]>) {
        let d = self.feature_dim();
        let x = &cache.input[..d];
        let dlogit: Vec<f64> = (0..d)
            .map(|k| dout[k] * x[k] * cache.gate[k] * (1.0 - cache.gate[k]))
            .collect();
        match dx {
            Some(dx) => {
                let mut dinput = vec![0.0; cache.input.len()];
                self.gate.backward(&cache.input, &dlogit, &mut grad.gate, Some(&mut dinput));
                for k in 0..d {
                    dx[k] += dout[k] * cache.gate[k] + dinput[k];
                }
            }
            None => self.gate.backward(&cache.input, &dlogit, &mut grad.gate, None),
        }
    }
}

/// `x ⊙ σ(MLP(x, s))`.
pub fn saff(net: &SaffNet, x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    net.forward(x, s).map(|(out, _)| out)
}

impl Parameters for SaffNet {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.gate.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.gate.visit_mut(f);
    }
}
