//! Small perceptron building blocks with hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Parameters, Vector};

/// Fully connected layer `y = W x + b` with `W` of shape `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: Vector::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let mut layer = Dense::zeros(input, output);
        glorot_fill(&mut layer.weight, rng);
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output_dim()];
        self.weight.matvec_into(x, &mut y);
        for (o, b) in y.iter_mut().zip(self.bias.iter()) {
            *o += b;
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and, when requested, the
    /// input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        grad.weight.add_outer(1.0, dy, x);
        for (g, d) in grad.bias.iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            self.weight.matvec_t_acc(dy, dx);
        }
    }
}

impl Parameters for Dense {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.weight.visit(f);
        self.bias.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.weight.visit_mut(f);
        self.bias.visit_mut(f);
    }
}

/// Entries uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_fill<R: Rng + ?Sized>(w: &mut Matrix, rng: &mut R) {
    let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
    for v in w.as_mut_slice() {
        *v = rng.gen_range(-limit..limit);
    }
}

/// Two-layer perceptron: dense, rectifier, dense.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Dense,
    pub output: Dense,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
}

impl Mlp {
    pub fn glorot<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Mlp {
            hidden: Dense::glorot(input, hidden, rng),
            output: Dense::glorot(hidden, output, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            hidden: Dense::zeros(input, hidden),
            output: Dense::zeros(hidden, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let pre = self.hidden.forward(x);
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let out = self.output.forward(&act);
        (
            out,
            MlpCache {
                input: x.to_vec(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grad: &mut Mlp, dx: Option<&mut [f64]>) {
        let mut dact = vec![0.0; cache.act.len()];
        self.output.backward(&cache.act, dy, &mut grad.output, Some(&mut dact));
        for (d, &p) in dact.iter_mut().zip(&cache.pre) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        self.hidden.backward(&cache.input, &dact, &mut grad.hidden, dx);
    }

    /// Smallest hidden pre-activation magnitude; small values mean a finite
    /// difference probe may straddle the rectifier kink.
    pub fn kink_margin(cache: &MlpCache) -> f64 {
        cache.pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl Parameters for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.hidden.visit(f);
        self.output.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.hidden.visit_mut(f);
        self.output.visit_mut(f);
    }
}
