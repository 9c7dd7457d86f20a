//! Scenario factorization: per-layer banks of factor parameters mixed by
//! sigmoid gates computed from the scenario vector.
//!
//! Layer `l` uses `W(s) = Σᵢ αᵢ(s) W̃ᵢ` and `b(s) = Σᵢ αᵢ(s) b̃ᵢ`. One gating
//! network serves every layer, so a forward pass computes the gates once per
//! sample.

mod network;

pub use network::{BatchTrace, Dsfnet, LayerCache, NetParams};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{glorot_fill, Mlp, MlpCache};
use crate::tensor::{sigmoid, Matrix, Parameters, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Which network family a config describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Factorized layers gated by the scenario; only `x` enters the layer stack.
    Dsfnet,
    /// Reference MLP over `concat(x, s)` with a single ungated parameter set.
    VanillaMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Number of factor scenario learners `N`.
    pub factors: usize,
    pub feature_dim: usize,
    pub scenario_dim: usize,
    pub hidden: Vec<usize>,
    pub gate_hidden: usize,
    pub rescale_hidden: usize,
    pub activation: Activation,
    pub use_sabn: bool,
    pub use_saff: bool,
    pub sabn_momentum: f64,
    pub sabn_eps: f64,
}

impl ModelConfig {
    /// Desk-scale DSFNet with `factors` learners and hidden widths 32/16.
    pub fn dsfnet(feature_dim: usize, scenario_dim: usize, factors: usize) -> Self {
        ModelConfig {
            architecture: Architecture::Dsfnet,
            factors,
            feature_dim,
            scenario_dim,
            hidden: vec![32, 16],
            gate_hidden: 32,
            rescale_hidden: 16,
            activation: Activation::Relu,
            use_sabn: true,
            use_saff: true,
            sabn_momentum: crate::scenario_aware::DEFAULT_MOMENTUM,
            sabn_eps: crate::scenario_aware::DEFAULT_EPS,
        }
    }

    /// Production geometry: seven learners, hidden widths 256/128/64/32.
    pub fn production_scale(feature_dim: usize, scenario_dim: usize) -> Self {
        ModelConfig {
            factors: 7,
            hidden: vec![256, 128, 64, 32],
            ..ModelConfig::dsfnet(feature_dim, scenario_dim, 7)
        }
    }

    /// The reference MLP with the same hidden widths and no scenario machinery.
    pub fn vanilla_mlp(feature_dim: usize, scenario_dim: usize) -> Self {
        ModelConfig {
            architecture: Architecture::VanillaMlp,
            factors: 1,
            use_sabn: false,
            use_saff: false,
            ..ModelConfig::dsfnet(feature_dim, scenario_dim, 1)
        }
    }

    pub fn input_width(&self) -> usize {
        match self.architecture {
            Architecture::Dsfnet => self.feature_dim,
            Architecture::VanillaMlp => self.feature_dim + self.scenario_dim,
        }
    }

    /// Widths from the input through every hidden layer to the single logit.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_width());
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn is_gated(&self) -> bool {
        self.architecture == Architecture::Dsfnet
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.factors == 0 {
            return fail("factors must be at least 1".into());
        }
        if self.architecture == Architecture::VanillaMlp && self.factors != 1 {
            return fail("the vanilla MLP uses exactly one parameter set".into());
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if self.is_gated() && self.scenario_dim == 0 {
            return fail("scenario_dim must be positive for a gated model".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return fail("hidden widths must be positive".into());
        }
        if self.gate_hidden == 0 || self.rescale_hidden == 0 {
            return fail("gate_hidden and rescale_hidden must be positive".into());
        }
        if self.use_sabn && self.scenario_dim == 0 {
            return fail("SABN needs a scenario vector".into());
        }
        if !(self.sabn_momentum >= 0.0 && self.sabn_momentum < 1.0) {
            return fail(format!("sabn_momentum {} outside [0, 1)", self.sabn_momentum));
        }
        if !(self.sabn_eps > 0.0) {
            return fail("sabn_eps must be positive".into());
        }
        Ok(())
    }
}

/// The `N` factor weight matrices and bias vectors of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorLayer {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl FactorLayer {
    pub fn zeros(factors: usize, input: usize, output: usize) -> Self {
        FactorLayer {
            weights: vec![Matrix::zeros(output, input); factors],
            biases: vec![Vector::zeros(output); factors],
        }
    }

    pub fn factors(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[0].rows()
    }
}

impl Parameters for FactorLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.weights.visit(f);
        self.biases.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.weights.visit_mut(f);
        self.biases.visit_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorBank {
    pub layers: Vec<FactorLayer>,
}

impl FactorBank {
    pub fn zeros(factors: usize, layer_dims: &[usize]) -> Self {
        FactorBank {
            layers: layer_dims
                .windows(2)
                .map(|w| FactorLayer::zeros(factors, w[0], w[1]))
                .collect(),
        }
    }

    /// Independent Glorot-uniform draws per factor, zero biases.
    pub fn glorot<R: Rng + ?Sized>(factors: usize, layer_dims: &[usize], rng: &mut R) -> Self {
        let mut bank = FactorBank::zeros(factors, layer_dims);
        for layer in &mut bank.layers {
            for w in &mut layer.weights {
                glorot_fill(w, rng);
            }
        }
        bank
    }

    pub fn factors(&self) -> usize {
        self.layers.first().map_or(0, FactorLayer::factors)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

impl Parameters for FactorBank {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.layers.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.layers.visit_mut(f);
    }
}

/// Gate values `α ∈ (0,1)^N`, or an arbitrary override vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GateVector {
    pub alpha: Vec<f64>,
    pub overridden: bool,
}

impl GateVector {
    pub fn override_with(alpha: Vec<f64>) -> Self {
        GateVector {
            alpha,
            overridden: true,
        }
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut alpha = vec![0.0; n];
        alpha[i] = 1.0;
        GateVector::override_with(alpha)
    }
}

/// `s -> sigmoid(MLP(s))`, shared by every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingNet {
    pub mlp: Mlp,
}

impl GatingNet {
    pub fn new<R: Rng + ?Sized>(scenario_dim: usize, hidden: usize, factors: usize, rng: &mut R) -> Self {
        GatingNet {
            mlp: Mlp::glorot(scenario_dim, hidden, factors, rng),
        }
    }

    pub fn factors(&self) -> usize {
        self.mlp.output_dim()
    }

    pub(crate) fn forward_cached(&self, s: &[f64]) -> (Vec<f64>, MlpCache) {
        let (logits, cache) = self.mlp.forward(s);
        (logits.into_iter().map(sigmoid).collect(), cache)
    }
}

impl Parameters for GatingNet {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.mlp.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.mlp.visit_mut(f);
    }
}

pub fn compute_gates(gnet: &GatingNet, s: &[f64]) -> Result<GateVector> {
    if s.len() != gnet.mlp.input_dim() {
        return Err(Error::shape("compute_gates", gnet.mlp.input_dim(), s.len()));
    }
    Ok(GateVector {
        alpha: gnet.forward_cached(s).0,
        overridden: false,
    })
}

/// Gate-weighted sum of one layer's factor weights and biases.
pub fn compose_layer(bank: &FactorBank, layer: usize, gates: &GateVector) -> Result<(Matrix, Vector)> {
    let fl = bank
        .layers
        .get(layer)
        .ok_or_else(|| Error::shape("compose_layer", format!("layer < {}", bank.num_layers()), layer))?;
    if gates.alpha.len() != fl.factors() {
        return Err(Error::shape("compose_layer", fl.factors(), gates.alpha.len()));
    }
    let mut w = Matrix::zeros(fl.output_dim(), fl.input_dim());
    let mut b = Vector::zeros(fl.output_dim());
    for ((wi, bi), &a) in fl.weights.iter().zip(&fl.biases).zip(&gates.alpha) {
        w.axpy(a, wi);
        for (acc, v) in b.iter_mut().zip(bi.iter()) {
            *acc += a * v;
        }
    }
    Ok((w, b))
}
