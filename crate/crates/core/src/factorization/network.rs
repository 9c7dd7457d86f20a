use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, FactorBank, GatingNet, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache};
use crate::scenario_aware::{Mode, SabnCache, SabnState, SaffCache, SaffNet};
use crate::tensor::{dot, Matrix, Parameters};

/// Every trainable tensor of a model, plus the SABN moving statistics that
/// travel with their layers. Gradients use the same type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub saff: Option<SaffNet>,
    pub gating: Option<GatingNet>,
    pub bank: FactorBank,
    /// One entry per hidden layer when SABN is enabled, otherwise empty.
    pub sabn: Vec<SabnState>,
}

impl Parameters for NetParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.saff.visit(f);
        self.gating.visit(f);
        self.bank.visit(f);
        self.sabn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.saff.visit_mut(f);
        self.gating.visit_mut(f);
        self.bank.visit_mut(f);
        self.sabn.visit_mut(f);
    }
}

impl NetParams {
    pub fn zeros_like(&self) -> NetParams {
        let mut g = self.clone();
        g.fill_zero();
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dsfnet {
    pub config: ModelConfig,
    pub params: NetParams,
}

#[derive(Clone, Debug)]
pub struct LayerCache {
    pub input: Matrix,
    /// `W̃ᵢ h + b̃ᵢ` per factor, each `batch × width`.
    pub factor_out: Vec<Matrix>,
    /// Hidden layers: the activation input (after SABN when enabled).
    pub pre_act: Option<Matrix>,
    pub sabn: Option<SabnCache>,
}

/// Forward-pass record consumed by [`Dsfnet::backward`].
#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub logits: Vec<f64>,
    /// Gates used for each sample, `batch × N`.
    pub gates: Matrix,
    /// Number of gating-network evaluations performed (one per sample at most).
    pub gate_evaluations: usize,
    pub mode: Mode,
    overridden: bool,
    gate_caches: Vec<MlpCache>,
    saff_caches: Vec<SaffCache>,
    pub layers: Vec<LayerCache>,
}

impl BatchTrace {
    /// Smallest distance of any rectifier input from its kink.
    pub fn kink_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for c in &self.gate_caches {
            m = m.min(Mlp::kink_margin(c));
        }
        for layer in &self.layers {
            if let Some(p) = &layer.pre_act {
                m = p.as_slice().iter().fold(m, |acc, v| acc.min(v.abs()));
            }
            if let Some(sc) = &layer.sabn {
                for c in sc.gamma_caches.iter().chain(&sc.beta_caches) {
                    m = m.min(Mlp::kink_margin(c));
                }
            }
        }
        m
    }

    /// Batch moments for each SABN layer (train mode only).
    pub fn sabn_caches(&self) -> impl Iterator<Item = &SabnCache> {
        self.layers.iter().filter_map(|l| l.sabn.as_ref())
    }
}

impl Dsfnet {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        let bank = FactorBank::glorot(config.factors, &dims, rng);
        let gating = config
            .is_gated()
            .then(|| GatingNet::new(config.scenario_dim, config.gate_hidden, config.factors, rng));
        let sabn = if config.use_sabn {
            config
                .hidden
                .iter()
                .map(|&w| {
                    let mut st = SabnState::new(config.scenario_dim, config.rescale_hidden, w, rng);
                    st.momentum = config.sabn_momentum;
                    st.eps = config.sabn_eps;
                    st
                })
                .collect()
        } else {
            Vec::new()
        };
        let saff = config
            .use_saff
            .then(|| SaffNet::new(config.feature_dim, config.scenario_dim, rng));
        Ok(Dsfnet {
            config,
            params: NetParams {
                saff,
                gating,
                bank,
                sabn,
            },
        })
    }

    pub fn factors(&self) -> usize {
        self.config.factors
    }

    fn check_inputs(&self, x: &Matrix, s: &Matrix) -> Result<()> {
        if x.cols() != self.config.feature_dim {
            return Err(Error::shape("forward", format!("{} features", self.config.feature_dim), x.cols()));
        }
        if s.cols() != self.config.scenario_dim {
            return Err(Error::shape(
                "forward",
                format!("{} scenario dims", self.config.scenario_dim),
                s.cols(),
            ));
        }
        if s.rows() != x.rows() {
            return Err(Error::shape("forward", format!("{} scenario rows", x.rows()), s.rows()));
        }
        Ok(())
    }

    /// Runs a batch through the network without mutating any state.
    ///
    /// `x` holds normalized features and `s` normalized scenario vectors, one
    /// sample per row. `gate_override` replaces the computed gates for every
    /// sample.
    pub fn forward_batch(&self, x: &Matrix, s: &Matrix, mode: Mode, gate_override: Option<&[f64]>) -> Result<BatchTrace> {
        self.check_inputs(x, s)?;
        let cfg = &self.config;
        let n = cfg.factors;
        let batch = x.rows();
        if let Some(o) = gate_override {
            if o.len() != n {
                return Err(Error::shape("gate override", n, o.len()));
            }
        }

        // Gates: computed once per sample and reused by every layer.
        let mut gates = Matrix::zeros(batch, n);
        let mut gate_caches = Vec::new();
        let mut gate_evaluations = 0;
        for b in 0..batch {
            match (gate_override, &self.params.gating) {
                (Some(o), _) => gates.row_mut(b).copy_from_slice(o),
                (None, Some(g)) => {
                    let (alpha, cache) = g.forward_cached(s.row(b));
                    gate_evaluations += 1;
                    gates.row_mut(b).copy_from_slice(&alpha);
                    gate_caches.push(cache);
                }
                (None, None) => gates.row_mut(b).iter_mut().for_each(|a| *a = 1.0),
            }
        }

        let mut saff_caches = Vec::new();
        let width0 = cfg.input_width();
        let mut h = Matrix::zeros(batch, width0);
        for b in 0..batch {
            let row = h.row_mut(b);
            match &self.params.saff {
                Some(net) => {
                    let (filtered, cache) = net.forward(x.row(b), s.row(b))?;
                    row[..cfg.feature_dim].copy_from_slice(&filtered);
                    saff_caches.push(cache);
                }
                None => row[..cfg.feature_dim].copy_from_slice(x.row(b)),
            }
            if cfg.architecture == Architecture::VanillaMlp {
                row[cfg.feature_dim..].copy_from_slice(s.row(b));
            }
        }

        let num_layers = self.params.bank.num_layers();
        let mut layers = Vec::with_capacity(num_layers);
        for (l, fl) in self.params.bank.layers.iter().enumerate() {
            let width = fl.output_dim();
            let mut factor_out = Vec::with_capacity(n);
            let mut z = Matrix::zeros(batch, width);
            for (i, (w, bias)) in fl.weights.iter().zip(&fl.biases).enumerate() {
                let mut out = Matrix::zeros(batch, width);
                for b in 0..batch {
                    let a = gates[(b, i)];
                    let row = out.row_mut(b);
                    w.matvec_into(h.row(b), row);
                    for (o, bv) in row.iter_mut().zip(bias.iter()) {
                        *o += bv;
                    }
                    for (zz, o) in z.row_mut(b).iter_mut().zip(out.row(b)) {
                        *zz += a * o;
                    }
                }
                factor_out.push(out);
            }
            let hidden = l + 1 < num_layers;
            if hidden {
                let (pre_act, sabn) = match self.params.sabn.get(l) {
                    Some(state) => {
                        let (out, cache) = state.forward_pure(&z, s, mode)?;
                        (out, Some(cache))
                    }
                    None => (z, None),
                };
                let mut next = pre_act.clone();
                next.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = cfg.activation.apply(*v));
                layers.push(LayerCache {
                    input: std::mem::replace(&mut h, next),
                    factor_out,
                    pre_act: Some(pre_act),
                    sabn,
                });
            } else {
                layers.push(LayerCache {
                    input: std::mem::replace(&mut h, z),
                    factor_out,
                    pre_act: None,
                    sabn: None,
                });
            }
        }
        let logits = (0..batch).map(|b| h[(b, 0)]).collect();
        Ok(BatchTrace {
            logits,
            gates,
            gate_evaluations,
            mode,
            overridden: gate_override.is_some(),
            gate_caches,
            saff_caches,
            layers,
        })
    }

    /// Logit for a single sample.
    pub fn forward(&self, x: &[f64], s: &[f64], mode: Mode, gate_override: Option<&[f64]>) -> Result<f64> {
        let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let sm = Matrix::from_vec(1, s.len(), s.to_vec())?;
        Ok(self.forward_batch(&xm, &sm, mode, gate_override)?.logits[0])
    }

    /// Eval-mode logits, one per row.
    pub fn predict(&self, x: &Matrix, s: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward_batch(x, s, Mode::Eval, None)?.logits)
    }

    /// Folds the batch moments recorded in a train-mode trace into the
    /// SABN moving statistics.
    pub fn absorb_batch_stats(&mut self, trace: &BatchTrace) {
        for (state, layer) in self.params.sabn.iter_mut().zip(&trace.layers) {
            if let Some(cache) = &layer.sabn {
                state.absorb(cache);
            }
        }
    }

    /// Backpropagates `dlogits` (one per sample) through the trace.
    ///
    /// Parameter gradients accumulate into `grads`. When `input_grad` is set,
    /// returns the gradient with respect to the normalized features `x`.
    pub fn backward(&self, trace: &BatchTrace, dlogits: &[f64], grads: &mut NetParams, input_grad: bool) -> Option<Matrix> {
        let cfg = &self.config;
        let batch = trace.logits.len();
        let n = cfg.factors;
        let mut dalpha = Matrix::zeros(batch, n);
        let mut dh = Matrix::from_vec(batch, 1, dlogits.to_vec()).expect("one logit per sample");

        for (l, cache) in trace.layers.iter().enumerate().rev() {
            let dz = match &cache.pre_act {
                Some(pre) => {
                    let mut da = dh;
                    for (d, &p) in da.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                        *d *= cfg.activation.derivative(p);
                    }
                    match (&cache.sabn, self.params.sabn.get(l)) {
                        (Some(sc), Some(state)) => state.backward(sc, &da, &mut grads.sabn[l].nets),
                        _ => da,
                    }
                }
                None => dh,
            };
            let fl = &self.params.bank.layers[l];
            let gl = &mut grads.bank.layers[l];
            let need_dinput = l > 0 || input_grad || self.params.saff.is_some();
            let mut dinput = Matrix::zeros(batch, fl.input_dim());
            let mut scaled = vec![0.0; fl.output_dim()];
            for b in 0..batch {
                let dzb = dz.row(b);
                let hb = cache.input.row(b);
                for i in 0..n {
                    let a = trace.gates[(b, i)];
                    dalpha[(b, i)] += dot(dzb, cache.factor_out[i].row(b));
                    if a == 0.0 {
                        continue;
                    }
                    gl.weights[i].add_outer(a, dzb, hb);
                    for (g, d) in gl.biases[i].iter_mut().zip(dzb) {
                        *g += a * d;
                    }
                    if need_dinput {
                        for (sv, d) in scaled.iter_mut().zip(dzb) {
                            *sv = a * d;
                        }
                        fl.weights[i].matvec_t_acc(&scaled, dinput.row_mut(b));
                    }
                }
            }
            dh = dinput;
        }

        if !trace.overridden {
            if let (Some(g), Some(gg)) = (&self.params.gating, grads.gating.as_mut()) {
                for (b, gc) in trace.gate_caches.iter().enumerate() {
                    let dlogit: Vec<f64> = (0..n)
                        .map(|i| {
                            let a = trace.gates[(b, i)];
                            dalpha[(b, i)] * a * (1.0 - a)
                        })
                        .collect();
                    g.mlp.backward(gc, &dlogit, &mut gg.mlp, None);
                }
            }
        }

        let d = cfg.feature_dim;
        let mut dx = input_grad.then(|| Matrix::zeros(batch, d));
        match (&self.params.saff, grads.saff.as_mut()) {
            (Some(net), Some(gs)) => {
                for (b, sc) in trace.saff_caches.iter().enumerate() {
                    let dout = &dh.row(b)[..d];
                    net.backward(sc, dout, gs, dx.as_mut().map(|m| m.row_mut(b)));
                }
            }
            _ => {
                if let Some(dx) = dx.as_mut() {
                    for b in 0..batch {
                        dx.row_mut(b).copy_from_slice(&dh.row(b)[..d]);
                    }
                }
            }
        }
        dx
    }
}
