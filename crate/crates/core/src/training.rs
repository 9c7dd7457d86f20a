//! Loss, optimizer, learning-rate schedule, and the training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize, Dataset, NormalizerState};
use crate::disentangle::{dr_loss, DrConfig};
use crate::error::{Error, Result};
use crate::factorization::{Dsfnet, NetParams};
use crate::scenario_aware::Mode;
use crate::tensor::{sigmoid, Matrix, Parameters};

/// Binary cross-entropy on a logit, in the overflow-free form
/// `max(ℓ, 0) − ℓ y + log(1 + e^{−|ℓ|})`. Returns the loss and `∂/∂ℓ`.
pub fn bce_loss(logit: f64, label: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - label)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub base_lr: f64,
    pub decay_rate: f64,
    pub decay_steps: usize,
    pub dr: DrConfig,
    pub seed: u64,
    /// Trace rows are recorded every this many steps, and at the last step.
    pub log_every: usize,
    /// Checkpoint callback period in steps; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            total_steps: 20_000,
            base_lr: 1e-3,
            decay_rate: 0.98,
            decay_steps: 2_000,
            dr: DrConfig::default(),
            seed: 1,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return fail(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate));
        }
        if self.decay_steps == 0 {
            return fail("decay_steps must be positive".into());
        }
        if self.log_every == 0 {
            return fail("log_every must be positive".into());
        }
        self.dr.validate()
    }

    /// `base_lr · decay_rate^(step / decay_steps)` with a continuous exponent.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.base_lr * self.decay_rate.powf(step as f64 / self.decay_steps as f64)
    }
}

/// Adam moments over the flat parameter layout of [`Parameters`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(num_params: usize) -> Self {
        OptState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Loss components of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    /// Unscaled regularizer of the configured variant.
    pub dr: f64,
    /// Angle-form diagnostics summed over layers.
    pub ncr: f64,
    pub cnc: f64,
    pub total: f64,
}

/// Loss and gradient on one normalized batch. Returns the forward trace too,
/// so the caller can fold SABN batch statistics into the model.
pub fn loss_and_grad(
    model: &Dsfnet,
    x: &Matrix,
    s: &Matrix,
    labels: &[f64],
    dr: &DrConfig,
    mode: Mode,
) -> Result<(LossBreakdown, NetParams, crate::factorization::BatchTrace)> {
    let trace = model.forward_batch(x, s, mode, None)?;
    let b = labels.len() as f64;
    let mut bce = 0.0;
    let mut dlogits = Vec::with_capacity(labels.len());
    for (&l, &y) in trace.logits.iter().zip(labels) {
        let (loss, g) = bce_loss(l, y);
        bce += loss / b;
        dlogits.push(g / b);
    }
    let mut grads = model.params.zeros_like();
    model.backward(&trace, &dlogits, &mut grads, false);
    let reg = dr_loss(&model.params.bank, dr)?;
    if dr.lambda != 0.0 {
        for (gl, rl) in grads.bank.layers.iter_mut().zip(&reg.grads.layers) {
            for (g, r) in gl.weights.iter_mut().zip(&rl.weights) {
                g.axpy(dr.lambda, r);
            }
        }
    }
    let breakdown = LossBreakdown {
        bce,
        dr: reg.value,
        ncr: reg.ncr,
        cnc: reg.cnc,
        total: bce + dr.lambda * reg.value,
    };
    Ok((breakdown, grads, trace))
}

/// `mean BCE + λ · L_DR` on one normalized batch, without gradients.
pub fn total_loss(model: &Dsfnet, x: &Matrix, s: &Matrix, labels: &[f64], dr: &DrConfig, mode: Mode) -> Result<f64> {
    Ok(loss_and_grad(model, x, s, labels, dr, mode)?.0.total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lbce: f64,
    pub lncr: f64,
    pub lcnc: f64,
    pub lr: f64,
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "lbce", "lncr", "lcnc", "lr"])
        .map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.lbce.to_string(),
            r.lncr.to_string(),
            r.lcnc.to_string(),
            r.lr.to_string(),
        ])
        .map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to score new data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub step: usize,
    pub model: Dsfnet,
    pub normalizer: NormalizerState,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let version = probe.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersion(version));
        }
        Ok(serde_json::from_value(probe)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A model with its input normalizer, as it evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Dsfnet,
    pub normalizer: NormalizerState,
    pub opt: OptState,
    pub step: usize,
}

pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub final_loss: LossBreakdown,
}

/// Epoch-wise shuffled batches drawn without replacement. A partial tail
/// batch is dropped and the next epoch starts.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
            batch,
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += self.batch;
        &self.order[self.pos - self.batch..self.pos]
    }
}

impl Trainer {
    pub fn new(model: Dsfnet) -> Self {
        let normalizer = NormalizerState::new(model.config.feature_dim, model.config.scenario_dim);
        let opt = OptState::new(model.params.num_params());
        Trainer {
            model,
            normalizer,
            opt,
            step: 0,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            step: self.step,
            model: self.model.clone(),
            normalizer: self.normalizer.clone(),
        }
    }

    /// Runs `cfg.total_steps` Adam updates. `on_checkpoint` is called every
    /// `cfg.checkpoint_every` steps and after the last one.
    pub fn train(
        &mut self,
        data: &Dataset,
        cfg: &TrainConfig,
        mut on_checkpoint: Option<&mut dyn FnMut(&Checkpoint) -> Result<()>>,
    ) -> Result<TrainOutcome> {
        cfg.validate()?;
        if data.len() < cfg.batch_size {
            return Err(Error::Config(format!(
                "dataset has {} rows, fewer than batch_size {}",
                data.len(),
                cfg.batch_size
            )));
        }
        if data.feature_dim() != self.model.config.feature_dim || data.scenario_dim() != self.model.config.scenario_dim {
            return Err(Error::shape(
                "training data",
                format!("x {}, s {}", self.model.config.feature_dim, self.model.config.scenario_dim),
                format!("x {}, s {}", data.feature_dim(), data.scenario_dim()),
            ));
        }
        let mut sampler = BatchSampler::new(data.len(), cfg.batch_size, cfg.seed);
        let labels = data.labels_f64();
        let mut trace = Vec::new();
        let mut last = LossBreakdown::default();
        let mut params = self.model.params.flatten();
        let mut xb = Matrix::zeros(cfg.batch_size, data.feature_dim());
        let mut sb = Matrix::zeros(cfg.batch_size, data.scenario_dim());
        let mut yb = vec![0.0; cfg.batch_size];
        for t in 0..cfg.total_steps {
            let idx = sampler.next();
            for (r, &i) in idx.iter().enumerate() {
                xb.row_mut(r).copy_from_slice(data.x.row(i));
                sb.row_mut(r).copy_from_slice(data.s.row(i));
                yb[r] = labels[i];
            }
            let (x, s) = normalize(&mut self.normalizer, &xb, &sb, Mode::Train);
            let (loss, grads, fwd) = loss_and_grad(&self.model, &x, &s, &yb, &cfg.dr, Mode::Train)?;
            if !loss.total.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    loss: loss.total,
                });
            }
            self.model.absorb_batch_stats(&fwd);
            let lr = cfg.lr_at(self.step);
            self.opt.update(&mut params, &grads.flatten(), lr);
            // Moving statistics live outside the parameter layout and stay intact.
            self.model.params.load_flat(&params);
            if t % cfg.log_every == 0 || t + 1 == cfg.total_steps {
                let row = TraceRow {
                    step: self.step,
                    lbce: loss.bce,
                    lncr: loss.ncr,
                    lcnc: loss.cnc,
                    lr,
                };
                log::debug!(
                    "step {} bce {:.5} ncr {:.3e} cnc {:.3e} lr {:.3e}",
                    row.step,
                    row.lbce,
                    row.lncr,
                    row.lcnc,
                    row.lr
                );
                trace.push(row);
            }
            self.step += 1;
            last = loss;
            if let Some(cb) = on_checkpoint.as_mut() {
                if cfg.checkpoint_every > 0 && self.step % cfg.checkpoint_every == 0 {
                    cb(&self.checkpoint())?;
                }
            }
        }
        if let Some(cb) = on_checkpoint.as_mut() {
            if cfg.checkpoint_every == 0 || self.step % cfg.checkpoint_every != 0 {
                cb(&self.checkpoint())?;
            }
        }
        Ok(TrainOutcome { trace, final_loss: last })
    }
}

/// Trains a fresh trainer around `model`; see [`Trainer::train`].
pub fn train(model: Dsfnet, data: &Dataset, cfg: &TrainConfig) -> Result<(Trainer, TrainOutcome)> {
    let mut trainer = Trainer::new(model);
    let outcome = trainer.train(data, cfg, None)?;
    Ok((trainer, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disentangle::{equiangular_frame, DrVariant};
    use crate::evalkit::{auc, score};
    use crate::factorization::ModelConfig;
    use crate::tensor::grad_check;
    use rand::Rng;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.0, 1.0).0 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(50.0, 1.0).0 < 1e-20);
        assert!((bce_loss(-1.5, 0.0).0 - (1.0 + (-1.5f64).exp()).ln()).abs() < 1e-15);
        assert!((bce_loss(-1.5, 0.0).0 - 0.2014).abs() < 1e-4);
        assert!(bce_loss(-800.0, 1.0).0.is_finite());
        for (l, y) in [(0.3, 1.0), (-2.0, 0.0), (4.0, 0.0)] {
            let err = grad_check(|p| bce_loss(p[0], y).0, &[l], &[bce_loss(l, y).1], 1e-5).unwrap();
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig {
            decay_steps: 10_000,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 0.001);
        assert!((cfg.lr_at(10_000) - 0.00098).abs() < 1e-15);
        assert!((cfg.lr_at(20_000) - 0.0009604).abs() < 1e-15);
        assert!(cfg.lr_at(5_000) < 0.001 && cfg.lr_at(5_000) > 0.00098);
    }

    #[test]
    fn adam_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p0: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..3).map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut p = p0.clone();
        let mut opt = OptState::new(7);
        for g in &grads {
            opt.update(&mut p, g, 0.01);
        }
        for i in 0..7 {
            let (mut m, mut v, mut x) = (0.0, 0.0, p0[i]);
            for (t, g) in grads.iter().enumerate() {
                let t = t as i32 + 1;
                m = 0.9 * m + 0.1 * g[i];
                v = 0.999 * v + 0.001 * g[i] * g[i];
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
            assert!((x - p[i]).abs() < 1e-12);
        }
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize, dx: usize, ds: usize) -> (Matrix, Matrix, Vec<f64>) {
        let x = Matrix::from_vec(n, dx, (0..n * dx).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let s = Matrix::from_vec(n, ds, (0..n * ds).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..n).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
        (x, s, y)
    }

    #[test]
    fn total_loss_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Dsfnet::new(ModelConfig::dsfnet(5, 3, 3), &mut rng).unwrap();
        let (x, s, y) = batch(&mut rng, 16, 5, 3);
        let none = DrConfig {
            lambda: 0.0,
            ..DrConfig::default()
        };
        let (l0, _, trace) = loss_and_grad(&model, &x, &s, &y, &none, Mode::Train).unwrap();
        let mean_bce: f64 = trace.logits.iter().zip(&y).map(|(&l, &t)| bce_loss(l, t).0).sum::<f64>() / 16.0;
        assert!((l0.total - mean_bce).abs() < 1e-15);

        let cfg = DrConfig::default();
        let t = total_loss(&model, &x, &s, &y, &cfg, Mode::Train).unwrap();
        let reg = dr_loss(&model.params.bank, &cfg).unwrap().value;
        assert!(reg > 0.0);
        assert!((t - (mean_bce + 0.01 * reg)).abs() < 1e-14);
    }

    #[test]
    fn total_loss_at_fixed_point_is_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = ModelConfig::dsfnet(3, 2, 3);
        cfg.hidden = vec![2];
        let mut model = Dsfnet::new(cfg, &mut rng).unwrap();
        let e3 = equiangular_frame(3, 3).unwrap().vectors();
        let e2 = equiangular_frame(3, 2).unwrap().vectors();
        for (layer, frame) in model.params.bank.layers.iter_mut().zip([&e3, &e2]) {
            for (w, v) in layer.weights.iter_mut().zip(frame) {
                for r in 0..w.rows() {
                    w.row_mut(r).copy_from_slice(v);
                }
            }
        }
        let (x, s, y) = batch(&mut rng, 8, 3, 2);
        let dr = DrConfig::default();
        let (l, _, _) = loss_and_grad(&model, &x, &s, &y, &dr, Mode::Train).unwrap();
        assert!(l.dr < 1e-18);
        assert!((l.total - l.bce).abs() < 1e-18);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let model = Dsfnet::new(ModelConfig::dsfnet(4, 3, 3), &mut rng).unwrap();
            let (x, s, y) = batch(&mut rng, 6, 4, 3);
            let dr = DrConfig {
                lambda: 0.5,
                ..DrConfig::default()
            };
            let (_, grads, trace) = loss_and_grad(&model, &x, &s, &y, &dr, Mode::Train).unwrap();
            if trace.kink_margin() < 1e-3 {
                continue;
            }
            let p = model.params.flatten();
            let err = grad_check(
                |q| {
                    let mut m = model.clone();
                    m.params.load_flat(q);
                    total_loss(&m, &x, &s, &y, &dr, Mode::Train).unwrap()
                },
                &p,
                &grads.flatten(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn full_batch_descent_is_monotone_on_a_convex_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut cfg = ModelConfig::vanilla_mlp(4, 2);
        cfg.hidden = vec![];
        cfg.use_sabn = false;
        cfg.use_saff = false;
        let mut model = Dsfnet::new(cfg, &mut rng).unwrap();
        let (x, s, y) = batch(&mut rng, 64, 4, 2);
        let dr = DrConfig {
            lambda: 0.0,
            variant: DrVariant::None,
            ..DrConfig::default()
        };
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let (l, g, _) = loss_and_grad(&model, &x, &s, &y, &dr, Mode::Train).unwrap();
            assert!(l.total <= prev + 1e-10);
            prev = l.total;
            let mut p = model.params.flatten();
            for (pi, gi) in p.iter_mut().zip(g.flatten()) {
                *pi -= 0.05 * gi;
            }
            model.params.load_flat(&p);
        }
    }

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::empty(2, 3);
        let mut x = Vec::new();
        let mut s = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let margin = if label == 1 { 1.0 } else { -1.0 };
            let a: f64 = rng.gen_range(0.2..2.0) * margin;
            x.extend([a, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            s.extend([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            d.labels.push(label);
            d.group_ids.push(i as u64 / 2);
            d.scenario_ids.push(0);
        }
        d.x = Matrix::from_vec(n, 3, x).unwrap();
        d.s = Matrix::from_vec(n, 2, s).unwrap();
        d
    }

    #[test]
    fn zero_steps_leave_the_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Dsfnet::new(ModelConfig::dsfnet(3, 2, 2), &mut rng).unwrap();
        let cfg = TrainConfig {
            total_steps: 0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (trainer, out) = train(model.clone(), &separable(40, 1), &cfg).unwrap();
        assert_eq!(trainer.model, model);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn separable_set_is_learned_and_runs_repeat() {
        let data = separable(2000, 4);
        let cfg = TrainConfig {
            total_steps: 2_000,
            batch_size: 64,
            seed: 3,
            ..TrainConfig::default()
        };
        let build = || Dsfnet::new(ModelConfig::dsfnet(3, 2, 2), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut ckpts = Vec::new();
        let mut trainer = Trainer::new(build());
        let mut record = |c: &Checkpoint| {
            ckpts.push(c.to_json()?);
            Ok(())
        };
        let out = trainer
            .train(
                &data,
                &TrainConfig {
                    checkpoint_every: 500,
                    ..cfg.clone()
                },
                Some(&mut record),
            )
            .unwrap();
        assert_eq!(ckpts.len(), 4);
        let scores = score(&trainer.model, &trainer.normalizer, &data).unwrap();
        let a = auc(&scores, &data.labels).unwrap();
        assert!(a > 0.99, "train AUC {a}");
        assert_eq!(out.trace.len(), 21);

        let (again, out2) = train(build(), &data, &cfg).unwrap();
        assert_eq!(again.checkpoint().to_json().unwrap(), *ckpts.last().unwrap());
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        write_trace(&out.trace, &mut t1).unwrap();
        write_trace(&out2.trace, &mut t2).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn divergence_is_reported_with_the_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Dsfnet::new(ModelConfig::dsfnet(3, 2, 2), &mut rng).unwrap();
        let mut data = separable(40, 2);
        data.x.as_mut_slice()[0] = f64::NAN;
        let cfg = TrainConfig {
            total_steps: 10,
            batch_size: 40,
            ..TrainConfig::default()
        };
        let r = train(model, &data, &cfg).map(|_| ());
        assert!(matches!(r, Err(Error::Diverged { step: 0, .. })), "{r:?}");
    }

    #[test]
    fn checkpoint_round_trip_and_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Dsfnet::new(ModelConfig::dsfnet(3, 2, 2), &mut rng).unwrap();
        let ck = Trainer::new(model).checkpoint();
        let text = ck.to_json().unwrap();
        assert_eq!(Checkpoint::from_json(&text).unwrap(), ck);
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::FormatVersion(2))));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 1, ..ok.clone() },
            TrainConfig { base_lr: 0.0, ..ok.clone() },
            TrainConfig { decay_rate: 1.5, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
