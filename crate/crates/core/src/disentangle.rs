//! Angular regularizers over neuron centroids.
//!
//! Each factor weight matrix `W⁽ⁱ⁾` of a layer is summarized by its neuron
//! centroid `w̄⁽ⁱ⁾ = Σₖ wₖ⁽ⁱ⁾ / ‖Σₖ wₖ⁽ⁱ⁾‖`. The regularizers act on the angles
//! between centroids, and between individual neurons and centroids.
//!
//! Argmax and argmin selections are recomputed on every evaluation and held
//! fixed for the backward pass. Ties go to the lowest index.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::FactorBank;
use crate::tensor::{angle_grad, dot, norm, Matrix};

/// Row-sum norms below this are treated as degenerate.
pub const MIN_CENTROID_NORM: f64 = 1e-12;

/// `arccos(-1/(N-1))`, the common pairwise angle of `N` equiangular unit vectors.
pub fn tammes_angle(n: usize) -> f64 {
    (-1.0 / (n as f64 - 1.0)).acos()
}

/// Normalized centroids of one layer and their pairwise angles.
#[derive(Clone, Debug)]
pub struct CentroidSet {
    pub centroids: Vec<Vec<f64>>,
    /// Unnormalized row sums `Σₖ wₖ⁽ⁱ⁾`.
    pub sums: Vec<Vec<f64>>,
    pub sum_norms: Vec<f64>,
    /// Symmetric `N × N` angle matrix with zero diagonal.
    pub angles: Matrix,
    /// Neurons per factor (`M`).
    pub rows: usize,
}

impl CentroidSet {
    pub fn factors(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Chains per-centroid gradients through the normalization. Every neuron of
    /// factor `i` receives `(I - w̄ w̄ᵀ) g / ‖Σₖ wₖ‖`.
    fn backprop(&self, dc: &[Vec<f64>]) -> Vec<Matrix> {
        self.centroids
            .iter()
            .zip(dc)
            .zip(&self.sum_norms)
            .map(|((c, g), &s)| {
                let proj = dot(c, g);
                let row: Vec<f64> = g.iter().zip(c).map(|(gi, ci)| (gi - proj * ci) / s).collect();
                let mut m = Matrix::zeros(self.rows, row.len());
                for r in 0..self.rows {
                    m.row_mut(r).copy_from_slice(&row);
                }
                m
            })
            .collect()
    }
}

/// Centroids and pairwise angles of the factor weight matrices of one layer.
pub fn centroids(weights: &[Matrix]) -> Result<CentroidSet> {
    let first = weights.first().ok_or(Error::Config("centroids of an empty layer".into()))?;
    let shape = first.shape();
    let mut set = CentroidSet {
        centroids: Vec::with_capacity(weights.len()),
        sums: Vec::with_capacity(weights.len()),
        sum_norms: Vec::with_capacity(weights.len()),
        angles: Matrix::zeros(weights.len(), weights.len()),
        rows: shape.0,
    };
    for (i, w) in weights.iter().enumerate() {
        if w.shape() != shape {
            return Err(Error::shape("centroids", format!("{shape:?}"), format!("{:?}", w.shape())));
        }
        let sum = w.row_sum();
        let n = norm(&sum);
        if !(n >= MIN_CENTROID_NORM) {
            return Err(Error::DegenerateCentroid { factor: i, norm: n });
        }
        set.centroids.push(sum.iter().map(|v| v / n).collect());
        set.sums.push(sum);
        set.sum_norms.push(n);
    }
    let n = weights.len();
    for i in 0..n {
        for j in i + 1..n {
            let theta = angle_grad(&set.centroids[i], &set.centroids[j]).theta;
            set.angles.as_mut_slice()[i * n + j] = theta;
            set.angles.as_mut_slice()[j * n + i] = theta;
        }
    }
    Ok(set)
}

/// A loss value with its gradient for each factor weight matrix of the layer.
#[derive(Clone, Debug)]
pub struct RegTerm {
    pub value: f64,
    pub grads: Vec<Matrix>,
}

impl RegTerm {
    fn zero(c: &CentroidSet) -> Self {
        RegTerm {
            value: 0.0,
            grads: vec![Matrix::zeros(c.rows, c.dim()); c.factors()],
        }
    }
}

fn argmax_by(n: usize, skip: usize, mut key: impl FnMut(usize) -> f64) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for j in (0..n).filter(|&j| j != skip) {
        let v = key(j);
        if best == usize::MAX || v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

fn axpy(acc: &mut [f64], scale: f64, g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += scale * v;
    }
}

/// Neuron centroid repulsion: `(1/N) Σᵢ maxⱼ≠ᵢ (θ⁽ⁱʲ⁾ − arccos(−1/(N−1)))²`.
pub fn ncr_loss(c: &CentroidSet) -> RegTerm {
    let n = c.factors();
    let mut term = RegTerm::zero(c);
    if n < 2 {
        return term;
    }
    let target = tammes_angle(n);
    let mut dc = vec![vec![0.0; c.dim()]; n];
    for i in 0..n {
        let j = argmax_by(n, i, |j| (c.angles[(i, j)] - target).powi(2));
        let ag = angle_grad(&c.centroids[i], &c.centroids[j]);
        let dev = ag.theta - target;
        term.value += dev * dev / n as f64;
        let scale = 2.0 * dev / n as f64;
        axpy(&mut dc[i], scale, &ag.dtheta_du);
        axpy(&mut dc[j], scale, &ag.dtheta_dv);
    }
    term.grads = c.backprop(&dc);
    term
}

/// Minimum-angle adversarial loss `−(1/N) Σᵢ minⱼ≠ᵢ θ⁽ⁱʲ⁾`.
pub fn mma_loss(c: &CentroidSet) -> RegTerm {
    let n = c.factors();
    let mut term = RegTerm::zero(c);
    if n < 2 {
        return term;
    }
    let mut dc = vec![vec![0.0; c.dim()]; n];
    for i in 0..n {
        let j = argmax_by(n, i, |j| -c.angles[(i, j)]);
        let ag = angle_grad(&c.centroids[i], &c.centroids[j]);
        term.value -= ag.theta / n as f64;
        axpy(&mut dc[i], -1.0 / n as f64, &ag.dtheta_du);
        axpy(&mut dc[j], -1.0 / n as f64, &ag.dtheta_dv);
    }
    term.grads = c.backprop(&dc);
    term
}

/// `‖W̄ᵀW̄ − I‖²_F` over the centroid Gram matrix.
pub fn orth_loss(c: &CentroidSet) -> RegTerm {
    let n = c.factors();
    let mut term = RegTerm::zero(c);
    let mut dc = vec![vec![0.0; c.dim()]; n];
    for i in 0..n {
        for j in 0..n {
            let g = dot(&c.centroids[i], &c.centroids[j]) - if i == j { 1.0 } else { 0.0 };
            term.value += g * g;
            axpy(&mut dc[i], 4.0 * g, &c.centroids[j]);
        }
    }
    term.grads = c.backprop(&dc);
    term
}

/// How the contrastive hinge measures closeness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HingeForm {
    Angle,
    Cosine,
}

/// Gradients of one contrastive hinge with respect to the anchor and the two
/// centroids, or `None` when the hinge is inactive.
pub struct HingeGrad {
    pub value: f64,
    pub anchor: Vec<f64>,
    pub own: Vec<f64>,
    pub foreign: Vec<f64>,
}

/// `max(0, δ + θ⟨a, own⟩ − θ⟨a, foreign⟩)` in angle form, or
/// `max(0, cos⟨a, foreign⟩ − cos⟨a, own⟩ + 1 − cos δ)` in cosine form.
pub fn cnc_hinge(anchor: &[f64], own: &[f64], foreign: &[f64], delta: f64, form: HingeForm) -> Option<HingeGrad> {
    let pos = angle_grad(anchor, own);
    let neg = angle_grad(anchor, foreign);
    let (value, gp_a, gp_o, gn_a, gn_f) = match form {
        HingeForm::Angle => (
            delta + pos.theta - neg.theta,
            pos.dtheta_du,
            pos.dtheta_dv,
            neg.dtheta_du,
            neg.dtheta_dv,
        ),
        // The cosine form hinges on cos(neg) − cos(pos), so the roles swap.
        HingeForm::Cosine => (
            neg.cos - pos.cos + 1.0 - delta.cos(),
            neg.dcos_du,
            neg.dcos_dv,
            pos.dcos_du,
            pos.dcos_dv,
        ),
    };
    if !(value > 0.0) {
        return None;
    }
    let (anchor_grad, own_grad, foreign_grad) = match form {
        HingeForm::Angle => (
            gp_a.iter().zip(&gn_a).map(|(p, q)| p - q).collect(),
            gp_o,
            gn_f.iter().map(|v| -v).collect(),
        ),
        HingeForm::Cosine => (
            gp_a.iter().zip(&gn_a).map(|(p, q)| p - q).collect(),
            gn_f.iter().map(|v| -v).collect(),
            gp_o,
        ),
    };
    Some(HingeGrad {
        value,
        anchor: anchor_grad,
        own: own_grad,
        foreign: foreign_grad,
    })
}

/// Neuron-to-centroid selections used by the contrastive loss.
fn cnc_select(c: &CentroidSet, weights: &[Matrix], i: usize) -> (usize, usize) {
    let own = &c.centroids[i];
    let k = argmax_by(c.rows, usize::MAX, |k| angle_grad(weights[i].row(k), own).theta);
    let anchor = weights[i].row(k);
    let j = argmax_by(c.factors(), i, |j| -angle_grad(anchor, &c.centroids[j]).theta);
    (k, j)
}

fn cnc_generic(c: &CentroidSet, weights: &[Matrix], delta: f64, form: HingeForm) -> RegTerm {
    let n = c.factors();
    let mut term = RegTerm::zero(c);
    if n < 2 {
        return term;
    }
    let mut dc = vec![vec![0.0; c.dim()]; n];
    let mut direct = vec![vec![0.0; c.dim()]; n];
    let mut anchors = vec![0; n];
    for i in 0..n {
        let (k, j) = cnc_select(c, weights, i);
        anchors[i] = k;
        let Some(h) = cnc_hinge(weights[i].row(k), &c.centroids[i], &c.centroids[j], delta, form) else {
            continue;
        };
        term.value += h.value / n as f64;
        axpy(&mut direct[i], 1.0 / n as f64, &h.anchor);
        axpy(&mut dc[i], 1.0 / n as f64, &h.own);
        axpy(&mut dc[j], 1.0 / n as f64, &h.foreign);
    }
    term.grads = c.backprop(&dc);
    for i in 0..n {
        axpy(term.grads[i].row_mut(anchors[i]), 1.0, &direct[i]);
    }
    term
}

/// Contrastive neuron clustering in angle form.
pub fn cnc_loss(c: &CentroidSet, weights: &[Matrix], delta: f64) -> RegTerm {
    cnc_generic(c, weights, delta, HingeForm::Angle)
}

/// Contrastive neuron clustering on cosine similarities with margin `1 − cos δ`.
pub fn cnc_loss_cos(c: &CentroidSet, weights: &[Matrix], delta: f64) -> RegTerm {
    cnc_generic(c, weights, delta, HingeForm::Cosine)
}

/// Which regularizer combination is applied per layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrVariant {
    /// NCR plus angle-form CNC.
    Dr,
    MmaCnc,
    Ncr,
    NcrCnccos,
    Orth,
    None,
}

impl DrVariant {
    pub const ALL: [DrVariant; 6] = [
        DrVariant::Dr,
        DrVariant::MmaCnc,
        DrVariant::Ncr,
        DrVariant::NcrCnccos,
        DrVariant::Orth,
        DrVariant::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DrVariant::Dr => "dr",
            DrVariant::MmaCnc => "mma_cnc",
            DrVariant::Ncr => "ncr",
            DrVariant::NcrCnccos => "ncr_cnccos",
            DrVariant::Orth => "orth",
            DrVariant::None => "none",
        }
    }
}

impl fmt::Display for DrVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DrVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DrVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regularizer variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrConfig {
    pub lambda: f64,
    pub kappa: f64,
    pub variant: DrVariant,
}

impl Default for DrConfig {
    fn default() -> Self {
        DrConfig {
            lambda: 0.01,
            kappa: 1.75,
            variant: DrVariant::Dr,
        }
    }
}

impl DrConfig {
    /// Margin angle `δ = arccos(1/(1−N)) / κ`.
    pub fn margin(&self, factors: usize) -> f64 {
        tammes_angle(factors) / self.kappa
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be > 1, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Regularizer values for one layer. `ncr` and `cnc` are always the
/// angle-form diagnostics, whatever the variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerDr {
    pub value: f64,
    pub ncr: f64,
    pub cnc: f64,
}

/// Total regularization over a bank, unscaled by λ.
#[derive(Clone, Debug)]
pub struct DrLoss {
    pub value: f64,
    pub ncr: f64,
    pub cnc: f64,
    pub layers: Vec<LayerDr>,
    /// Gradient with respect to every factor weight; bias entries stay zero.
    pub grads: FactorBank,
}

fn add_term(value: &mut f64, grads: &mut [Matrix], term: RegTerm) {
    *value += term.value;
    for (g, t) in grads.iter_mut().zip(&term.grads) {
        g.axpy(1.0, t);
    }
}

/// Sum over layers of the configured regularizer on the factor weights.
pub fn dr_loss(bank: &FactorBank, cfg: &DrConfig) -> Result<DrLoss> {
    let n = bank.factors();
    let mut grads = bank.clone();
    grads.layers.iter_mut().for_each(|l| {
        l.weights.iter_mut().for_each(|w| w.as_mut_slice().fill(0.0));
        l.biases.iter_mut().for_each(|b| b.fill(0.0));
    });
    let mut out = DrLoss {
        value: 0.0,
        ncr: 0.0,
        cnc: 0.0,
        layers: Vec::with_capacity(bank.num_layers()),
        grads,
    };
    if n < 2 {
        out.layers = vec![LayerDr::default(); bank.num_layers()];
        return Ok(out);
    }
    let delta = cfg.margin(n);
    for (layer, glayer) in bank.layers.iter().zip(&mut out.grads.layers) {
        let c = centroids(&layer.weights)?;
        let ncr = ncr_loss(&c);
        let cnc = cnc_loss(&c, &layer.weights, delta);
        let mut rec = LayerDr {
            value: 0.0,
            ncr: ncr.value,
            cnc: cnc.value,
        };
        let g = &mut glayer.weights;
        match cfg.variant {
            DrVariant::Dr => {
                add_term(&mut rec.value, g, ncr);
                add_term(&mut rec.value, g, cnc);
            }
            DrVariant::MmaCnc => {
                add_term(&mut rec.value, g, mma_loss(&c));
                add_term(&mut rec.value, g, cnc);
            }
            DrVariant::Ncr => add_term(&mut rec.value, g, ncr),
            DrVariant::NcrCnccos => {
                add_term(&mut rec.value, g, ncr);
                add_term(&mut rec.value, g, cnc_loss_cos(&c, &layer.weights, delta));
            }
            DrVariant::Orth => add_term(&mut rec.value, g, orth_loss(&c)),
            DrVariant::None => {}
        }
        out.value += rec.value;
        out.ncr += rec.ncr;
        out.cnc += rec.cnc;
        out.layers.push(rec);
    }
    Ok(out)
}

/// `N` unit vectors in `d` dimensions with every pairwise inner product equal
/// to `1/(1−N)`.
#[derive(Clone, Debug)]
pub struct EquiangularGram {
    pub n: usize,
    pub d: usize,
    /// Target Gram matrix: unit diagonal, `1/(1−N)` elsewhere.
    pub target: Matrix,
    /// `d × N` realization; column `i` is the `i`-th vector.
    pub frame: Matrix,
    /// `max |W̄ᵀW̄ − P|`.
    pub residual: f64,
}

impl EquiangularGram {
    pub fn vectors(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.d).map(|r| self.frame[(r, i)]).collect())
            .collect()
    }
}

/// Builds the equiangular frame from the eigendecomposition of its Gram matrix.
pub fn equiangular_frame(n: usize, d: usize) -> Result<EquiangularGram> {
    if n < 2 || d + 1 < n {
        return Err(Error::InfeasibleDimension { n, d });
    }
    let off = 1.0 / (1.0 - n as f64);
    let p = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { off });
    let eig = SymmetricEigen::new(p.clone());
    let mut frame = Matrix::zeros(d, n);
    let mut row = 0;
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= 1e-9 {
            continue;
        }
        let scale = lambda.sqrt();
        for col in 0..n {
            frame.as_mut_slice()[row * n + col] = scale * eig.eigenvectors[(col, idx)];
        }
        row += 1;
    }
    let mut residual = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let g: f64 = (0..d).map(|r| frame[(r, i)] * frame[(r, j)]).sum();
            residual = residual.max((g - p[(i, j)]).abs());
        }
    }
    let target = Matrix::from_vec(n, n, p.iter().copied().collect())?;
    Ok(EquiangularGram {
        n,
        d,
        target,
        frame,
        residual,
    })
}
