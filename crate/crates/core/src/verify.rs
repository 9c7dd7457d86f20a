//! Measurement suites: equiangular frames, NCR descent, gradient scaling laws,
//! and finite-difference checks of every analytic gradient.
//!
//! Each suite returns a [`Report`] of named checks against fixed thresholds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::disentangle::{
    centroids, cnc_hinge, cnc_loss, cnc_loss_cos, equiangular_frame, mma_loss, ncr_loss, orth_loss, tammes_angle,
    DrConfig, DrVariant, HingeForm, RegTerm,
};
use crate::error::Result;
use crate::factorization::{Dsfnet, ModelConfig};
use crate::nn::Mlp;
use crate::scenario_aware::{Mode, SabnState, SaffNet};
use crate::tensor::{dot, grad_check, norm, numeric_gradient, Matrix, Parameters};
use crate::training::{bce_loss, loss_and_grad, total_loss};

/// Relative error bound for finite-difference checks.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// Distance from any selection tie or rectifier kink required of a sample.
pub const TIE_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Below,
    Above,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub rule: Rule,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            rule: Rule::Below,
            passed: value < threshold,
        }
    }

    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            rule: Rule::Above,
            passed: value > threshold,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let op = match c.rule {
                Rule::Below => '<',
                Rule::Above => '>',
            };
            out.push_str(&format!(
                "{} {} value={:.6e} ({} {:.3e})\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                op,
                c.threshold
            ));
        }
        out
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn flat(ws: &[Matrix]) -> Vec<f64> {
    ws.iter().flat_map(|w| w.as_slice().to_vec()).collect()
}

fn unflat(template: &[Matrix], p: &[f64]) -> Vec<Matrix> {
    let mut out = template.to_vec();
    out.load_flat(p);
    out
}

/// Equiangular-frame residuals for each `N` at `d = N − 1` and `d = N + 3`.
pub fn frame_suite(ns: &[usize]) -> Result<Report> {
    let mut report = Report::default();
    for &n in ns {
        for d in [n - 1, n + 3] {
            let frame = equiangular_frame(n, d)?;
            report.checks.push(Check::below(format!("frame_n{n}_d{d}"), frame.residual, 1e-8));
        }
    }
    Ok(report)
}

/// Largest `|θ⁽ⁱʲ⁾ − arccos(−1/(N−1))|` after plain gradient descent on the
/// NCR loss from random single-neuron factors.
pub fn ncr_descent(n: usize, d: usize, seed: u64, max_steps: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws: Vec<Matrix> = (0..n).map(|_| normal_matrix(&mut rng, 1, d)).collect();
    let target = tammes_angle(n);
    let worst = |ws: &[Matrix]| -> Result<f64> {
        let c = centroids(ws)?;
        let mut w = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                w = w.max((c.angles[(i, j)] - target).abs());
            }
        }
        Ok(w)
    };
    let lr = 2.0 * n as f64;
    for _ in 0..max_steps {
        if worst(&ws)? < 1e-4 {
            break;
        }
        let term = ncr_loss(&centroids(&ws)?);
        for (w, g) in ws.iter_mut().zip(&term.grads) {
            w.axpy(-lr, g);
        }
    }
    worst(&ws)
}

/// NCR descent reaches the equiangular configuration for every `N` in `ns`.
pub fn ncr_descent_suite(ns: &[usize], d: usize, seeds: u64) -> Result<Report> {
    let mut report = Report::default();
    for &n in ns {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            worst = worst.max(ncr_descent(n, d, 500 + seed, 20_000)?);
        }
        report.checks.push(Check::below(format!("ncr_descent_n{n}_d{d}"), worst, 1e-2));
    }
    Ok(report)
}

/// Frame residuals plus NCR descent at dimension `d`.
pub fn lemma_suite(ns: &[usize], d: usize, seeds: u64) -> Result<Report> {
    let mut report = frame_suite(ns)?;
    let feasible: Vec<usize> = ns.iter().copied().filter(|&n| n <= d + 1).collect();
    report.extend(ncr_descent_suite(&feasible, d, seeds)?);
    Ok(report)
}

fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    var.sqrt() / mean.abs()
}

fn unit_at(theta: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin(), 0.0]
}

fn term_grad_norm(f: impl Fn(&[Matrix]) -> RegTerm, ws: &[Matrix]) -> f64 {
    norm(&numeric_gradient(|p| f(&unflat(ws, p)).value, &flat(ws), 1e-6))
}

/// MMA gradient norm at a fixed row-sum norm, across centroid angles.
pub fn mma_gradient_norms() -> Result<Vec<(f64, f64)>> {
    let rows = 3;
    let mut out = Vec::new();
    for k in 0..5 {
        let theta = 0.5 + 0.5 * k as f64;
        let mut ws = Vec::new();
        for (i, c) in [unit_at(0.0), unit_at(theta)].into_iter().enumerate() {
            // Rows S/M plus zero-sum perturbations keep ‖S‖ = 1.
            let mut m = Matrix::zeros(rows, 3);
            for r in 0..rows {
                for col in 0..3 {
                    m.row_mut(r)[col] = c[col] / rows as f64;
                }
            }
            let wiggle = 0.1 * (i as f64 + 1.0);
            m.row_mut(0)[2] += wiggle;
            m.row_mut(1)[2] -= wiggle;
            ws.push(m);
        }
        let g = term_grad_norm(|w| mma_loss(&centroids(w).expect("nondegenerate")), &ws);
        out.push((theta, g));
    }
    Ok(out)
}

/// NCR with three factors: two at angle `θ` and a third at the target angle
/// from both. Returns `(θ* − θ, ‖∇‖)` pairs.
pub fn ncr_gradient_norms(deltas: &[f64]) -> Vec<(f64, f64)> {
    let target = tammes_angle(3);
    deltas
        .iter()
        .map(|&delta| {
            let theta = target - delta;
            let a = 1.0 / (2.0 * (theta / 2.0).cos());
            let b = (1.0 - a * a).max(0.0).sqrt();
            let third = vec![-a * (theta / 2.0).cos(), -a * (theta / 2.0).sin(), b];
            let ws: Vec<Matrix> = [unit_at(0.0), unit_at(theta), third]
                .iter()
                .map(|v| Matrix::from_rows(&[v.clone()]).expect("row"))
                .collect();
            let g = term_grad_norm(|w| ncr_loss(&centroids(w).expect("nondegenerate")), &ws);
            (delta, g)
        })
        .collect()
}

fn r_squared_through_origin(pts: &[(f64, f64)]) -> f64 {
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let slope = sxy / sxx;
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_res: f64 = pts.iter().map(|(x, y)| (y - slope * x).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|(_, y)| (y - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Anchor-gradient norm of one contrastive hinge with the anchor on its own
/// centroid at radius `r` and the foreign centroid at angle `theta`.
pub fn cnc_anchor_gradient(r: f64, theta: f64, form: HingeForm, numeric: bool) -> f64 {
    let own = unit_at(0.0);
    let foreign = unit_at(theta);
    let delta = 1.2;
    let anchor: Vec<f64> = own.iter().map(|v| v * r).collect();
    if numeric {
        let f = |a: &[f64]| cnc_hinge(a, &own, &foreign, delta, form).map_or(0.0, |h| h.value);
        norm(&numeric_gradient(f, &anchor, 1e-7 * r))
    } else {
        cnc_hinge(&anchor, &own, &foreign, delta, form).map_or(0.0, |h| norm(&h.anchor))
    }
}

/// Scaling laws of the regularizer gradients.
pub fn gradient_law_suite() -> Result<Report> {
    let mut report = Report::default();

    let mma: Vec<f64> = mma_gradient_norms()?.into_iter().map(|(_, g)| g).collect();
    report
        .checks
        .push(Check::below("mma_norm_cv", coefficient_of_variation(&mma), 0.01));

    let deltas: Vec<f64> = (0..12).map(|k| 0.05 + 0.95 * k as f64 / 11.0).collect();
    let ncr = ncr_gradient_norms(&deltas);
    report
        .checks
        .push(Check::above("ncr_norm_linear_r2", r_squared_through_origin(&ncr), 0.999));
    report
        .checks
        .push(Check::below("ncr_norm_at_target", ncr_gradient_norms(&[0.0])[0].1, 1e-6));

    let mut cos_err = 0.0f64;
    let mut angle_err = 0.0f64;
    let mut cross_err = 0.0f64;
    for r in [0.5, 1.0, 2.0] {
        for theta in [0.01, 0.1, 1.0] {
            let cos_norm = cnc_anchor_gradient(r, theta, HingeForm::Cosine, true);
            let expect = theta.sin() / r;
            cos_err = cos_err.max((cos_norm - expect).abs() / expect);
            let analytic = cnc_anchor_gradient(r, theta, HingeForm::Angle, false);
            angle_err = angle_err.max((analytic - 1.0 / r).abs());
            let numeric = cnc_anchor_gradient(r, theta, HingeForm::Angle, true);
            cross_err = cross_err.max((numeric - analytic).abs() / analytic);
        }
    }
    report.checks.push(Check::below("cnc_cos_norm_rel_err", cos_err, 0.02));
    report.checks.push(Check::below("cnc_angle_norm_abs_err", angle_err, 1e-6));
    report.checks.push(Check::below("cnc_angle_numeric_rel_err", cross_err, 1e-4));
    Ok(report)
}

/// Smallest gap between the winning and runner-up choice of any selection
/// made by the angular regularizers, and of any active hinge from zero.
pub fn selection_margin(ws: &[Matrix], delta: f64) -> Result<f64> {
    let c = centroids(ws)?;
    let n = c.factors();
    if n < 2 {
        return Ok(f64::INFINITY);
    }
    let target = tammes_angle(n);
    let gap = |mut vals: Vec<f64>| -> f64 {
        vals.sort_by(|a, b| b.total_cmp(a));
        if vals.len() < 2 {
            f64::INFINITY
        } else {
            vals[0] - vals[1]
        }
    };
    let mut m = f64::INFINITY;
    for i in 0..n {
        let others = (0..n).filter(|&j| j != i);
        m = m.min(gap(others.clone().map(|j| (c.angles[(i, j)] - target).powi(2)).collect()));
        m = m.min(gap(others.clone().map(|j| -c.angles[(i, j)]).collect()));
        let own: Vec<f64> = (0..c.rows)
            .map(|k| crate::tensor::angle_grad(ws[i].row(k), &c.centroids[i]).theta)
            .collect();
        m = m.min(gap(own.clone()));
        let k = (0..c.rows).fold(0, |best, k| if own[k] > own[best] { k } else { best });
        let foreign: Vec<f64> = others
            .clone()
            .map(|j| crate::tensor::angle_grad(ws[i].row(k), &c.centroids[j]).theta)
            .collect();
        m = m.min(gap(foreign.iter().map(|a| -a).collect()));
        for ang in foreign {
            m = m.min((delta + own[k] - ang).abs());
            m = m.min((1.0 - delta.cos() + ang.cos() - own[k].cos()).abs());
        }
    }
    Ok(m)
}

fn regularizer_check(
    name: &str,
    f: impl Fn(&[Matrix]) -> RegTerm,
    seeds: usize,
    base: u64,
    (n, m, d): (usize, usize, usize),
) -> Result<Check> {
    let delta = DrConfig::default().margin(n);
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut seed = 0u64;
    while accepted < seeds {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(stream(base, 7000 + seed));
        let ws: Vec<Matrix> = (0..n).map(|_| uniform_matrix(&mut rng, m, d)).collect();
        if selection_margin(&ws, delta)? < TIE_MARGIN {
            continue;
        }
        let term = f(&ws);
        worst = worst.max(grad_check(|p| f(&unflat(&ws, p)).value, &flat(&ws), &flat(&term.grads), 1e-5)?);
        accepted += 1;
    }
    Ok(Check::below(format!("gradcheck_{name}"), worst, GRADCHECK_TOLERANCE))
}

fn stream(base: u64, k: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
}

fn small_config(feature_dim: usize, scenario_dim: usize, factors: usize) -> ModelConfig {
    ModelConfig {
        hidden: vec![6, 5],
        gate_hidden: 5,
        rescale_hidden: 4,
        ..ModelConfig::dsfnet(feature_dim, scenario_dim, factors)
    }
}

fn bank_margin(model: &Dsfnet, delta: f64) -> Result<f64> {
    let mut m = f64::INFINITY;
    for layer in &model.params.bank.layers {
        m = m.min(selection_margin(&layer.weights, delta)?);
    }
    Ok(m)
}

fn bce_check(seeds: usize, base: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream(base, 11));
    let mut worst = 0.0f64;
    for _ in 0..seeds {
        let logit = rng.gen_range(-5.0..5.0);
        let y = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        worst = worst.max(grad_check(|p| bce_loss(p[0], y).0, &[logit], &[bce_loss(logit, y).1], 1e-5)?);
    }
    Ok(Check::below("gradcheck_bce", worst, GRADCHECK_TOLERANCE))
}

/// Gated composition without SABN or SAFF: logits against every parameter.
fn composition_check(seeds: usize, base: u64) -> Result<Check> {
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut seed = 0u64;
    while accepted < seeds {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(stream(base, 8000 + seed));
        let cfg = ModelConfig {
            use_sabn: false,
            use_saff: false,
            ..small_config(4, 3, 3)
        };
        let model = Dsfnet::new(cfg, &mut rng)?;
        let x = uniform_matrix(&mut rng, 5, 4);
        let s = uniform_matrix(&mut rng, 5, 3);
        let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let trace = model.forward_batch(&x, &s, Mode::Eval, None)?;
        if trace.kink_margin() < TIE_MARGIN {
            continue;
        }
        let mut grads = model.params.zeros_like();
        let dx = model.backward(&trace, &u, &mut grads, true).expect("input gradient requested");
        let f = |m: &Dsfnet, x: &Matrix| -> f64 {
            let logits = m.forward_batch(x, &s, Mode::Eval, None).expect("shapes fixed").logits;
            dot(&logits, &u)
        };
        worst = worst.max(grad_check(
            |p| {
                let mut m = model.clone();
                m.params.load_flat(p);
                f(&m, &x)
            },
            &model.params.flatten(),
            &grads.flatten(),
            1e-5,
        )?);
        worst = worst.max(grad_check(
            |p| f(&model, &Matrix::from_vec(5, 4, p.to_vec()).expect("sized")),
            x.as_slice(),
            dx.as_slice(),
            1e-5,
        )?);
        accepted += 1;
    }
    Ok(Check::below("gradcheck_composition", worst, GRADCHECK_TOLERANCE))
}

fn sabn_check(seeds: usize, base: u64, mode: Mode) -> Result<Check> {
    let (b, width, sdim) = (6, 4, 3);
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut seed = 0u64;
    while accepted < seeds {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(stream(base, 9000 + seed));
        let mut state = SabnState::new(sdim, 5, width, &mut rng);
        // Move every rescale parameter off its initial value.
        let p: Vec<f64> = state.flatten().iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
        state.load_flat(&p);
        for k in 0..width {
            state.stats.mean[k] = rng.gen_range(-0.5..0.5);
            state.stats.var[k] = rng.gen_range(0.5..2.0);
        }
        let z = uniform_matrix(&mut rng, b, width);
        let s = uniform_matrix(&mut rng, b, sdim);
        let u = uniform_matrix(&mut rng, b, width);
        let (_, cache) = state.forward_pure(&z, &s, mode)?;
        let margin = cache
            .gamma_caches
            .iter()
            .chain(&cache.beta_caches)
            .fold(f64::INFINITY, |m, c| m.min(Mlp::kink_margin(c)));
        if margin < TIE_MARGIN {
            continue;
        }
        let mut grad = state.nets.clone();
        grad.fill_zero();
        let dz = state.backward(&cache, &u, &mut grad);
        let f = |st: &SabnState, z: &Matrix| dot(st.forward_pure(z, &s, mode).expect("shapes fixed").0.as_slice(), u.as_slice());
        worst = worst.max(grad_check(
            |q| {
                let mut st = state.clone();
                st.load_flat(q);
                f(&st, &z)
            },
            &p,
            &grad.flatten(),
            1e-5,
        )?);
        worst = worst.max(grad_check(
            |q| f(&state, &Matrix::from_vec(b, width, q.to_vec()).expect("sized")),
            z.as_slice(),
            dz.as_slice(),
            1e-5,
        )?);
        accepted += 1;
    }
    let name = match mode {
        Mode::Train => "gradcheck_sabn_train",
        Mode::Eval => "gradcheck_sabn_eval",
    };
    Ok(Check::below(name, worst, GRADCHECK_TOLERANCE))
}

fn saff_check(seeds: usize, base: u64) -> Result<Check> {
    let (fdim, sdim) = (5, 3);
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(stream(base, 9500 + seed));
        let net = SaffNet::new(fdim, sdim, &mut rng);
        let x: Vec<f64> = (0..fdim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..sdim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..fdim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward(&x, &s)?;
        let mut grad = net.clone();
        grad.fill_zero();
        let mut dx = vec![0.0; fdim];
        net.backward(&cache, &u, &mut grad, Some(&mut dx));
        let f = |n: &SaffNet, x: &[f64]| dot(&n.forward(x, &s).expect("shapes fixed").0, &u);
        worst = worst.max(grad_check(
            |q| {
                let mut n = net.clone();
                n.load_flat(q);
                f(&n, &x)
            },
            &net.flatten(),
            &grad.flatten(),
            1e-5,
        )?);
        worst = worst.max(grad_check(|q| f(&net, q), &x, &dx, 1e-5)?);
    }
    Ok(Check::below("gradcheck_saff", worst, GRADCHECK_TOLERANCE))
}

/// Full training objective (train mode, every regularizer variant).
fn total_loss_check(seeds: usize, base: u64) -> Result<Check> {
    let mut worst = 0.0f64;
    for (v, variant) in DrVariant::ALL.into_iter().enumerate() {
        let dr = DrConfig {
            lambda: 0.5,
            variant,
            ..DrConfig::default()
        };
        let mut accepted = 0;
        let mut seed = 0u64;
        // Every variant gets a share; the total over variants is at least `seeds`.
        let quota = seeds.div_ceil(DrVariant::ALL.len()).max(4);
        while accepted < quota {
            seed += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(stream(base, 10_000 + 100 * v as u64 + seed));
            let model = Dsfnet::new(small_config(4, 3, 3), &mut rng)?;
            let x = uniform_matrix(&mut rng, 6, 4);
            let s = uniform_matrix(&mut rng, 6, 3);
            let y: Vec<f64> = (0..6).map(|k| (k % 2) as f64).collect();
            let (_, grads, trace) = loss_and_grad(&model, &x, &s, &y, &dr, Mode::Train)?;
            if trace.kink_margin() < TIE_MARGIN || bank_margin(&model, dr.margin(3))? < TIE_MARGIN {
                continue;
            }
            worst = worst.max(grad_check(
                |q| {
                    let mut m = model.clone();
                    m.params.load_flat(q);
                    total_loss(&m, &x, &s, &y, &dr, Mode::Train).expect("shapes fixed")
                },
                &model.params.flatten(),
                &grads.flatten(),
                1e-5,
            )?);
            accepted += 1;
        }
    }
    Ok(Check::below("gradcheck_total_loss", worst, GRADCHECK_TOLERANCE))
}

/// Finite-difference checks of every analytic gradient, `seeds` accepted
/// samples each, all away from selection ties and rectifier kinks. Sample
/// streams are offset by `base`.
pub fn gradcheck_suite(seeds: usize, base: u64) -> Result<Report> {
    let delta = |n| DrConfig::default().margin(n);
    let c = |w: &[Matrix]| centroids(w).expect("nondegenerate");
    let mut report = Report::default();
    report.checks.push(bce_check(seeds, base)?);
    report.checks.push(composition_check(seeds, base)?);
    report.checks.push(sabn_check(seeds, base, Mode::Train)?);
    report.checks.push(sabn_check(seeds, base, Mode::Eval)?);
    report.checks.push(saff_check(seeds, base)?);
    report.checks.push(regularizer_check("mma", |w| mma_loss(&c(w)), seeds, base, (4, 3, 5))?);
    report.checks.push(regularizer_check("ncr", |w| ncr_loss(&c(w)), seeds, base, (4, 3, 5))?);
    report
        .checks
        .push(regularizer_check("cnc_angle", |w| cnc_loss(&c(w), w, delta(3)), seeds, base, (3, 4, 5))?);
    report
        .checks
        .push(regularizer_check("cnc_cos", |w| cnc_loss_cos(&c(w), w, delta(3)), seeds, base, (3, 4, 5))?);
    report.checks.push(regularizer_check("orth", |w| orth_loss(&c(w)), seeds, base, (3, 2, 4))?);
    report.checks.push(total_loss_check(seeds, base)?);
    Ok(report)
}

/// Every suite at its default size.
pub fn full_suite(base: u64) -> Result<Report> {
    let mut report = lemma_suite(&[2, 3, 4, 5, 6, 7, 8], 8, 10)?;
    report.extend(gradient_law_suite()?);
    report.extend(gradcheck_suite(20, base)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_are_exact() {
        assert!(frame_suite(&[2, 3, 4, 5, 6, 7, 8]).unwrap().passed());
    }

    #[test]
    fn ncr_descent_converges() {
        let report = ncr_descent_suite(&[2, 3, 4, 7], 8, 3).unwrap();
        assert!(report.passed(), "{}", report.to_text());
    }

    #[test]
    fn gradient_laws_hold() {
        let report = gradient_law_suite().unwrap();
        assert!(report.passed(), "{}", report.to_text());
    }

    #[test]
    fn gradcheck_suite_passes() {
        let report = gradcheck_suite(20, 0).unwrap();
        assert!(report.passed(), "{}", report.to_text());
    }

    #[test]
    fn report_text() {
        let r = Report {
            checks: vec![Check::below("a", 0.5, 1.0), Check::above("b", 0.5, 1.0)],
        };
        assert!(!r.passed());
        assert_eq!(r.to_text().lines().count(), 2);
        assert!(r.to_text().starts_with("PASS a"));
        assert!(r.get("b").is_some_and(|c| !c.passed));
    }
}
