//! Ranking metrics and the per-factor input-sensitivity probe.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize, Dataset, NormalizerState, ScenarioPartition};
use crate::error::{Error, Result};
use crate::factorization::Dsfnet;
use crate::scenario_aware::Mode;
use crate::tensor::Matrix;

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg * pos as f64;
        i = j;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// AUC on each partition subset; `None` where it is undefined.
pub fn subset_auc(scores: &[f64], labels: &[u8], scenario_ids: &[u32], partition: &ScenarioPartition) -> [Option<f64>; 4] {
    std::array::from_fn(|k| {
        let idx: Vec<usize> = (0..scores.len())
            .filter(|&i| partition.subset_of(scenario_ids[i]) == Some(k))
            .collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        auc(&s, &l).ok()
    })
}

/// Relative improvement in percent over a baseline AUC.
pub fn rela_impr(auc_model: f64, auc_base: f64) -> f64 {
    100.0 * (auc_model - auc_base) / auc_base
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub subset_aucs: [Option<f64>; 4],
    /// Present when a baseline AUC was supplied.
    pub rela_impr: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl MetricReport {
    pub fn compute(
        scores: &[f64],
        labels: &[u8],
        scenario_ids: &[u32],
        partition: &ScenarioPartition,
        baseline: Option<f64>,
    ) -> Result<Self> {
        let a = auc(scores, labels)?;
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        Ok(MetricReport {
            auc: a,
            subset_aucs: subset_auc(scores, labels, scenario_ids, partition),
            rela_impr: baseline.map(|b| rela_impr(a, b)),
            n_pos,
            n_neg: labels.len() - n_pos,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |a| format!("{a:.6}"));
        let _ = writeln!(out, "{:<12} {:.6}", "auc", self.auc);
        for (k, a) in self.subset_aucs.iter().enumerate() {
            let _ = writeln!(out, "{:<12} {}", format!("auc_s{}", k + 1), fmt(*a));
        }
        if let Some(r) = self.rela_impr {
            let _ = writeln!(out, "{:<12} {r:+.2}%", "rela_impr");
        }
        let _ = writeln!(out, "{:<12} {}", "n_pos", self.n_pos);
        let _ = writeln!(out, "{:<12} {}", "n_neg", self.n_neg);
        out
    }
}

/// Eval-mode scores for a whole dataset.
pub fn score(model: &Dsfnet, normalizer: &NormalizerState, data: &Dataset) -> Result<Vec<f64>> {
    let mut st = normalizer.clone();
    let (x, s) = normalize(&mut st, &data.x, &data.s, Mode::Eval);
    let mut out = Vec::with_capacity(data.len());
    // Chunked to bound the size of the forward trace.
    for start in (0..data.len()).step_by(4096) {
        let idx: Vec<usize> = (start..(start + 4096).min(data.len())).collect();
        let xb = rows(&x, &idx);
        let sb = rows(&s, &idx);
        out.extend(model.predict(&xb, &sb)?);
    }
    Ok(out)
}

fn rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

pub const DEFAULT_GATE_THRESHOLD: f64 = 0.8;
pub const DEFAULT_SAMPLES_PER_FSL: usize = 200;

/// Mean normalized input sensitivity of each factor learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix {
    /// One row per factor; empty when no sample qualified.
    pub rows: Vec<Vec<f64>>,
    pub samples_used: Vec<usize>,
    pub diagnostics: Vec<String>,
}

impl AttentionMatrix {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (row, n)) in self.rows.iter().zip(&self.samples_used).enumerate() {
            let _ = write!(out, "fsl{i:<3} n={n:<4}");
            if row.is_empty() {
                out.push_str(" (no qualifying samples)");
            }
            for v in row {
                let _ = write!(out, " {v:.3}");
            }
            out.push('\n');
        }
        for d in &self.diagnostics {
            let _ = writeln!(out, "# {d}");
        }
        out
    }
}

/// Scales a nonnegative vector by its maximum; the zero vector stays zero.
fn max_normalize(v: &mut [f64]) {
    let m = v.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        v.iter_mut().for_each(|e| *e /= m);
    }
}

/// Probes which input features each factor learner responds to.
///
/// For factor `i`, samples whose gate `αᵢ` exceeds `threshold` are drawn, the
/// gates are forced to the one-hot vector `eᵢ`, and `|∂y/∂x̂ₖ|` is taken by
/// backpropagation, scaled to `[0, 1]` per sample, and averaged.
pub fn fsl_attention(
    model: &Dsfnet,
    normalizer: &NormalizerState,
    data: &Dataset,
    threshold: f64,
    samples_per_fsl: usize,
    seed: u64,
) -> Result<AttentionMatrix> {
    let mut st = normalizer.clone();
    let (x, s) = normalize(&mut st, &data.x, &data.s, Mode::Eval);
    let n = model.factors();
    let gates = gate_matrix(model, &x, &s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = AttentionMatrix {
        rows: Vec::with_capacity(n),
        samples_used: Vec::with_capacity(n),
        diagnostics: Vec::new(),
    };
    for i in 0..n {
        let qualifying: Vec<usize> = (0..data.len()).filter(|&b| gates[(b, i)] > threshold).collect();
        if qualifying.is_empty() {
            out.diagnostics.push(format!("fsl{i}: no sample has gate above {threshold}"));
            out.rows.push(Vec::new());
            out.samples_used.push(0);
            continue;
        }
        if qualifying.len() < samples_per_fsl {
            let msg = format!("fsl{i}: only {} qualifying samples, using all", qualifying.len());
            log::warn!("{msg}");
            out.diagnostics.push(msg);
        }
        let chosen: Vec<usize> = qualifying
            .choose_multiple(&mut rng, samples_per_fsl.min(qualifying.len()))
            .copied()
            .collect();
        let sens = input_sensitivity(model, &rows(&x, &chosen), &rows(&s, &chosen), i)?;
        let mut mean = vec![0.0; x.cols()];
        for r in 0..sens.rows() {
            let mut v: Vec<f64> = sens.row(r).iter().map(|g| g.abs()).collect();
            max_normalize(&mut v);
            for (m, e) in mean.iter_mut().zip(&v) {
                *m += e / chosen.len() as f64;
            }
        }
        out.rows.push(mean);
        out.samples_used.push(chosen.len());
    }
    Ok(out)
}

fn gate_matrix(model: &Dsfnet, x: &Matrix, s: &Matrix) -> Result<Matrix> {
    let mut g = Matrix::zeros(x.rows(), model.factors());
    for start in (0..x.rows()).step_by(4096) {
        let idx: Vec<usize> = (start..(start + 4096).min(x.rows())).collect();
        let t = model.forward_batch(&rows(x, &idx), &rows(s, &idx), Mode::Eval, None)?;
        for (r, &i) in idx.iter().enumerate() {
            g.row_mut(i).copy_from_slice(t.gates.row(r));
        }
    }
    Ok(g)
}

/// `∂y/∂x̂` per sample with the gates forced to `e_fsl`.
pub fn input_sensitivity(model: &Dsfnet, x: &Matrix, s: &Matrix, fsl: usize) -> Result<Matrix> {
    let mut onehot = vec![0.0; model.factors()];
    onehot[fsl] = 1.0;
    let trace = model.forward_batch(x, s, Mode::Eval, Some(&onehot))?;
    let mut scratch = model.params.zeros_like();
    let ones = vec![1.0; x.rows()];
    Ok(model
        .backward(&trace, &ones, &mut scratch, true)
        .expect("input gradient requested"))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Best mean row-wise Pearson correlation between attention rows and
/// reference rows over all one-to-one assignments. Returns the score and,
/// for each reference row, the matched attention row.
pub fn matched_correlation(attention: &[Vec<f64>], reference: &Matrix) -> (f64, Vec<usize>) {
    let k = reference.rows();
    let corr: Vec<Vec<f64>> = (0..k)
        .map(|f| {
            attention
                .iter()
                .map(|row| if row.is_empty() { 0.0 } else { pearson(row, reference.row(f)) })
                .collect()
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut used = vec![false; attention.len()];
    let mut current = Vec::with_capacity(k);
    assign(&corr, 0, &mut used, &mut current, 0.0, &mut best);
    let m = k.min(attention.len()).max(1) as f64;
    (best.0 / m, best.1)
}

fn assign(corr: &[Vec<f64>], f: usize, used: &mut [bool], current: &mut Vec<usize>, acc: f64, best: &mut (f64, Vec<usize>)) {
    if f == corr.len() || current.len() == used.len() {
        if acc > best.0 {
            *best = (acc, current.clone());
        }
        return;
    }
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            current.push(j);
            assign(corr, f + 1, used, current, acc + corr[f][j], best);
            current.pop();
            used[j] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_scenarios, DEFAULT_PARTITION};
    use crate::factorization::{FactorLayer, ModelConfig};
    use crate::tensor::{grad_check, Parameters};
    use proptest::prelude::*;
    use rand::Rng;

    fn pair_count(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scores: Vec<f64> = (0..200).map(|_| f64::from(rng.gen_range(0..20)) / 4.0).collect();
        let labels: Vec<u8> = (0..200).map(|_| rng.gen_range(0..2)).collect();
        assert!((auc(&scores, &labels).unwrap() - pair_count(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn subset_auc_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400;
        let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let p = partition_scenarios(&ids, DEFAULT_PARTITION);
        let sub = subset_auc(&scores, &labels, &ids, &p);
        for k in 0..4 {
            let idx: Vec<usize> = (0..n).filter(|&i| p.subset_of(ids[i]) == Some(k)).collect();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            assert!((sub[k].unwrap() - pair_count(&s, &l)).abs() < 1e-12);
        }

        let one = vec![3u32; n];
        let p = partition_scenarios(&one, DEFAULT_PARTITION);
        let sub = subset_auc(&scores, &labels, &one, &p);
        assert!(sub[0].is_some() && sub[1..].iter().all(Option::is_none));
    }

    #[test]
    fn rela_impr_matches_published_rows() {
        assert!((rela_impr(0.7415, 0.7362) - 0.72).abs() < 0.005);
        assert_eq!(rela_impr(0.74, 0.74), 0.0);
        assert!((rela_impr(0.7504, 0.7362) - 1.93).abs() < 0.02);
    }

    #[test]
    fn report_renders() {
        let p = partition_scenarios(&[0, 0, 1, 1], DEFAULT_PARTITION);
        let r = MetricReport::compute(&[0.1, 0.9, 0.2, 0.8], &[0, 1, 0, 1], &[0, 0, 1, 1], &p, Some(0.5)).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!((r.n_pos, r.n_neg), (2, 2));
        let text = r.to_text();
        assert!(text.contains("rela_impr") && text.contains("+100.00%"));
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    fn linear_model(w: &[f64]) -> Dsfnet {
        let mut cfg = ModelConfig::dsfnet(w.len(), 2, 2);
        cfg.hidden = vec![];
        cfg.use_sabn = false;
        cfg.use_saff = false;
        let mut model = Dsfnet::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut layer = FactorLayer::zeros(2, w.len(), 1);
        layer.weights[0].row_mut(0).copy_from_slice(w);
        layer.weights[1].row_mut(0).copy_from_slice(&w.iter().map(|v| -2.0 * v).collect::<Vec<_>>());
        model.params.bank.layers = vec![layer];
        model
    }

    fn toy_data(n: usize, dx: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::empty(2, dx);
        d.x = Matrix::from_vec(n, dx, (0..n * dx).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        d.s = Matrix::from_vec(n, 2, (0..n * 2).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        d.labels = (0..n).map(|i| (i % 2) as u8).collect();
        d.group_ids = (0..n as u64).collect();
        d.scenario_ids = vec![0; n];
        d
    }

    #[test]
    fn linear_model_attention_is_weight_magnitude() {
        let w = [0.5, -2.0, 1.0, 0.0];
        let model = linear_model(&w);
        let data = toy_data(300, 4, 1);
        let norm = NormalizerState::new(4, 2);
        let att = fsl_attention(&model, &norm, &data, 0.0, 200, 3).unwrap();
        for (row, scale) in att.rows.iter().zip([1.0, 2.0]) {
            for (a, wk) in row.iter().zip(&w) {
                // |scale · w_k| / max_k |scale · w_k|
                let expected = (scale * wk).abs() / (scale * 2.0);
                assert!((a - expected).abs() < 1e-12);
            }
        }
        assert_eq!(att.samples_used, vec![200, 200]);
    }

    #[test]
    fn zero_model_attention_is_zero() {
        let mut cfg = ModelConfig::dsfnet(4, 2, 3);
        cfg.use_saff = false;
        let mut model = Dsfnet::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        model.params.bank.fill_zero();
        let att = fsl_attention(&model, &NormalizerState::new(4, 2), &toy_data(100, 4, 2), 0.0, 50, 1).unwrap();
        assert!(att.rows.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn unreachable_gate_threshold_gives_empty_rows() {
        let model = linear_model(&[1.0, 1.0]);
        let att = fsl_attention(&model, &NormalizerState::new(2, 2), &toy_data(20, 2, 3), 1.5, 10, 1).unwrap();
        assert!(att.rows.iter().all(Vec::is_empty));
        assert_eq!(att.diagnostics.len(), 2);
        assert!(att.to_text().contains("no qualifying samples"));
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = Dsfnet::new(ModelConfig::dsfnet(5, 3, 3), &mut rng).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xm = Matrix::from_vec(1, 5, x.clone()).unwrap();
            let sm = Matrix::from_vec(1, 3, s.clone()).unwrap();
            for fsl in 0..3 {
                let g = input_sensitivity(&model, &xm, &sm, fsl).unwrap();
                let mut e = vec![0.0; 3];
                e[fsl] = 1.0;
                let err = grad_check(|p| model.forward(p, &s, Mode::Eval, Some(&e)).unwrap(), &x, g.row(0), 1e-5).unwrap();
                assert!(err < 1e-4, "seed {seed} fsl {fsl}: {err}");
            }
        }
    }

    #[test]
    fn matched_correlation_finds_the_permutation() {
        let reference = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.2], vec![0.0, 1.0, 0.1, 0.0], vec![0.0, 0.3, 0.0, 1.0]]).unwrap();
        let attention = vec![reference.row(2).to_vec(), reference.row(0).to_vec(), reference.row(1).to_vec()];
        let (c, perm) = matched_correlation(&attention, &reference);
        assert!((c - 1.0).abs() < 1e-12);
        assert_eq!(perm, vec![1, 2, 0]);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..60);
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..8))).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            prop_assert!((auc(&scores, &labels).unwrap() - pair_count(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auc_is_rank_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let labels: Vec<u8> = (0..50).map(|i| (i % 3 == 0) as u8).collect();
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
        }
    }
}
