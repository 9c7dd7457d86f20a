//! Grouped ranking data: a synthetic generator with known factor structure,
//! CSV exchange, input normalization, and head-to-tail scenario partitions.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario_aware::{batch_moments, Mode, MovingStats, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::tensor::{dot, Matrix};

/// One candidate route shown in one navigation request.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingSample {
    pub group_id: u64,
    pub label: u8,
    pub scenario_id: u32,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
}

/// Column-oriented collection of samples with fixed dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub group_ids: Vec<u64>,
    pub labels: Vec<u8>,
    pub scenario_ids: Vec<u32>,
    /// One scenario vector per row.
    pub s: Matrix,
    /// One feature vector per row.
    pub x: Matrix,
}

impl Dataset {
    pub fn empty(scenario_dim: usize, feature_dim: usize) -> Self {
        Dataset {
            group_ids: Vec::new(),
            labels: Vec::new(),
            scenario_ids: Vec::new(),
            s: Matrix::zeros(0, scenario_dim),
            x: Matrix::zeros(0, feature_dim),
        }
    }

    pub fn from_samples(samples: &[RankingSample], scenario_dim: usize, feature_dim: usize) -> Result<Self> {
        let mut s = Vec::with_capacity(samples.len() * scenario_dim);
        let mut x = Vec::with_capacity(samples.len() * feature_dim);
        for r in samples {
            if r.s.len() != scenario_dim || r.x.len() != feature_dim {
                return Err(Error::shape(
                    "dataset row",
                    format!("s {scenario_dim}, x {feature_dim}"),
                    format!("s {}, x {}", r.s.len(), r.x.len()),
                ));
            }
            s.extend_from_slice(&r.s);
            x.extend_from_slice(&r.x);
        }
        Ok(Dataset {
            group_ids: samples.iter().map(|r| r.group_id).collect(),
            labels: samples.iter().map(|r| r.label).collect(),
            scenario_ids: samples.iter().map(|r| r.scenario_id).collect(),
            s: Matrix::from_vec(samples.len(), scenario_dim, s)?,
            x: Matrix::from_vec(samples.len(), feature_dim, x)?,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn scenario_dim(&self) -> usize {
        self.s.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn sample(&self, i: usize) -> RankingSample {
        RankingSample {
            group_id: self.group_ids[i],
            label: self.labels[i],
            scenario_id: self.scenario_ids[i],
            s: self.s.row(i).to_vec(),
            x: self.x.row(i).to_vec(),
        }
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let gather = |m: &Matrix| {
            let mut out = Matrix::zeros(idx.len(), m.cols());
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).copy_from_slice(m.row(i));
            }
            out
        };
        Dataset {
            group_ids: idx.iter().map(|&i| self.group_ids[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            scenario_ids: idx.iter().map(|&i| self.scenario_ids[i]).collect(),
            s: gather(&self.s),
            x: gather(&self.x),
        }
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }
}

/// Generator settings for grouped synthetic ranking data.
///
/// Each of `k_true` latent factors has a unit preference vector over the
/// features. The factor vectors share a common component whose weight sets
/// their pairwise cosine to exactly `entanglement`. Scenario vectors select a
/// soft mixture of factors through `softmax(A s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k_true: usize,
    pub feature_dim: usize,
    pub scenario_dim: usize,
    pub candidates: usize,
    /// Gumbel noise scale on utilities.
    pub tau: f64,
    /// Pairwise cosine between factor preference vectors, in `[0, 1)`.
    pub entanglement: f64,
    /// Correlation shared by all feature dimensions of one candidate.
    pub feature_corr: f64,
    /// Standard deviation of the scenario-to-gate map entries.
    pub gate_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            k_true: 4,
            feature_dim: 16,
            scenario_dim: 8,
            candidates: 5,
            tau: 0.1,
            entanglement: 0.45,
            feature_corr: 0.2,
            gate_scale: 2.0,
            seed: 7,
        }
    }
}

/// The hidden structure behind a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `k_true × feature_dim`, unit rows.
    pub betas: Matrix,
    /// `k_true × scenario_dim`.
    pub gate_map: Matrix,
}

/// Largest bin count for the sign-pattern scenario ids.
pub const SCENARIO_BITS: usize = 7;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k_true == 0 {
            return fail("k_true must be at least 1");
        }
        if self.scenario_dim == 0 {
            return fail("scenario_dim must be positive");
        }
        if self.candidates < 2 {
            return fail("candidates must be at least 2");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be positive");
        }
        if !(0.0..1.0).contains(&self.entanglement) {
            return fail("entanglement must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.feature_corr) {
            return fail("feature_corr must lie in [0, 1)");
        }
        if !(self.gate_scale >= 0.0) {
            return fail("gate_scale must be nonnegative");
        }
        // One private block of at least one feature per factor, plus a shared block.
        if self.feature_dim < self.k_true + 1 {
            return fail("feature_dim must exceed k_true");
        }
        Ok(())
    }

    /// Factor vectors and gate map, a pure function of the seed.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        self.validate()?;
        let mut rng = stream_rng(self.seed, 0);
        let k = self.k_true;
        let d = self.feature_dim;
        // Private blocks share the first `block * k` features; the rest is shared.
        let block = (d - 1) / k;
        let shared_start = block * k;
        let unit = |v: Vec<f64>| {
            let n = dot(&v, &v).sqrt();
            v.into_iter().map(|e| e / n).collect::<Vec<f64>>()
        };
        let draw = |rng: &mut ChaCha8Rng, range: std::ops::Range<usize>| {
            let mut v = vec![0.0; d];
            for e in &mut v[range] {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                *e = sign * rng.gen_range(0.5..1.5);
            }
            unit(v)
        };
        let shared = draw(&mut rng, shared_start..d);
        let a = self.entanglement.sqrt();
        let b = (1.0 - self.entanglement).sqrt();
        let mut betas = Matrix::zeros(k, d);
        for f in 0..k {
            let own = draw(&mut rng, f * block..(f + 1) * block);
            for ((dst, sh), ow) in betas.row_mut(f).iter_mut().zip(&shared).zip(&own) {
                *dst = a * sh + b * ow;
            }
        }
        let mut gate_map = Matrix::zeros(k, self.scenario_dim);
        for v in gate_map.as_mut_slice() {
            *v = self.gate_scale * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(GroundTruth { betas, gate_map })
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for (line, key, value) in parse_kv(text)? {
            spec.set(&key, &value).map_err(|m| Error::Parse { line, message: m })?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        match key {
            "k_true" => self.k_true = num(key, value)?,
            "feature_dim" => self.feature_dim = num(key, value)?,
            "scenario_dim" => self.scenario_dim = num(key, value)?,
            "candidates" => self.candidates = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "entanglement" => self.entanglement = num(key, value)?,
            "feature_corr" => self.feature_corr = num(key, value)?,
            "gate_scale" => self.gate_scale = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Ground-truth factor mixture `softmax(A s)`.
pub fn true_gates(truth: &GroundTruth, s: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; truth.gate_map.rows()];
    truth.gate_map.matvec_into(s, &mut z);
    softmax(&z)
}

/// Noise-free utility `Σ_f g_f β_fᵀ x`.
pub fn true_utility(truth: &GroundTruth, s: &[f64], x: &[f64]) -> f64 {
    let g = true_gates(truth, s);
    let mut bx = vec![0.0; truth.betas.rows()];
    truth.betas.matvec_into(x, &mut bx);
    dot(&g, &bx)
}

/// Sign pattern of the leading scenario coordinates.
pub fn scenario_bucket(s: &[f64]) -> u32 {
    s.iter()
        .take(SCENARIO_BITS)
        .enumerate()
        .fold(0, |acc, (i, &v)| if v >= 0.0 { acc | (1 << i) } else { acc })
}

/// Draws `n_groups` groups from the main data stream.
pub fn generate(spec: &SynthSpec, n_groups: usize) -> Result<Dataset> {
    generate_stream(spec, n_groups, 1)
}

/// Draws groups from an independent random stream, so train and test sets
/// can share one ground truth. Stream 0 is reserved for the ground truth.
pub fn generate_stream(spec: &SynthSpec, n_groups: usize, stream: u64) -> Result<Dataset> {
    let truth = spec.ground_truth()?;
    if stream == 0 {
        return Err(Error::Config("data stream 0 is reserved".into()));
    }
    let mut rng = stream_rng(spec.seed, stream);
    let gumbel = Gumbel::new(0.0, spec.tau).map_err(|e| Error::Config(e.to_string()))?;
    let c = spec.candidates;
    let n = n_groups * c;
    let mut out = Dataset {
        group_ids: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        scenario_ids: Vec::with_capacity(n),
        s: Matrix::zeros(n, spec.scenario_dim),
        x: Matrix::zeros(n, spec.feature_dim),
    };
    let rho = spec.feature_corr.sqrt();
    let rest = (1.0 - spec.feature_corr).sqrt();
    for g in 0..n_groups {
        let s: Vec<f64> = (0..spec.scenario_dim).map(|_| rng.sample(StandardNormal)).collect();
        let gates = true_gates(&truth, &s);
        let scenario_id = scenario_bucket(&s);
        let mut best = 0;
        let mut best_u = f64::NEG_INFINITY;
        for k in 0..c {
            let row = g * c + k;
            let common: f64 = rng.sample(StandardNormal);
            for v in out.x.row_mut(row) {
                *v = rho * common + rest * rng.sample::<f64, _>(StandardNormal);
            }
            out.s.row_mut(row).copy_from_slice(&s);
            let mut bx = vec![0.0; spec.k_true];
            truth.betas.matvec_into(out.x.row(row), &mut bx);
            let u = dot(&gates, &bx) + gumbel.sample(&mut rng);
            if u > best_u {
                best_u = u;
                best = k;
            }
            out.group_ids.push(g as u64);
            out.scenario_ids.push(scenario_id);
            out.labels.push(0);
        }
        out.labels[g * c + best] = 1;
    }
    Ok(out)
}

/// Bayes-optimal click probability: the softmax over each group of the
/// noise-free utilities divided by `τ`. Groups must be contiguous.
pub fn oracle_scores(spec: &SynthSpec, truth: &GroundTruth, data: &Dataset) -> Vec<f64> {
    let u: Vec<f64> = (0..data.len())
        .map(|i| true_utility(truth, data.s.row(i), data.x.row(i)) / spec.tau)
        .collect();
    let mut out = vec![0.0; data.len()];
    let mut start = 0;
    while start < data.len() {
        let mut end = start + 1;
        while end < data.len() && data.group_ids[end] == data.group_ids[start] {
            end += 1;
        }
        out[start..end].copy_from_slice(&softmax(&u[start..end]));
        start = end;
    }
    out
}

// CSV exchange

/// Writes the schema `group_id,label,scenario_id,s_0..,x_0..`. Values use the
/// shortest text that parses back to the same double.
pub fn write_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["group_id".to_string(), "label".into(), "scenario_id".into()];
    header.extend((0..data.scenario_dim()).map(|i| format!("s_{i}")));
    header.extend((0..data.feature_dim()).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..data.len() {
        let mut rec = vec![
            data.group_ids[i].to_string(),
            data.labels[i].to_string(),
            data.scenario_ids[i].to_string(),
        ];
        rec.extend(data.s.row(i).iter().map(f64::to_string));
        rec.extend(data.x.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(data, std::io::BufWriter::new(f))
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn column_dims(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let bad = |m: String| Error::Parse { line: 1, message: m };
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 3 || fields[..3] != ["group_id", "label", "scenario_id"] {
        return Err(bad("header must start with group_id,label,scenario_id".into()));
    }
    let ds = fields[3..].iter().take_while(|f| f.starts_with("s_")).count();
    let dx = fields.len() - 3 - ds;
    for (i, f) in fields[3..3 + ds].iter().enumerate() {
        if *f != format!("s_{i}") {
            return Err(bad(format!("expected column s_{i}, found `{f}`")));
        }
    }
    for (i, f) in fields[3 + ds..].iter().enumerate() {
        if *f != format!("x_{i}") {
            return Err(bad(format!("expected column x_{i}, found `{f}`")));
        }
    }
    if dx == 0 {
        return Err(bad("no feature columns".into()));
    }
    Ok((ds, dx))
}

/// Parses the CSV schema written by [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h.map_err(csv_io)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let (ds, dx) = column_dims(&header)?;
    let width = 3 + ds + dx;
    let mut out = Dataset::empty(ds, dx);
    let mut s = Vec::new();
    let mut x = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_io)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |m: String| Error::Parse { line, message: m };
        if rec.len() != width {
            return Err(bad(format!("expected {width} fields, found {}", rec.len())));
        }
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| bad(format!("field {} is not an integer: `{}`", i + 1, &rec[i])))
        };
        let group = int(0)?;
        let label = int(1)?;
        if label > 1 {
            return Err(bad(format!("label must be 0 or 1, found {label}")));
        }
        let scenario = u32::try_from(int(2)?).map_err(|_| bad("scenario_id out of range".into()))?;
        for i in 3..width {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| bad(format!("field {} is not a number: `{}`", i + 1, &rec[i])))?;
            if !v.is_finite() {
                return Err(bad(format!("field {} is not finite", i + 1)));
            }
            if i < 3 + ds {
                s.push(v);
            } else {
                x.push(v);
            }
        }
        out.group_ids.push(group);
        out.labels.push(label as u8);
        out.scenario_ids.push(scenario);
    }
    let n = out.labels.len();
    out.s = Matrix::from_vec(n, ds, s)?;
    out.x = Matrix::from_vec(n, dx, x)?;
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

// Normalization

/// Moving statistics for the raw feature and scenario inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub x: MovingStats,
    pub s: MovingStats,
    pub momentum: f64,
    pub eps: f64,
}

impl NormalizerState {
    pub fn new(feature_dim: usize, scenario_dim: usize) -> Self {
        NormalizerState {
            x: MovingStats::new(feature_dim),
            s: MovingStats::new(scenario_dim),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }
}

fn standardize(m: &Matrix, stats: &MovingStats, eps: f64) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for ((v, mu), var) in out.row_mut(r).iter_mut().zip(&stats.mean).zip(&stats.var) {
            *v = (*v - mu) / (var + eps).sqrt();
        }
    }
    out
}

/// Standardizes `x` and `s` per dimension. Train mode uses the batch moments
/// and folds them into the moving statistics; eval mode uses the moving
/// statistics.
pub fn normalize(state: &mut NormalizerState, x: &Matrix, s: &Matrix, mode: Mode) -> (Matrix, Matrix) {
    match mode {
        Mode::Train => {
            let bx = batch_moments(x);
            let bs = batch_moments(s);
            let out = (standardize(x, &bx, state.eps), standardize(s, &bs, state.eps));
            state.x.update(&bx, state.momentum);
            state.s.update(&bs, state.momentum);
            out
        }
        Mode::Eval => (standardize(x, &state.x, state.eps), standardize(s, &state.s, state.eps)),
    }
}

// Scenario partitions

pub const DEFAULT_PARTITION: [f64; 3] = [0.15, 0.50, 0.85];

/// Scenario ids of the four head-to-tail subsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPartition {
    pub subsets: [Vec<u32>; 4],
}

impl ScenarioPartition {
    pub fn subset_of(&self, id: u32) -> Option<usize> {
        self.subsets.iter().position(|s| s.contains(&id))
    }
}

/// Sorts scenario ids by descending sample count (ties by id) and cuts the
/// order where the cumulative sample share is nearest each ratio. The first
/// subset always receives the most frequent id.
pub fn partition_scenarios(scenario_ids: &[u32], ratios: [f64; 3]) -> ScenarioPartition {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &id in scenario_ids {
        *counts.entry(id).or_default() += 1;
    }
    let mut order: Vec<(u32, usize)> = counts.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let total = scenario_ids.len() as f64;
    let mut cum = vec![0usize; order.len() + 1];
    for (i, (_, c)) in order.iter().enumerate() {
        cum[i + 1] = cum[i] + c;
    }
    let mut cuts = [0usize; 3];
    let mut lo = order.len().min(1);
    for (cut, &r) in cuts.iter_mut().zip(&ratios) {
        let target = r * total;
        let mut best = lo;
        for p in lo..=order.len() {
            if (cum[p] as f64 - target).abs() < (cum[best] as f64 - target).abs() {
                best = p;
            }
        }
        *cut = best;
        lo = best;
    }
    let bounds = [0, cuts[0], cuts[1], cuts[2], order.len()];
    let subsets = std::array::from_fn(|k| order[bounds[k]..bounds[k + 1]].iter().map(|p| p.0).collect());
    ScenarioPartition { subsets }
}

// Key-value configuration files

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
/// Returns `(line, key, value)` triples in file order.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::auc;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            k_true: 3,
            feature_dim: 8,
            scenario_dim: 4,
            candidates: 4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn one_positive_per_group() {
        let d = generate(&small_spec(), 300).unwrap();
        assert_eq!(d.len(), 1200);
        for g in 0..300 {
            let pos: u32 = (0..4).map(|k| u32::from(d.labels[g * 4 + k])).sum();
            assert_eq!(pos, 1);
            assert!((0..4).all(|k| d.group_ids[g * 4 + k] == g as u64));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate(&small_spec(), 50).unwrap();
        let b = generate(&small_spec(), 50).unwrap();
        assert_eq!(a, b);
        let c = generate_stream(&small_spec(), 50, 2).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn factor_vectors_have_the_requested_cosine() {
        let spec = SynthSpec::default();
        let t = spec.ground_truth().unwrap();
        for i in 0..spec.k_true {
            assert!((dot(t.betas.row(i), t.betas.row(i)) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!((dot(t.betas.row(i), t.betas.row(j)) - spec.entanglement).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_factor_without_noise_is_linear_ranking() {
        let spec = SynthSpec {
            k_true: 1,
            tau: 1e-12,
            ..small_spec()
        };
        let t = spec.ground_truth().unwrap();
        let d = generate(&spec, 200).unwrap();
        for g in 0..200 {
            let scores: Vec<f64> = (0..4).map(|k| dot(t.betas.row(0), d.x.row(g * 4 + k))).collect();
            let best = (0..4).max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap()).unwrap();
            assert_eq!(d.labels[g * 4 + best], 1);
        }
    }

    #[test]
    fn oracle_scorer_is_nearly_perfect() {
        let spec = SynthSpec::default();
        let t = spec.ground_truth().unwrap();
        let d = generate(&spec, 10_000).unwrap();
        let a = auc(&oracle_scores(&spec, &t, &d), &d.labels).unwrap();
        assert!(a >= 0.95, "oracle AUC {a}");
    }

    #[test]
    fn csv_round_trip() {
        let d = generate(&small_spec(), 20).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_examples_and_errors() {
        let ok = "group_id,label,scenario_id,s_0,x_0,x_1\n1,1,3,0.5,1,2\n1,0,3,0.5,-1,2.5\n";
        let d = read_csv(ok.as_bytes()).unwrap();
        assert_eq!((d.len(), d.scenario_dim(), d.feature_dim()), (2, 1, 2));
        assert_eq!(d.sample(1).x, vec![-1.0, 2.5]);

        let bad_label = "group_id,label,scenario_id,s_0,x_0\n1,1,0,0,0\n1,2,0,0,0\n";
        match read_csv(bad_label.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("label"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "group_id,label,scenario_id,s_0,x_0\n1,1,0,0\n";
        assert!(matches!(read_csv(ragged.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let text = "group_id,label,scenario_id,s_0,x_0\n1,1,0,abc,0\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_csv("".as_bytes()), Err(Error::Parse { line: 1, .. })));
        let no_header = "1,1,0,0,0\n";
        assert!(matches!(read_csv(no_header.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn normalize_examples() {
        let mut st = NormalizerState::new(2, 1);
        let x = Matrix::from_rows(&[vec![3.0, 1.0], vec![3.0, -1.0]]).unwrap();
        let s = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let (nx, _) = normalize(&mut st, &x, &s, Mode::Train);
        assert_eq!(nx[(0, 0)], 0.0);
        assert_eq!(nx[(1, 0)], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let col: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x = Matrix::from_vec(n, 1, col).unwrap();
        let mut st = NormalizerState::new(1, 1);
        let (nx, _) = normalize(&mut st, &x, &Matrix::zeros(n, 1), Mode::Train);
        let m = batch_moments(&nx);
        assert!(m.mean[0].abs() < 1e-10 && (m.var[0] - 1.0).abs() < 1e-3);

        // Eval uses externally accumulated moving statistics.
        let mut st = NormalizerState::new(1, 1);
        let mut mean = 0.0;
        let mut var = 1.0;
        for k in 0..5 {
            let b = Matrix::from_vec(3, 1, vec![k as f64, 2.0 * k as f64, 1.0]).unwrap();
            let bm = batch_moments(&b);
            mean = 0.99 * mean + 0.01 * bm.mean[0];
            var = 0.99 * var + 0.01 * bm.var[0];
            normalize(&mut st, &b, &Matrix::zeros(3, 1), Mode::Train);
        }
        let probe = Matrix::from_vec(1, 1, vec![4.0]).unwrap();
        let (nx, _) = normalize(&mut st, &probe, &Matrix::zeros(1, 1), Mode::Eval);
        assert!((nx[(0, 0)] - (4.0 - mean) / (var + 1e-5f64).sqrt()).abs() < 1e-12);
    }

    fn oracle_partition(ids: &[u32]) -> Vec<usize> {
        // Sort-and-scan: sizes of the four subsets in scenario count.
        let mut counts: Vec<(u32, usize)> = Vec::new();
        for &id in ids {
            match counts.iter_mut().find(|c| c.0 == id) {
                Some(c) => c.1 += 1,
                None => counts.push((id, 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let total = ids.len() as f64;
        let mut sizes = Vec::new();
        let mut prev = 0;
        let mut lo = 1;
        for r in DEFAULT_PARTITION {
            let mut cum = counts[..lo].iter().map(|c| c.1).sum::<usize>() as f64;
            let mut best = (lo, (cum - r * total).abs());
            for p in lo + 1..=counts.len() {
                cum += counts[p - 1].1 as f64;
                if (cum - r * total).abs() < best.1 {
                    best = (p, (cum - r * total).abs());
                }
            }
            sizes.push(best.0 - prev);
            prev = best.0;
            lo = best.0;
        }
        sizes.push(counts.len() - prev);
        sizes
    }

    #[test]
    fn partition_examples() {
        let uniform: Vec<u32> = (0..4).flat_map(|id| vec![id; 10]).collect();
        let p = partition_scenarios(&uniform, DEFAULT_PARTITION);
        assert_eq!(p.subsets.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1, 1, 1]);

        let p = partition_scenarios(&[5; 30], DEFAULT_PARTITION);
        assert_eq!(p.subsets[0], vec![5]);
        assert!(p.subsets[1..].iter().all(Vec::is_empty));

        // Zipf counts over 72 ids.
        let ids: Vec<u32> = (0..72u32).flat_map(|id| vec![id; (10_000.0 / (id as f64 + 1.0)) as usize]).collect();
        let p = partition_scenarios(&ids, DEFAULT_PARTITION);
        let sizes: Vec<usize> = p.subsets.iter().map(Vec::len).collect();
        assert_eq!(sizes, oracle_partition(&ids));
        let total = ids.len() as f64;
        let count = |k: usize| ids.iter().filter(|&&id| p.subset_of(id) == Some(k)).count() as f64 / total;
        let largest_share = 10_000.0 / total;
        let expect = [0.15, 0.35, 0.35, 0.15];
        for (k, e) in expect.iter().enumerate() {
            assert!((count(k) - e).abs() <= largest_share, "subset {k}: {}", count(k));
        }
    }

    #[test]
    fn kv_spec_file() {
        let spec = SynthSpec::from_kv("# comment\nk_true = 2\ntau=0.5 # trailing\n\nseed = 11\n").unwrap();
        assert_eq!((spec.k_true, spec.tau, spec.seed), (2, 0.5, 11));
        assert!(matches!(SynthSpec::from_kv("bogus = 1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(SynthSpec::from_kv("k_true 3"), Err(Error::Parse { line: 1, .. })));
        assert!(SynthSpec::from_kv("tau = -1").is_err());
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_covering(ids in proptest::collection::vec(0u32..20, 1..300)) {
            let p = partition_scenarios(&ids, DEFAULT_PARTITION);
            let mut seen: Vec<u32> = p.subsets.iter().flatten().copied().collect();
            let n = seen.len();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n);
            for id in &ids {
                prop_assert!(p.subset_of(*id).is_some());
            }
            prop_assert!(!p.subsets[0].is_empty());
        }
    }
}
