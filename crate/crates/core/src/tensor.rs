//! Dense kernels in double precision: row-major matrices, vectors, the
//! clamped angle between two vectors with its gradients, and a central
//! difference gradient checker.
//!
//! Every accumulation runs sequentially in index order so results are
//! reproducible bit for bit.

use std::fmt;
use std::ops::{Deref, DerefMut};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Cosines are clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]` before `acos`.
pub const COS_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector { data: vec![0.0; dim] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} entries", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// `y = W x`, written into `out`. Shapes are the caller's responsibility.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    /// `out += Wᵀ y`.
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
    }

    /// `self += scale * u vᵀ`.
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let a = scale * ur;
            if a == 0.0 {
                continue;
            }
            for (w, &vc) in self.row_mut(r).iter_mut().zip(v) {
                *w += a * vc;
            }
        }
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Sum of the row vectors.
    pub fn row_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (acc, &w) in s.iter_mut().zip(self.row(r)) {
                *acc += w;
            }
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("data", &self.to_rows())
            .finish()
    }
}

// Serialized as nested row arrays. An empty matrix loses its column count.
impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.rows).map(|r| self.row(r)).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Matrix::from_rows(&rows).map_err(D::Error::custom)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `W x + b`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vector> {
    if w.cols() != x.len() {
        return Err(Error::shape("affine", format!("x of dim {}", w.cols()), x.len()));
    }
    if w.rows() != b.len() {
        return Err(Error::shape("affine", format!("b of dim {}", w.rows()), b.len()));
    }
    let mut out = vec![0.0; w.rows()];
    w.matvec_into(x, &mut out);
    for (o, bi) in out.iter_mut().zip(b) {
        *o += bi;
    }
    Ok(Vector::from_vec(out))
}

fn clamp_cos(c: f64) -> (f64, bool) {
    let lo = -1.0 + COS_CLAMP;
    let hi = 1.0 - COS_CLAMP;
    if c > hi {
        (hi, true)
    } else if c < lo {
        (lo, true)
    } else {
        (c, false)
    }
}

/// Angle in radians between `u` and `v`, with the cosine clamped away from ±1.
pub fn safe_angle(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("safe_angle", u.len(), v.len()));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector("safe_angle"));
    }
    Ok(clamp_cos(dot(u, v) / (nu * nv)).0.acos())
}

/// Angle, cosine, and their gradients with respect to both arguments.
#[derive(Clone, Debug)]
pub struct AngleGrad {
    pub theta: f64,
    /// Unclamped cosine similarity.
    pub cos: f64,
    /// True when the clamp was active; the angle gradients are then zero.
    pub clamped: bool,
    pub dcos_du: Vec<f64>,
    pub dcos_dv: Vec<f64>,
    pub dtheta_du: Vec<f64>,
    pub dtheta_dv: Vec<f64>,
}

/// Gradients of the cosine similarity and the clamped angle. Inputs must be
/// nonzero and of equal length.
pub fn angle_grad(u: &[f64], v: &[f64]) -> AngleGrad {
    let nu = norm(u);
    let nv = norm(v);
    debug_assert!(nu > 0.0 && nv > 0.0);
    let cos = dot(u, v) / (nu * nv);
    let (cc, clamped) = clamp_cos(cos);
    let theta = cc.acos();
    let inv = 1.0 / (nu * nv);
    let dcos_du: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| vi * inv - cos * ui / (nu * nu))
        .collect();
    let dcos_dv: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| ui * inv - cos * vi / (nv * nv))
        .collect();
    let (dtheta_du, dtheta_dv) = if clamped {
        (vec![0.0; u.len()], vec![0.0; v.len()])
    } else {
        let k = -1.0 / (1.0 - cos * cos).sqrt();
        (
            dcos_du.iter().map(|g| k * g).collect(),
            dcos_dv.iter().map(|g| k * g).collect(),
        )
    };
    AngleGrad {
        theta,
        cos,
        clamped,
        dcos_du,
        dcos_dv,
        dtheta_du,
        dtheta_dv,
    }
}

/// Central-difference check of an analytic gradient.
///
/// Returns the largest per-coordinate `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, p: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if p.len() != analytic.len() {
        return Err(Error::shape("grad_check", p.len(), analytic.len()));
    }
    let mut probe = p.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        probe[i] = p[i] + h;
        let fp = f(&probe);
        probe[i] = p[i] - h;
        let fm = f(&probe);
        probe[i] = p[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation { coordinate: i });
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Central-difference gradient of `f` at `p`.
pub fn numeric_gradient<F>(f: F, p: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = p.to_vec();
    (0..p.len())
        .map(|i| {
            probe[i] = p[i] + h;
            let fp = f(&probe);
            probe[i] = p[i] - h;
            let fm = f(&probe);
            probe[i] = p[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Uniform visiting of every trainable scalar in a fixed order.
///
/// The visiting order defines the flat layout used by the optimizer, the
/// gradient checker, and checkpoints of optimizer moments.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    /// Overwrites every parameter from `flat`, which must hold exactly
    /// `num_params()` values.
    fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn fill_zero(&mut self) {
        self.visit_mut(&mut |s| s.iter_mut().for_each(|v| *v = 0.0));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

impl Parameters for Matrix {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.data)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.data)
    }
}

impl Parameters for Vector {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.data)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.data)
    }
}

impl<T: Parameters> Parameters for Vec<T> {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for p in self {
            p.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for p in self {
            p.visit_mut(f);
        }
    }
}

impl<T: Parameters> Parameters for Option<T> {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        if let Some(p) = self {
            p.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        if let Some(p) = self {
            p.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn affine_identity_and_zero() {
        let y = affine(&Matrix::identity(2), &[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(&*y, &[3.0, 4.0]);
        let y = affine(&Matrix::zeros(2, 2), &[3.0, 4.0], &[1.0, 2.0]).unwrap();
        assert_eq!(&*y, &[1.0, 2.0]);
    }

    #[test]
    fn affine_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Matrix::from_vec(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = affine(&w, &x, &b).unwrap();
        for r in 0..5 {
            let mut s = b[r];
            for c in 0..3 {
                s += w.as_slice()[r * 3 + c] * x[c];
            }
            assert!((y[r] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_rejects_bad_shapes() {
        assert!(matches!(
            affine(&Matrix::zeros(2, 3), &[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::Shape { .. })
        ));
        assert!(affine(&Matrix::zeros(2, 2), &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn safe_angle_examples() {
        assert!((safe_angle(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - PI / 2.0).abs() < 1e-15);
        let same = safe_angle(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(same > 0.0 && same <= 4.5e-4);
        // cos = -1/sqrt(2)
        assert!((safe_angle(&[1.0, 0.0], &[-1.0, 1.0]).unwrap() - 3.0 * PI / 4.0).abs() < 1e-12);
        let opposite = safe_angle(&[1.0, 0.0], &[-2.0, 0.0]).unwrap();
        assert!(opposite < PI && opposite > PI - 4.5e-4);
    }

    #[test]
    fn safe_angle_rejects_zero_vector() {
        assert!(matches!(
            safe_angle(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn grad_check_quadratic() {
        let p = [1.0, 2.0];
        let err = grad_check(|q| q[0] * q[0] + q[1] * q[1], &p, &[2.0, 4.0], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn grad_check_reports_non_finite() {
        let r = grad_check(|q| (q[0] - 1.0).ln(), &[1.0], &[1.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFiniteEvaluation { coordinate: 0 })));
    }

    #[test]
    fn angle_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = angle_grad(&u, &v);
            let err = grad_check(|q| safe_angle(q, &v).unwrap(), &u, &g.dtheta_du, 1e-5).unwrap();
            assert!(err < 1e-7, "{err}");
            let err = grad_check(|q| safe_angle(&u, q).unwrap(), &v, &g.dtheta_dv, 1e-5).unwrap();
            assert!(err < 1e-7, "{err}");
        }
    }

    #[test]
    fn matrix_serializes_as_nested_rows() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.5]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.5]]");
        let back: Matrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Matrix>("[[1.0],[2.0,3.0]]").is_err());
    }

    fn small_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, n)
    }

    proptest! {
        #[test]
        fn affine_is_linear(
            w in unit_vec(12), x in unit_vec(4), y in unit_vec(4),
            a in -1.0f64..1.0, b in -1.0f64..1.0,
        ) {
            let w = Matrix::from_vec(3, 4, w).unwrap();
            let zero = [0.0; 3];
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = affine(&w, &mix, &zero).unwrap();
            let fx = affine(&w, &x, &zero).unwrap();
            let fy = affine(&w, &y, &zero).unwrap();
            for r in 0..3 {
                let rhs = a * fx[r] + b * fy[r];
                prop_assert!((lhs[r] - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn safe_angle_symmetric_and_scale_invariant(
            u in small_vec(3), v in small_vec(3), cu in 0.01f64..100.0, cv in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let base = safe_angle(&u, &v).unwrap();
            let su: Vec<f64> = u.iter().map(|t| cu * t).collect();
            let sv: Vec<f64> = v.iter().map(|t| cv * t).collect();
            let swapped = safe_angle(&sv, &su).unwrap();
            prop_assert!((base - swapped).abs() < 1e-10);
            prop_assert!(base > 0.0 && base < std::f64::consts::PI);
        }
    }
}
