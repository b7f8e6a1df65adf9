//! Dense row-major kernels shared by every gradient engine.
//!
//! Everything is `f64`. The only kernel that counts work is [`contract`]
//! (plus the few engine-side helpers that call [`OpCounter::add_flops`]
//! directly), so FLOP totals are exact functions of the shapes involved.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} {:?}", self.rows, self.cols, self.data)
    }
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
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape("axpy", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape("add", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape("sub", other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                self.shape_str(),
                format!("vector of length {}", v.len()),
            ));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `selfᵀ · v`.
    pub fn t_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::shape(
                "t_matvec",
                self.shape_str(),
                format!("vector of length {}", v.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        Ok(out)
    }

    /// `self += a · bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != self.rows || b.len() != self.cols {
            return Err(Error::shape(
                "add_outer",
                self.shape_str(),
                format!("{}x{} outer product", a.len(), b.len()),
            ));
        }
        for (r, ar) in a.iter().enumerate() {
            for (x, bc) in self.row_mut(r).iter_mut().zip(b) {
                *x += ar * bc;
            }
        }
        Ok(())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape_str(), other.shape_str()));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Rank-3 tensor. The dense RTRL sensitivity of an `H`-state layer with
/// respect to an `H × K` weight matrix is naturally `H × H × K`; engines keep
/// it flattened as an `H × (H·K)` [`Matrix`] and use this type only when the
/// three-index view is wanted.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Tensor3 {
            dims: [d0, d1, d2],
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Views a `d0 × (d1·d2)` matrix as `d0 × d1 × d2`.
    pub fn from_flat(m: &Matrix, d1: usize, d2: usize) -> Result<Self> {
        if m.cols() != d1 * d2 {
            return Err(Error::shape(
                "Tensor3::from_flat",
                m.shape_str(),
                format!("{}x{}x{}", m.rows(), d1, d2),
            ));
        }
        Ok(Tensor3 {
            dims: [m.rows(), d1, d2],
            data: m.as_slice().to_vec(),
        })
    }

    pub fn to_flat(&self) -> Matrix {
        let [d0, d1, d2] = self.dims;
        Matrix {
            rows: d0,
            cols: d1 * d2,
            data: self.data.clone(),
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let [_, d1, d2] = self.dims;
        self.data[(i * d1 + j) * d2 + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let [_, d1, d2] = self.dims;
        self.data[(i * d1 + j) * d2 + k] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Tanh,
    Relu,
    Linear,
    Sigmoid,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 4] = [
        ActivationKind::Tanh,
        ActivationKind::Relu,
        ActivationKind::Linear,
        ActivationKind::Sigmoid,
    ];

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Linear => x,
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Exact derivative. relu'(0) is 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Linear => 1.0,
            ActivationKind::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// Returns `(f(preact), f'(preact))` elementwise.
pub fn activation_eval(kind: ActivationKind, preact: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let value = preact.iter().map(|&x| kind.value(x)).collect();
    let derivative = preact.iter().map(|&x| kind.derivative(x)).collect();
    (value, derivative)
}

/// Work and storage counters for one run context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub flops: u64,
    pub peak_trace_values: u64,
    pub stored_activation_values: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    #[inline]
    pub fn add_flops(&mut self, n: u64) {
        self.flops += n;
    }

    /// Records the number of trace values currently held; keeps the maximum.
    pub fn observe_trace_values(&mut self, n: u64) {
        self.peak_trace_values = self.peak_trace_values.max(n);
    }

    /// Records the number of activation values currently held; keeps the maximum.
    pub fn observe_stored_activations(&mut self, n: u64) {
        self.stored_activation_values = self.stored_activation_values.max(n);
    }
}

/// `J · S` for `J: A×B`, `S: B×P`. Adds exactly `2·A·B·P` to `ops.flops`.
pub fn contract(j: &Matrix, s: &Matrix, ops: &mut OpCounter) -> Result<Matrix> {
    if j.cols != s.rows {
        return Err(Error::shape(
            "contract",
            format!("J {}", j.shape_str()),
            format!("S {}", s.shape_str()),
        ));
    }
    let (a, b, p) = (j.rows, j.cols, s.cols);
    let mut out = Matrix::zeros(a, p);
    for r in 0..a {
        let out_row = &mut out.data[r * p..(r + 1) * p];
        for k in 0..b {
            let coef = j.data[r * b + k];
            let s_row = &s.data[k * p..(k + 1) * p];
            for (o, sv) in out_row.iter_mut().zip(s_row) {
                *o += coef * sv;
            }
        }
    }
    ops.add_flops(2 * (a * b * p) as u64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn tanh_at_zero() {
        let (v, d) = activation_eval(ActivationKind::Tanh, &[0.0, 0.0]);
        assert_eq!(v, vec![0.0, 0.0]);
        assert_eq!(d, vec![1.0, 1.0]);
    }

    #[test]
    fn linear_is_identity() {
        let (v, d) = activation_eval(ActivationKind::Linear, &[3.5, -2.0]);
        assert_eq!(v, vec![3.5, -2.0]);
        assert_eq!(d, vec![1.0, 1.0]);
    }

    #[test]
    fn tanh_derivative_matches_central_difference() {
        let h = 1e-6;
        let fd = ((0.5f64 + h).tanh() - (0.5f64 - h).tanh()) / (2.0 * h);
        let (_, d) = activation_eval(ActivationKind::Tanh, &[0.5]);
        // Central-difference truncation at h=1e-6 is ~1e-13, rounding ~1e-10.
        assert!((d[0] - fd).abs() < 1e-9, "{} vs {}", d[0], fd);
    }

    #[test]
    fn all_derivatives_match_finite_differences() {
        let h = 1e-6;
        for kind in ActivationKind::ALL {
            let mut x: f64 = -3.0;
            while x <= 3.0 {
                if kind == ActivationKind::Relu && x.abs() < 1e-3 {
                    x += 0.05;
                    continue;
                }
                let fd = (kind.value(x + h) - kind.value(x - h)) / (2.0 * h);
                assert!(
                    (kind.derivative(x) - fd).abs() < 1e-7,
                    "{kind:?} at {x}: {} vs {fd}",
                    kind.derivative(x)
                );
                x += 0.05;
            }
        }
    }

    #[test]
    fn relu_kink_is_zero() {
        assert_eq!(ActivationKind::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn contract_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random(3, 5, &mut rng);
        let mut ops = OpCounter::new();
        assert_eq!(contract(&Matrix::identity(3), &s, &mut ops).unwrap(), s);
        assert_eq!(
            contract(&Matrix::zeros(3, 3), &s, &mut ops).unwrap(),
            Matrix::zeros(3, 5)
        );
    }

    #[test]
    fn contract_matches_index_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = random(2, 2, &mut rng);
        let s = random(2, 3, &mut rng);
        let got = contract(&j, &s, &mut OpCounter::new()).unwrap();
        for a in 0..2 {
            for p in 0..3 {
                let mut acc = 0.0;
                for b in 0..2 {
                    acc += j.as_slice()[a * 2 + b] * s.as_slice()[b * 3 + p];
                }
                assert!((got[(a, p)] - acc).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn contract_counts_flops_exactly() {
        let mut ops = OpCounter::new();
        contract(&Matrix::zeros(4, 3), &Matrix::zeros(3, 7), &mut ops).unwrap();
        assert_eq!(ops.flops, 2 * 4 * 3 * 7);
        ops.reset();
        assert_eq!(ops, OpCounter::default());
    }

    #[test]
    fn contract_rejects_mismatch() {
        let err = contract(&Matrix::zeros(2, 3), &Matrix::zeros(4, 1), &mut OpCounter::new()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("J 2x3") && msg.contains("S 4x1"), "{msg}");
    }

    #[test]
    fn tensor3_flat_view() {
        let m = Matrix::from_fn(2, 6, |r, c| (r * 6 + c) as f64);
        let t = Tensor3::from_flat(&m, 2, 3).unwrap();
        assert_eq!(t.get(1, 1, 2), m[(1, 5)]);
        assert_eq!(t.to_flat(), m);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn contract_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = random(3, 4, &mut rng);
            let s1 = random(4, 5, &mut rng);
            let s2 = random(4, 5, &mut rng);
            let mut ops = OpCounter::new();
            let mut mix = s1.scaled(a);
            mix.axpy(b, &s2).unwrap();
            let lhs = contract(&j, &mix, &mut ops).unwrap();
            let mut rhs = contract(&j, &s1, &mut ops).unwrap().scaled(a);
            rhs.axpy(b, &contract(&j, &s2, &mut ops).unwrap()).unwrap();
            let err = lhs.sub(&rhs).unwrap().norm() / rhs.norm().max(1e-300);
            prop_assert!(err <= 1e-12 || rhs.norm() < 1e-12);
        }
    }
}
