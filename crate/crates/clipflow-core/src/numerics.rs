//! Minimal deterministic dense linear algebra and normalization primitives.
//!
//! Everything is double precision and row-major. Operations are pure
//! functions: identical inputs give bit-identical outputs within a build,
//! which the verification suites rely on. There are no BLAS bindings and no
//! sparse paths; the intended scale is a few hundred frames by at most a few
//! hundred feature dimensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Name of the fixed RNG algorithm, recorded in configs so runs can be replayed.
pub const RNG_ALGORITHM: &str = "chacha8";

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Dense vector of finite doubles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Build a vector, rejecting NaN and infinities.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite { context: "Vector::new" });
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(CoreError::DimMismatch {
                context: "Vector::dot",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(dot(&self.data, &other.data))
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

/// Dense row-major matrix of finite doubles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Build a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::DimMismatch {
                context: "DenseMatrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite { context: "DenseMatrix::new" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if v.dim() != self.cols {
            return Err(CoreError::DimMismatch {
                context: "DenseMatrix::matvec",
                expected: self.cols,
                got: v.dim(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), v.as_slice());
        }
        Vector::new(out)
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Scale every entry in place.
    pub fn scale_in_place(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax over a slice (max-subtraction form).
///
/// The output entries are strictly positive and sum to one, which is what
/// makes attention denominators safe to divide by.
pub fn softmax_slice(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(CoreError::EmptyInput { context: "softmax" });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite { context: "softmax" });
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Softmax over a [`Vector`].
pub fn softmax(v: &Vector) -> Result<Vector> {
    Vector::new(softmax_slice(v.as_slice())?)
}

/// Layer normalization: subtract the mean, divide by sqrt(var + eps).
///
/// Rejects vectors shorter than two entries, where the variance carries no
/// information.
pub fn layer_norm_slice(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(CoreError::OutOfRange {
            context: "layer_norm dimension",
            value: v.len() as f64,
            range: "[2, inf)",
        });
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    Ok(v.iter().map(|x| (x - mean) / denom).collect())
}

/// Layer normalization over a [`Vector`].
pub fn layer_norm(v: &Vector, eps: f64) -> Result<Vector> {
    Vector::new(layer_norm_slice(v.as_slice(), eps)?)
}

/// Standard matrix product.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(CoreError::ShapeMismatch {
            context: "matmul",
            detail: format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += aik * b.get(k, j);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Seeded RNG
// ---------------------------------------------------------------------------

/// Reproducible random source.
///
/// The algorithm is fixed (ChaCha, 8 rounds) so a given seed yields the same
/// stream on every platform. A clone continues from the same point as the
/// original, which is how training runs are replayed bit-for-bit.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in 0..n. Panics if n is zero.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.inner.random_range(0..n)
    }

    /// Vector of standard normal draws.
    pub fn normal_vector(&mut self, dim: usize) -> Vector {
        Vector { data: (0..dim).map(|_| self.standard_normal()).collect() }
    }

    /// Matrix of standard normal draws scaled by `scale`.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
        DenseMatrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| scale * self.standard_normal()).collect(),
        }
    }

    /// Derive an independent child stream. Advances this stream by one draw.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.inner.random::<u64>())
    }
}
