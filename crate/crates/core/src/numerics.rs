//! Dense linear algebra, activations, softmax, categorical sampling and a
//! central-difference gradient oracle.
//!
//! Vectors are plain `f64` slices. Matrices are row-major and own their
//! storage.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty input")]
    Empty,
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("non-finite value encountered at index {0}")]
    NonFinite(usize),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows * cols != data.len() {
            return Err(NumericsError::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let first = rows.first().ok_or(NumericsError::Empty)?;
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumericsError::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Contiguous block of rows `start..end` as a flat slice.
    #[inline]
    pub fn row_block(&self, start: usize, end: usize) -> &[f64] {
        &self.data[start * self.cols..end * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * a ⊗ b` (outer product).
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = alpha * ar;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (x, &bc) in row.iter_mut().zip(b) {
                *x += s * bc;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if m.cols != v.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: m.cols,
            actual: v.len(),
        });
    }
    Ok(m.iter_rows().take(m.rows).map(|row| dot(row, v)).collect())
}

/// `mᵀ · v`.
pub fn matvec_transposed(m: &Matrix, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if m.rows != v.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: m.rows,
            actual: v.len(),
        });
    }
    let mut out = vec![0.0; m.cols];
    for (row, &s) in m.iter_rows().zip(v) {
        if s == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(row) {
            *o += s * x;
        }
    }
    Ok(out)
}

/// Scores `rows · v` for a flat block of rows of width `v.len()`.
pub fn row_dots(rows: &[f64], v: &[f64]) -> Vec<f64> {
    rows.chunks_exact(v.len()).map(|r| dot(r, v)).collect()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn log_sum_exp(v: &[f64]) -> Result<f64, NumericsError> {
    let max = v
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return Err(NumericsError::Empty);
    }
    if !max.is_finite() {
        return Ok(max);
    }
    Ok(max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln())
}

pub fn stable_softmax(scores: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if scores.is_empty() {
        return Err(NumericsError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(NumericsError::NonFinite(i));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Deterministic random stream keyed by `(seed, stream)`.
///
/// Backed by ChaCha8 with its 64-bit stream selector, so sub-streams for
/// albums or workers never overlap and do not depend on draw order
/// elsewhere.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent stream for a sub-task, keyed on this stream's identity
    /// and `tag` (not on how many values have been drawn).
    pub fn substream(&self, tag: u64) -> RngStream {
        let mixed = splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        RngStream::new(self.seed, mixed)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Inverse-CDF draw from a normalized probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> Result<usize, NumericsError> {
    if probs.is_empty() {
        return Err(NumericsError::Empty);
    }
    let mut total = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() {
            return Err(NumericsError::NonFinite(i));
        }
        if p < 0.0 {
            return Err(NumericsError::InvalidDistribution(format!(
                "negative entry {p} at index {i}"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(NumericsError::InvalidDistribution(format!(
            "entries sum to {total}"
        )));
    }
    Ok(sample_weighted(probs, total, rng))
}

/// Draw proportionally to nonnegative `weights` whose sum is `total`.
pub(crate) fn sample_weighted(weights: &[f64], total: f64, rng: &mut RngStream) -> usize {
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    // rounding left u at or past the accumulated total
    last_positive
}

/// Central finite-difference gradient of `f` at `at`.
pub fn finite_diff_grad<F>(mut f: F, at: &[f64], eps: f64) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFinite(i));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}
