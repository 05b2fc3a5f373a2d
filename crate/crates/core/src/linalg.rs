//! Dense row-major storage and the few numeric kernels shared by the models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    width: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(width: usize, rows: &[R]) -> Result<Self> {
        let mut m = Self::with_capacity(width, rows.len());
        for r in rows {
            m.push(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn with_capacity(width: usize, rows: usize) -> Self {
        Self {
            width,
            data: Vec::with_capacity(width * rows),
        }
    }

    pub fn from_flat(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 && !data.is_empty() || width > 0 && !data.len().is_multiple_of(width) {
            return Err(Error::LengthMismatch {
                expected: width,
                actual: data.len(),
            });
        }
        Ok(Self { width, data })
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::LengthMismatch {
                expected: self.width,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Zero-width matrices carry no rows; callers track row counts themselves.
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows()).map(move |i| self.row(i))
    }

    /// Selects rows by index.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix::with_capacity(self.width, idx.len());
        for &i in idx {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, n×n).
pub fn solve_spd(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let chol = cholesky(n, a)?;
    Ok(chol.solve(b))
}

/// A reusable Cholesky factorization.
#[derive(Debug, Clone)]
pub struct Cholesky {
    inner: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Cholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_column_slice(b);
        self.inner.solve(&rhs).as_slice().to_vec()
    }
}

pub fn cholesky(n: usize, a: &[f64]) -> Result<Cholesky> {
    let m = DMatrix::from_row_slice(n, n, a);
    m.cholesky()
        .map(|inner| Cholesky { inner })
        .ok_or_else(|| Error::Singular(format!("{n}x{n} normal equations")))
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
