//! Small dense row-major matrix used for window features and model I/O.
//!
//! The training engine keeps its parameters in flat `f64` buffers (see
//! [`super::model`]); this type exists for data that is naturally
//! two-dimensional, like an `n_channels x n_w` window.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from row-major data; rejects length mismatches and non-finite
    /// entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("matrix dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "non-finite matrix entry at ({}, {})",
                i / self.cols,
                i % self.cols
            ))),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        assert!(r < self.rows && c < self.cols, "matrix index out of bounds");
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        assert!(r < self.rows && c < self.cols, "matrix index out of bounds");
        &mut self.data[r * self.cols + c]
    }
}

/// Dot product with four independent accumulators. The fixed accumulation
/// order keeps results bit-reproducible while letting the compiler keep
/// several FMA chains in flight; iterating `chunks_exact` (instead of
/// indexing) lets it drop the bounds checks and vectorize, which roughly
/// halves the cost of every matrix-vector product in the hot path.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let quads_a = a.chunks_exact(4);
    let quads_b = b.chunks_exact(4);
    let tail_a = quads_a.remainder();
    let tail_b = quads_b.remainder();
    let mut acc = [0.0f64; 4];
    for (ca, cb) in quads_a.zip(quads_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in tail_a.iter().zip(tail_b) {
        sum += x * y;
    }
    sum
}

/// `out[r] += (W x)[r]` for a row-major `rows x cols` weight slice.
pub(crate) fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (row, o) in w.chunks_exact(cols).zip(out) {
        *o += dot(row, x);
    }
}

/// `out[c] += (Wᵀ d)[c]`: accumulate rows of W scaled by d.
pub(crate) fn matvec_t_add(w: &[f64], rows: usize, cols: usize, d: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (row, &g) in w.chunks_exact(cols).zip(d) {
        if g == 0.0 {
            continue;
        }
        axpy(g, row, out);
    }
}

/// Rank-1 update `dw[r][c] += d[r] * x[c]` on a row-major gradient slice.
pub(crate) fn outer_add(dw: &mut [f64], rows: usize, cols: usize, d: &[f64], x: &[f64]) {
    debug_assert_eq!(dw.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for (row, &g) in dw.chunks_exact_mut(cols).zip(d) {
        if g == 0.0 {
            continue;
        }
        axpy(g, x, row);
    }
}

/// `out[i] += g * x[i]`. A plain zip is the fastest shape here: each output
/// element is touched once, so there is no reduction to unroll, and manual
/// chunking only gets in the vectorizer's way on the store side.
#[inline]
fn axpy(g: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &xv) in out.iter_mut().zip(x) {
        *o += g * xv;
    }
}
