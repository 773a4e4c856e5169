//! Dense row-major `f32` matrices and the few kernels the pruner composes.
//!
//! Storage is always `f32`. Every reduction (dot products, norms, softmax
//! sums, means) accumulates in `f64` with a fixed loop order and rounds once
//! at the end, so results are bit-reproducible on a given platform.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("{op} requires a non-empty input")]
    Empty { op: &'static str },
    #[error("top-k of {k} requested from {len} scores")]
    KTooLarge { k: usize, len: usize },
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
}

/// Dense 2-D array of `f32`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(TensorError::DataLength { rows, cols, len: data.len() });
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

    /// Builds a matrix from equal-length rows. Panics on ragged input; meant
    /// for literals in tests and small fixtures.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the listed rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix, TensorError> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(TensorError::RowOutOfRange { index: i, rows: self.rows });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix { rows: indices.len(), cols: self.cols, data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

/// Dot product accumulated in `f64`, left to right.
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |acc, (&x, &y)| acc + x as f64 * y as f64)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    if a.cols != b.rows {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    matmul_transposed(a, &b.transpose())
}

/// `a · btᵀ`, where `bt` is already stored transposed (one row per output column).
pub fn matmul_transposed(a: &Matrix, bt: &Matrix) -> Result<Matrix, TensorError> {
    if a.cols != bt.cols {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_transposed",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: bt.rows,
            right_cols: bt.cols,
        });
    }
    let mut out = Matrix::zeros(a.rows, bt.rows);
    for i in 0..a.rows {
        let lhs = a.row(i);
        let dst = out.row_mut(i);
        for (j, slot) in dst.iter_mut().enumerate() {
            *slot = dot_f64(lhs, bt.row(j)) as f32;
        }
    }
    Ok(out)
}

/// Divides every row by `max(‖row‖₂, eps)`.
pub fn l2_normalize_rows(m: &Matrix, eps: f32) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let norm = dot_f64(row, row).sqrt().max(eps as f64);
        for x in row.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
    out
}

/// Numerically stable softmax (max-subtracted, `f64` internally).
pub fn softmax(v: &[f32]) -> Result<Vec<f32>, TensorError> {
    if v.is_empty() {
        return Err(TensorError::Empty { op: "softmax" });
    }
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let exps: Vec<f64> = v.iter().map(|&x| (x as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| (e / sum) as f32).collect())
}

/// Ordering applied among equal scores in [`topk_indices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Earlier index wins ties, preserving temporal order.
    #[default]
    LowerIndexFirst,
}

/// Indices of the `k` largest scores, returned in ascending index order.
pub fn topk_indices(scores: &[f32], k: usize, tie_break: TieBreak) -> Result<Vec<usize>, TensorError> {
    if k > scores.len() {
        return Err(TensorError::KTooLarge { k, len: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    match tie_break {
        TieBreak::LowerIndexFirst => {
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        }
    }
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Entry-wise sign with `sign(0) = +1`.
pub fn sign_binarize(m: &Matrix) -> Matrix {
    m.map(|x| if x >= 0.0 { 1.0 } else { -1.0 })
}

/// The axis that [`mean_axis`] reduces away.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Average down each column; an N×L input yields length L.
    Rows,
    /// Average across each row; an N×L input yields length N.
    Cols,
}

pub fn mean_axis(m: &Matrix, axis: Axis) -> Result<Vec<f32>, TensorError> {
    match axis {
        Axis::Cols => {
            if m.cols == 0 {
                return Err(TensorError::Empty { op: "mean over columns" });
            }
            Ok(m.iter_rows().map(|r| (r.iter().map(|&x| x as f64).sum::<f64>() / m.cols as f64) as f32).collect())
        }
        Axis::Rows => {
            if m.rows == 0 {
                return Err(TensorError::Empty { op: "mean over rows" });
            }
            let mut acc = vec![0.0f64; m.cols];
            for r in m.iter_rows() {
                for (a, &x) in acc.iter_mut().zip(r) {
                    *a += x as f64;
                }
            }
            Ok(acc.into_iter().map(|s| (s / m.rows as f64) as f32).collect())
        }
    }
}
