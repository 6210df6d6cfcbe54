//! Numeric kernels: rotary position transform, pooling heads, pair
//! combination and a finite-difference gradient checker.

mod attention;
mod gradcheck;
mod rotary;

use thiserror::Error;

pub use attention::{Attention1dHead, HeadGradients, DEFAULT_KERNEL_WIDTH};
pub use gradcheck::finite_diff_check;
pub use rotary::{rotary_apply, DEFAULT_ROTARY_BASE};

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("rotary dimension must be even, got {0}")]
    OddDimension(usize),
    #[error("matrix needs at least one row and one column")]
    EmptyMatrix,
    #[error("expected {expected} values, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("no valid rows to pool")]
    NoValidRows,
    #[error("kernel width must be odd, got {0}")]
    EvenKernel(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("parameter file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Row-major L x d matrix of hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, KernelError> {
        if rows == 0 || cols == 0 {
            return Err(KernelError::EmptyMatrix);
        }
        if values.len() != rows * cols {
            return Err(KernelError::ShapeMismatch { expected: rows * cols, found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite(i));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KernelError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(KernelError::ShapeMismatch { expected: cols, found: bad.len() });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }
}

fn check_mask(h: &EmbeddingMatrix, valid: &[bool]) -> Result<(), KernelError> {
    if valid.len() != h.rows() {
        return Err(KernelError::ShapeMismatch { expected: h.rows(), found: valid.len() });
    }
    if !valid.iter().any(|&v| v) {
        return Err(KernelError::NoValidRows);
    }
    Ok(())
}

/// Mean of the valid rows of `h`.
pub fn mean_pool(h: &EmbeddingMatrix, valid: &[bool]) -> Result<Vec<f64>, KernelError> {
    check_mask(h, valid)?;
    let mut out = vec![0.0; h.cols()];
    let mut n = 0usize;
    for i in (0..h.rows()).filter(|&i| valid[i]) {
        for (o, x) in out.iter_mut().zip(h.row(i)) {
            *o += x;
        }
        n += 1;
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(out)
}

/// Attention-weighted pooling of the convolved valid rows of `h`.
pub fn attention1d_pool(h: &EmbeddingMatrix, head: &Attention1dHead, valid: &[bool]) -> Result<Vec<f64>, KernelError> {
    head.pool(h, valid)
}

pub fn head_gradients(
    head: &Attention1dHead,
    h: &EmbeddingMatrix,
    valid: &[bool],
    upstream: &[f64],
) -> Result<HeadGradients, KernelError> {
    head.gradients(h, valid, upstream)
}

/// Elementwise sum of two protein embeddings.
pub fn pair_combine(a: &[f64], b: &[f64]) -> Result<Vec<f64>, KernelError> {
    if a.len() != b.len() {
        return Err(KernelError::ShapeMismatch { expected: a.len(), found: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}
