//! Dense row-major matrices and row-stochastic prediction matrices.

use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before renormalization so that
/// log-based scores stay finite on one-hot outputs.
pub const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact on a zero-width matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// New matrix made of the given rows, in order (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Clamps to `[PROB_FLOOR, 1]` and rescales to unit sum.
pub fn clamp_normalize(row: &mut [f64]) {
    for v in row.iter_mut() {
        *v = if v.is_nan() {
            PROB_FLOOR
        } else {
            v.clamp(PROB_FLOOR, 1.0)
        };
    }
    normalize(row);
}

/// Rescales a non-negative row to unit sum. An all-zero row becomes uniform.
pub fn normalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 && s.is_finite() {
        for v in row.iter_mut() {
            *v /= s;
        }
    } else {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
    }
}

/// N x C matrix whose rows are probability distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Matrix);

impl ProbMatrix {
    pub const ROW_SUM_TOL: f64 = 1e-9;

    /// Validates that every row is a probability distribution.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(Error::ShapeMismatch("probability matrix with 0 classes".into()));
        }
        for (i, row) in m.rows_iter().enumerate() {
            if !is_probability_row(row) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} is not a probability distribution: {row:?}"
                )));
            }
        }
        Ok(ProbMatrix(m))
    }

    /// Builds from arbitrary non-negative scores, normalizing each row.
    pub fn normalized(mut m: Matrix) -> Self {
        for i in 0..m.nrows() {
            normalize(m.row_mut(i));
        }
        ProbMatrix(m)
    }

    /// Builds from raw model outputs with the floor clamp applied.
    pub fn clamped(mut m: Matrix) -> Self {
        for i in 0..m.nrows() {
            clamp_normalize(m.row_mut(i));
        }
        ProbMatrix(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        ProbMatrix::new(Matrix::from_rows(rows)?)
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn nclasses(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.0.rows_iter().map(argmax).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> ProbMatrix {
        ProbMatrix(self.0.select_rows(idx))
    }
}

pub fn is_probability_row(row: &[f64]) -> bool {
    row.iter().all(|&v| v.is_finite() && (0.0..=1.0).contains(&v))
        && (row.iter().sum::<f64>() - 1.0).abs() <= ProbMatrix::ROW_SUM_TOL
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn clamp_keeps_one_hot_finite() {
        let mut r = vec![0.0, 0.0, 1.0];
        clamp_normalize(&mut r);
        assert!(r.iter().all(|&v| v > 0.0));
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(argmax(&r), 2);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(ProbMatrix::from_rows(&[[0.6, 0.6]]).is_err());
        assert!(ProbMatrix::from_rows(&[[1.2, -0.2]]).is_err());
        assert!(ProbMatrix::from_rows(&[[0.25, 0.75]]).is_ok());
    }

    #[test]
    fn select_rows_repeats() {
        let m = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let s = m.select_rows(&[2, 2, 0]);
        assert_eq!(s.as_slice(), &[3.0, 3.0, 1.0]);
    }
}
