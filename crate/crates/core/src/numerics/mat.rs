//! Row-major dense matrices and the handful of vector kernels the models need.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("Mat64::from_vec", rows * cols, data.len())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Mat64::from_vec".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("Mat64::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Column vector (`len x 1`).
    pub fn column(v: Vec<f64>) -> Result<Self> {
        Self::from_vec(v.len(), 1, v)
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.cols + j] = x;
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

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        matvec(self, v)
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec_t", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (row, &vi) in self.iter_rows().zip(v) {
            axpy(vi, row, &mut out);
        }
        Ok(out)
    }
}

/// Matrix-vector product, summing each row left to right.
pub fn matvec(m: &Mat64, v: &[f64]) -> Result<Vec<f64>> {
    check_len("matvec", m.cols, v.len())?;
    Ok((0..m.rows).map(|i| dot(m.row(i), v)).collect())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// `y += a · x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Standard logistic `1 / (1 + exp(-x))`, evaluated on the branch that never
/// exponentiates a positive number.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let ex = x.exp();
        ex / (1.0 + ex)
    }
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn inf_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matvec_examples() {
        let id = Mat64::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(matvec(&id, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let row = Mat64::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(matvec(&row, &[3.0, 4.0]).unwrap(), vec![11.0]);
        let z = Mat64::zeros(2, 2);
        assert_eq!(matvec(&z, &[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matvec_rejects_mismatch() {
        let m = Mat64::zeros(2, 3);
        assert!(matches!(
            matvec(&m, &[1.0, 2.0]),
            Err(Error::Shape { expected: 3, got: 2, .. })
        ));
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(Mat64::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3f64.ln()) - 0.75).abs() < 1e-15);
        let tiny = logistic(-745.0);
        assert!((0.0..=1e-300).contains(&tiny));
        assert_eq!(logistic(800.0), 1.0);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-30.0, -1.0, 0.0, 0.5, 20.0] {
            let naive = (1.0 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-14 * naive.max(1.0));
        }
        assert_eq!(softplus(1000.0), 1000.0);
    }

    proptest! {
        #[test]
        fn matvec_is_linear(
            m in proptest::collection::vec(-2.0f64..2.0, 12),
            u in proptest::collection::vec(-2.0f64..2.0, 4),
            v in proptest::collection::vec(-2.0f64..2.0, 4),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let m = Mat64::from_vec(3, 4, m).unwrap();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = matvec(&m, &mix).unwrap();
            let mu = matvec(&m, &u).unwrap();
            let mv = matvec(&m, &v).unwrap();
            for i in 0..3 {
                let rhs = a * mu[i] + b * mv[i];
                let scale = lhs[i].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * scale);
            }
        }
    }
}
