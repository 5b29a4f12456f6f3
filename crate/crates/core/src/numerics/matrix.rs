use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of finite `f64` values.
///
/// Shapes are at least 1x1 and every entry is finite; both are checked at
/// construction. Values are never mutated through the public API.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape {
                rows: rows.len(),
                cols,
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
    }

    pub fn column_vector(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    /// Panics if either dimension is zero.
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Internal constructor for results of finite arithmetic.
    ///
    /// Callers guarantee the shape; finiteness is debug-checked only since
    /// every primitive maps finite inputs to finite outputs.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(rows > 0 && cols > 0);
        Self { rows, cols, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1x1 matrix.
    pub fn scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_parts(n, m, out))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix::from_parts(self.cols, self.rows, out)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix::from_parts(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    /// Multiplies every row `i` by the scalar `col[i]` (an `rows x 1` column).
    pub fn mul_col(&self, col: &Matrix) -> Result<Matrix> {
        if col.cols != 1 || col.rows != self.rows {
            return Err(Error::Dimension {
                op: "mul_col",
                left: self.shape(),
                right: col.shape(),
            });
        }
        let mut data = self.data.clone();
        for (row, &g) in data.chunks_mut(self.cols).zip(&col.data) {
            row.iter_mut().for_each(|v| *v *= g);
        }
        Ok(Matrix::from_parts(self.rows, self.cols, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_parts(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn sigmoid(&self) -> Matrix {
        self.map(sigmoid)
    }

    pub fn relu(&self) -> Matrix {
        self.map(|v| v.max(0.0))
    }

    pub fn tanh(&self) -> Matrix {
        self.map(f64::tanh)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Matrix {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.cols) {
            softmax_in_place(row);
        }
        Matrix::from_parts(self.rows, self.cols, data)
    }

    /// Column means as a `1 x cols` matrix.
    pub fn mean_rows(&self) -> Matrix {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = self.rows as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Matrix::from_parts(1, self.cols, out)
    }

    pub fn concat_cols(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix::from_parts(self.rows, cols, data))
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Matrix> {
        if start >= end || end > self.cols {
            return Err(Error::InvalidShape {
                rows: self.rows,
                cols: end.saturating_sub(start),
                len: self.cols,
            });
        }
        let data = (0..self.rows)
            .flat_map(|r| self.row(r)[start..end].iter().copied())
            .collect();
        Ok(Matrix::from_parts(self.rows, end - start, data))
    }

    /// Same data, new shape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows == 0 || cols == 0 || rows * cols != self.data.len() {
            return Err(Error::InvalidShape {
                rows,
                cols,
                len: self.data.len(),
            });
        }
        Ok(Matrix::from_parts(rows, cols, self.data.clone()))
    }

    /// Rows reordered so that output row `i` is input row `order[i]`.
    pub fn select_rows(&self, order: &[usize]) -> Matrix {
        let data = order.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Matrix::from_parts(order.len(), self.cols, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list()
            .entries(self.data.chunks(self.cols))
            .finish()
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// `log(sum(exp(row)))` with max subtraction.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for p in 0..a.cols() {
                    acc += a.get(i, p) * b.get(p, j);
                }
                out[i * b.cols() + j] = acc;
            }
        }
        Matrix::new(a.rows(), b.cols(), out).unwrap()
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn construction_rejects_bad_shapes_and_non_finite() {
        assert!(matches!(Matrix::new(0, 2, vec![]), Err(Error::InvalidShape { .. })));
        assert!(matches!(Matrix::new(2, 2, vec![1.0; 3]), Err(Error::InvalidShape { .. })));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            Matrix::new(1, 1, vec![f64::INFINITY]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn matmul_small_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::column_vector(&[5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_slice(), &[17.0, 39.0]);

        let x = lcg_matrix(2, 5, 3);
        assert_eq!(Matrix::identity(2).matmul(&x).unwrap(), x);

        let err = a.matmul(&lcg_matrix(3, 2, 1)).unwrap_err();
        assert!(err.to_string().contains("(2, 2)") && err.to_string().contains("(3, 2)"));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = lcg_matrix(3, 4, 11);
        let b = lcg_matrix(4, 2, 12);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
        for (n, k, m) in [(64, 64, 64), (1, 64, 7), (33, 5, 17)] {
            let a = lcg_matrix(n, k, n as u64);
            let b = lcg_matrix(k, m, m as u64);
            let fast = a.matmul(&b).unwrap();
            let slow = naive_matmul(&a, &b);
            for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 2f64.ln(), 3f64.ln()]]).unwrap();
        let s = m.softmax_rows();
        for v in s.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        for (v, e) in s.row(1).iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-15);
        }
        let x = lcg_matrix(4, 6, 5);
        let shifted = x.map(|v| v + 1000.0);
        assert!(x.softmax_rows().max_abs_diff(&shifted.softmax_rows()) < 1e-12);
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(Matrix::zeros(1, 1).sigmoid().as_slice(), &[0.5]);
        let r = Matrix::row_vector(&[-1.0, 0.0, 2.0]).unwrap().relu();
        assert_eq!(r.as_slice(), &[0.0, 0.0, 2.0]);
        let x = lcg_matrix(3, 4, 9);
        assert_eq!(x.mul(&Matrix::ones(3, 4)).unwrap(), x);
        assert!(x.mul(&Matrix::ones(4, 3)).is_err());
        assert!(x.mul_col(&Matrix::ones(3, 2)).is_err());
        assert_eq!(x.mul_col(&Matrix::ones(3, 1)).unwrap(), x);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn mean_rows_examples() {
        let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(m.mean_rows().as_slice(), &[2.0, 4.0]);
        let single = Matrix::row_vector(&[0.25, -7.0]).unwrap();
        assert_eq!(single.mean_rows(), single);

        let x = lcg_matrix(50, 8, 21);
        let means = x.mean_rows();
        for c in 0..8 {
            let oracle: f64 = (0..50).map(|r| x.get(r, c)).sum::<f64>() / 50.0;
            assert!((means.get(0, c) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Matrix::column_vector(&[1.0, 2.0]).unwrap();
        let b = Matrix::column_vector(&[3.0, 4.0]).unwrap();
        let c = a.concat_cols(&b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap());
        assert_eq!(c.slice_cols(0, 1).unwrap(), a);
        assert_eq!(c.slice_cols(1, 2).unwrap(), b);
        assert!(a.concat_cols(&Matrix::zeros(3, 1)).is_err());
        // No zero-column placeholder can exist to concatenate with.
        assert!(Matrix::new(2, 0, vec![]).is_err());
    }
}
