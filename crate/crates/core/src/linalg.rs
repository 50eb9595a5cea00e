//! Minimal dense linear algebra over `f64`.
//!
//! [`Matrix`] is the single numeric carrier for inputs, logits, weights and
//! gradients. Every public operation either returns finite values or an
//! [`Error`]; NaN/Inf never escape silently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major 2-D array of `f64`. The batch dimension is rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Rejects length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dim(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite("Matrix::from_vec")?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix by evaluating `f(row, col)` at every position.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Domain("Matrix::from_rows on empty slice".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dim("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::from_vec(rows.len(), cols, data)
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the underlying storage. The length (and hence the
    /// rows×cols invariant) cannot change through this view.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Elementwise map; the result is finiteness-checked.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        let data: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, c: f64) -> Result<Matrix> {
        self.map(|x| x * c)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, |a, b| a - b, "sub")
    }

    /// `self += c * other`, in place.
    pub fn add_assign_scaled(&mut self, other: &Matrix, c: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dim(format!(
                "add_assign_scaled {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        self.check_finite("Matrix::add_assign_scaled")
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64, what: &str) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dim(format!(
                "{what} {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// Standard matrix product `a · b`, shape (a.rows, b.cols).
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Dim(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    out.check_finite("matmul")?;
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose. Shapes: (n,d) x (n,k) -> (d,k).
pub fn matmul_at_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::Dim(format!(
            "matmul_at_b {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let b_row = b.row(i);
        for (d, &aid) in a_row.iter().enumerate() {
            let out_row = &mut out.data[d * b.cols..(d + 1) * b.cols];
            for (o, &bik) in out_row.iter_mut().zip(b_row) {
                *o += aid * bik;
            }
        }
    }
    out.check_finite("matmul_at_b")?;
    Ok(out)
}

/// `a · bᵀ`. Shapes: (n,k) x (d,k) -> (n,d).
pub fn matmul_a_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Dim(format!(
            "matmul_a_bt {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for d in 0..b.rows {
            let b_row = b.row(d);
            let dot: f64 = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
            out.data[i * b.rows + d] = dot;
        }
    }
    out.check_finite("matmul_a_bt")?;
    Ok(out)
}

/// Row-wise softmax with per-row max subtraction. Each output row sums to 1.
pub fn rowwise_softmax(z: &Matrix) -> Result<Matrix> {
    if !z.is_finite() {
        return Err(Error::NonFinite("rowwise_softmax input"));
    }
    let mut out = Matrix::zeros(z.rows, z.cols);
    for i in 0..z.rows {
        let row = z.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out_row = &mut out.data[i * z.cols..(i + 1) * z.cols];
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out.check_finite("rowwise_softmax")?;
    Ok(out)
}

/// Per-column mean and population variance (divide by the row count).
pub fn colwise_mean_var(z: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.rows == 0 {
        return Err(Error::Domain("colwise_mean_var on empty matrix".into()));
    }
    let n = z.rows as f64;
    let mut means = vec![0.0; z.cols];
    for i in 0..z.rows {
        for (m, &v) in means.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    for m in means.iter_mut() {
        *m /= n;
    }
    let mut vars = vec![0.0; z.cols];
    for i in 0..z.rows {
        for ((v, &x), &m) in vars.iter_mut().zip(z.row(i)).zip(&means) {
            let d = x - m;
            *v += d * d;
        }
    }
    for v in vars.iter_mut() {
        *v /= n;
    }
    Ok((means, vars))
}
