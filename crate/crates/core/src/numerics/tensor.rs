use std::fmt;

use super::NumericsError;

/// Dense row-major matrix of `f64`.
///
/// Every constructor rejects non-finite entries, and every arithmetic
/// routine in this module re-checks its output, so a `Tensor` obtained
/// through the public API never holds NaN or infinity.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::Length {
                rows,
                cols,
                len: data.len(),
            });
        }
        let t = Self { rows, cols, data };
        t.check_finite("new")?;
        Ok(t)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    /// # Panics
    /// If `value` is not finite.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Result<Self, NumericsError> {
        Self::new(1, 1, vec![value])
    }

    /// Builds a tensor from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumericsError::Ragged {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw storage. Callers are responsible for
    /// keeping the entries finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<(), NumericsError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(NumericsError::NonFinite { op })
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Standard matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(self, false, other, false, &mut out, 0.0);
        out.check_finite("matmul")?;
        Ok(out)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn row_l2_normalize(&self, eps: f64) -> Tensor {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let denom = row_norm(row).max(eps);
            row.iter_mut().for_each(|v| *v /= denom);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column-wise mean, as a `1 × cols` tensor.
    pub fn mean_rows(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        if self.rows == 0 {
            return out;
        }
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        out.data.iter_mut().for_each(|v| *v *= inv);
        out
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows selected by `order`, so that `out.row(i) == self.row(order[i])`.
    pub fn select_rows(&self, order: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(order.len() * self.cols);
        for &r in order {
            data.extend_from_slice(self.row(r));
        }
        Tensor {
            rows: order.len(),
            cols: self.cols,
            data,
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}) ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            let rows: Vec<&[f64]> = (0..self.rows).map(|r| self.row(r)).collect();
            write!(f, "{rows:?}")
        } else {
            write!(f, "[..]")
        }
    }
}

pub(crate) fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `out = op(a) · op(b) + beta · out`, where `op` optionally transposes.
pub(crate) fn gemm(a: &Tensor, a_t: bool, b: &Tensor, b_t: bool, out: &mut Tensor, beta: f64) {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if b_t { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(out.shape(), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if b_t { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: the strides describe exactly the row-major buffers of `a`, `b`
    // and `out`, whose lengths were checked against (m, k), (k, n) and (m, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
