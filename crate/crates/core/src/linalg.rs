//! Dense row-major matrices, stabilized softmax and a portable seeded RNG.
//!
//! Every loop runs in a fixed order and no fused multiply-add is used, so
//! results are bit-reproducible across runs and platforms.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Floating-point element type. Implemented for `f64` (the default everywhere)
/// and `f32` (used only for single-precision forward evaluation).
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;
    /// Veltkamp splitting constant `2^⌈p/2⌉ + 1` for the mantissa width `p`.
    const SPLITTER: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty, $split:expr) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const SPLITTER: Self = $split;
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f64, 134_217_729.0);
impl_scalar!(f32, 4097.0);

/// Dense 2-D matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Debug> Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list()
            .entries(self.data.chunks(self.cols.max(1)))
            .finish()
    }
}

/// Which context positions each query column may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    None,
    /// Query column `j` sees rows `0..=j` only.
    Causal,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Row-literal constructor, mostly for tests. Panics on ragged input.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(values: &[T]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: 1,
            data: (0..self.rows).map(|i| self.get(i, j)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Standard product, accumulated in (i, k, j) order.
    pub fn matmul(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != b.rows {
            return Err(Error::shape("matmul", self.shape(), b.shape()));
        }
        let (m, n, p) = (self.rows, self.cols, b.cols);
        let mut out = Matrix::zeros(m, p);
        for i in 0..m {
            let out_row = &mut out.data[i * p..(i + 1) * p];
            for k in 0..n {
                let a = self.data[i * n + k];
                let b_row = &b.data[k * p..(k + 1) * p];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · b` without materializing the transpose. Accumulation order per
    /// output entry matches `self.transpose().matmul(b)`.
    pub fn matmul_tn(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != b.rows {
            return Err(Error::shape("matmul_tn", self.shape(), b.shape()));
        }
        let (k_len, m, p) = (self.rows, self.cols, b.cols);
        let mut out = Matrix::zeros(m, p);
        for k in 0..k_len {
            let b_row = &b.data[k * p..(k + 1) * p];
            for i in 0..m {
                let a = self.data[k * m + i];
                let out_row = &mut out.data[i * p..(i + 1) * p];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · b` where every entry is a compensated dot product (see
    /// [`dot_compensated`]). Used for attention scores, whose rounding is
    /// amplified by the softmax.
    pub fn matmul_tn_compensated(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != b.rows {
            return Err(Error::shape("matmul_tn_compensated", self.shape(), b.shape()));
        }
        let at = self.transpose();
        let bt = b.transpose();
        let (m, p) = (self.cols, b.cols);
        let mut out = Matrix::zeros(m, p);
        for i in 0..m {
            for j in 0..p {
                out.data[i * p + j] = dot_compensated(at.row(i), bt.row(j));
            }
        }
        Ok(out)
    }

    /// `self · bᵀ`. Accumulation order per entry matches `self.matmul(&b.transpose())`.
    pub fn matmul_nt(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != b.cols {
            return Err(Error::shape("matmul_nt", self.shape(), b.shape()));
        }
        // Transposing b keeps the inner loop contiguous and the summation order fixed.
        self.matmul(&b.transpose())
    }

    fn zip_with(&self, b: &Matrix<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Matrix<T>> {
        if self.shape() != b.shape() {
            return Err(Error::shape(op, self.shape(), b.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with(b, "add", |x, y| x + y)
    }

    pub fn sub(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with(b, "sub", |x, y| x - y)
    }

    pub fn hadamard(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with(b, "hadamard", |x, y| x * y)
    }

    pub fn add_assign(&mut self, b: &Matrix<T>) -> Result<()> {
        if self.shape() != b.shape() {
            return Err(Error::shape("add_assign", self.shape(), b.shape()));
        }
        for (x, &y) in self.data.iter_mut().zip(&b.data) {
            *x += y;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Matrix<T> {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `m + b 1ᵀ`: adds the column vector `b` to every column.
    pub fn add_outer_bias(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if b.cols != 1 || b.rows != self.rows {
            return Err(Error::shape("add_outer_bias", self.shape(), b.shape()));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            let bias = b.data[i];
            for x in &mut out.data[i * self.cols..(i + 1) * self.cols] {
                *x += bias;
            }
        }
        Ok(out)
    }

    /// Sum over columns: a `rows × 1` vector.
    pub fn row_sums(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, 1);
        for i in 0..self.rows {
            let mut acc = T::ZERO;
            for &x in self.row(i) {
                acc += x;
            }
            out.data[i] = acc;
        }
        out
    }

    /// Mean over columns: a `rows × 1` vector.
    pub fn row_means(&self) -> Matrix<T> {
        let n = T::from_f64(self.cols as f64);
        self.row_sums().map(|x| x / n)
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix<T> {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Matrix<T> {
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows * w);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols: w,
            data,
        }
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[Matrix<T>]) -> Result<Matrix<T>> {
        let cols = parts.first().map(|p| p.cols).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::shape("vstack", (rows, cols), p.shape()));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Writes `src` into rows starting at `start`.
    pub fn set_rows(&mut self, start: usize, src: &Matrix<T>) {
        assert_eq!(src.cols, self.cols);
        self.data[start * self.cols..(start + src.rows) * self.cols].copy_from_slice(&src.data);
    }

    pub fn sum(&self) -> T {
        let mut acc = T::ZERO;
        for &x in &self.data {
            acc += x;
        }
        acc
    }

    /// Matrix max norm: largest absolute entry.
    pub fn max_norm(&self) -> T {
        let mut best = T::ZERO;
        for &x in &self.data {
            let a = x.abs();
            if a > best {
                best = a;
            }
        }
        best
    }

    pub fn frobenius(&self) -> T {
        let mut acc = T::ZERO;
        for &x in &self.data {
            acc += x * x;
        }
        acc.sqrt()
    }

    /// Column-wise softmax with max subtraction.
    pub fn softmax_cols(&self) -> Matrix<T> {
        self.softmax_cols_masked(Mask::None)
    }

    /// Column-wise softmax restricted by `mask`; masked entries are exactly 0.
    pub fn softmax_cols_masked(&self, mask: Mask) -> Matrix<T> {
        let (n, m) = self.shape();
        let mut out = Matrix::zeros(n, m);
        for j in 0..m {
            let valid = match mask {
                Mask::None => n,
                Mask::Causal => (j + 1).min(n),
            };
            let mut max = self.data[j];
            for i in 1..valid {
                let z = self.data[i * m + j];
                if z > max {
                    max = z;
                }
            }
            let mut total = T::ZERO;
            for i in 0..valid {
                let e = (self.data[i * m + j] - max).exp();
                out.data[i * m + j] = e;
                total += e;
            }
            for i in 0..valid {
                out.data[i * m + j] = out.data[i * m + j] / total;
            }
        }
        out
    }
}

impl Matrix<f64> {
    /// Largest absolute difference between two equally shaped matrices.
    pub fn max_abs_diff(&self, other: &Matrix<f64>) -> Result<f64> {
        Ok(self.sub(other)?.max_norm())
    }
}

#[inline]
fn two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn split<T: Scalar>(a: T) -> (T, T) {
    let c = T::SPLITTER * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

#[inline]
fn two_prod<T: Scalar>(a: T, b: T) -> (T, T) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, al * bl - (((p - ah * bh) - al * bh) - ah * bl))
}

/// Dot product accurate as if accumulated in twice the working precision
/// (Ogita–Rump–Oishi `Dot2`), built from error-free transformations without
/// fused multiply-add. Summation order is fixed.
pub fn dot_compensated<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = T::ZERO;
    let mut err = T::ZERO;
    for (&x, &y) in a.iter().zip(b) {
        let (p, pe) = two_prod(x, y);
        let (s, se) = two_sum(sum, p);
        sum = s;
        err += pe + se;
    }
    sum + err
}

/// Free-function form of [`Matrix::matmul`].
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    a.matmul(b)
}

/// Free-function form of [`Matrix::add_outer_bias`].
pub fn add_outer_bias<T: Scalar>(m: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    m.add_outer_bias(b)
}

/// Free-function form of [`Matrix::softmax_cols`].
pub fn softmax_cols<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    z.softmax_cols()
}

/// Free-function form of [`Matrix::max_norm`].
pub fn max_norm<T: Scalar>(a: &Matrix<T>) -> T {
    a.max_norm()
}

/// SplitMix64 generator. Identical seeds produce identical streams everywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let x = lo + (hi - lo) * self.next_f64();
            if x < hi {
                return x;
            }
        }
    }

    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw via Box–Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Independent child stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

/// `rows × cols` matrix of i.i.d. `U[lo, hi)` entries.
pub fn sample_uniform(rng: &mut Rng, lo: f64, hi: f64, rows: usize, cols: usize) -> Result<Matrix> {
    if !(lo < hi) {
        return Err(Error::InvalidRange { lo, hi });
    }
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix { rows, cols });
    }
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Ok(Matrix { rows, cols, data })
}

/// `rows × cols` matrix of i.i.d. `N(0, std²)` entries.
pub fn sample_normal(rng: &mut Rng, std: f64, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Matrix { rows, cols, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for k in 0..a.cols() {
                for j in 0..b.cols() {
                    let v = out.get(i, j) + a.get(i, k) * b.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_dot() {
        let id = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = Matrix::from_rows(&[[3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(id.matmul(&b).unwrap(), b);
        let row = Matrix::from_rows(&[[1.0, 2.0]]);
        let col = Matrix::from_rows(&[[3.0], [4.0]]);
        assert_eq!(row.matmul(&col).unwrap(), Matrix::from_rows(&[[11.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = Rng::new(3);
        let a = sample_uniform(&mut rng, -1.0, 1.0, 8, 8).unwrap();
        let b = sample_uniform(&mut rng, -1.0, 1.0, 8, 8).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), naive_matmul(&a, &b).data());
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = Rng::new(11);
        let a = sample_uniform(&mut rng, -1.0, 1.0, 5, 7).unwrap();
        let b = sample_uniform(&mut rng, -1.0, 1.0, 5, 3).unwrap();
        let c = sample_uniform(&mut rng, -1.0, 1.0, 4, 7).unwrap();
        assert_eq!(a.matmul_tn(&b).unwrap(), a.transpose().matmul(&b).unwrap());
        assert_eq!(a.matmul_nt(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn compensated_dot_survives_cancellation() {
        // Plain summation loses the 1.0 entirely.
        let a = [1e17, 1.0, -1e17];
        let b = [1.0, 1.0, 1.0];
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_eq!(naive, 0.0);
        assert_eq!(dot_compensated(&a, &b), 1.0);
        // Product rounding is recovered too: (1 + 2^-30)^2 = 1 + 2^-29 + 2^-60.
        let x = 1.0 + 2f64.powi(-30);
        assert_eq!(dot_compensated(&[x, -1.0], &[x, 1.0 + 2f64.powi(-29)]), 2f64.powi(-60));
    }

    #[test]
    fn compensated_product_matches_plain_on_exact_inputs() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = Matrix::from_rows(&[[1.0], [0.5], [0.25]]);
        assert_eq!(a.matmul_tn_compensated(&b).unwrap(), a.matmul_tn(&b).unwrap());
    }

    #[test]
    fn outer_bias_cases() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[10.0], [20.0]]);
        assert_eq!(
            m.add_outer_bias(&b).unwrap(),
            Matrix::from_rows(&[[11.0, 12.0], [23.0, 24.0]])
        );
        assert_eq!(m.add_outer_bias(&Matrix::zeros(2, 1)).unwrap(), m);
        let row = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        let shifted = row.add_outer_bias(&Matrix::column(&[2.5])).unwrap();
        assert_eq!(shifted, Matrix::from_rows(&[[3.5, 0.5, 3.0]]));
        assert!(m.add_outer_bias(&Matrix::zeros(3, 1)).is_err());
        assert!(m.add_outer_bias(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn softmax_known_columns() {
        let z = Matrix::from_rows(&[[0.0, 0.0], [0.0, 3f64.ln()]]);
        let p = z.softmax_cols();
        assert_eq!(p.get(0, 0), 0.5);
        assert_eq!(p.get(1, 0), 0.5);
        assert!((p.get(0, 1) - 0.25).abs() < 1e-15);
        assert!((p.get(1, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_floor() {
        let a = Matrix::column(&[0.1, 0.2]).softmax_cols();
        let b = Matrix::column(&[5.1, 5.2]).softmax_cols();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-9);
    }

    #[test]
    fn causal_softmax_zeroes_future() {
        let z = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]);
        let p = z.softmax_cols_masked(Mask::Causal);
        assert_eq!(p.get(0, 0), 1.0);
        assert_eq!(p.get(1, 0), 0.0);
        assert_eq!(p.get(2, 1), 0.0);
        for j in 0..3 {
            let s: f64 = (0..3).map(|i| p.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn max_norm_cases() {
        let a = Matrix::from_rows(&[[1.0, -3.0], [2.0, 0.5]]);
        assert_eq!(a.max_norm(), 3.0);
        assert_eq!(Matrix::<f64>::zeros(3, 2).max_norm(), 0.0);
        assert_eq!(a.sub(&a).unwrap().max_norm(), 0.0);
    }

    #[test]
    fn from_vec_validates() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::<f64>::from_vec(0, 2, vec![]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of SplitMix64 seeded with 0.
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn uniform_sampling_contract() {
        let a = sample_uniform(&mut Rng::new(42), -5.0, 5.0, 4, 1).unwrap();
        assert!(a.data().iter().all(|&x| (-5.0..5.0).contains(&x)));
        let b = sample_uniform(&mut Rng::new(42), -5.0, 5.0, 4, 1).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(sample_uniform(&mut Rng::new(1), 1.0, 1.0, 1, 1).is_err());
        assert!(sample_uniform(&mut Rng::new(1), 2.0, 1.0, 1, 1).is_err());

        let big = sample_uniform(&mut Rng::new(9), -5.0, 5.0, 100_000, 1).unwrap();
        let mean = big.sum() / 100_000.0;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn normal_draws_have_unit_variance() {
        let mut rng = Rng::new(5);
        let xs: Vec<f64> = (0..50_000).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.03);
    }
}
