//! Dense row-major matrices and the float element abstraction.
//!
//! Everything in this crate (activations, weights, gradients) lives in a
//! [`Matrix`]. Training runs in `f32`; gradient checking instantiates the
//! same code in `f64`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

/// Scalar element type for all numeric code. Implemented for `f32` and `f64`.
pub trait Element:
    Float + Copy + fmt::Debug + fmt::Display + core::iter::Sum + 'static + Send + Sync
{
    fn from_f64(x: f64) -> Self;
    fn from_f32(x: f32) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(x: usize) -> Self;

    /// `c = alpha * a @ b + beta * c` with explicit strides.
    ///
    /// # Safety
    /// `a`, `b`, and `c` must point to allocations that cover every element
    /// reachable through the given dimensions and strides, and `c` must not
    /// alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_usize(x: usize) -> Self {
        x as f32
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

impl Element for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_usize(x: usize) -> Self {
        x as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

/// Shape mismatch diagnostic naming both operand shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimError {
    pub context: String,
    pub lhs: (usize, usize),
    pub rhs: (usize, usize),
}

impl fmt::Display for DimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dimension mismatch in {}: {}x{} vs {}x{}",
            self.context, self.lhs.0, self.lhs.1, self.rhs.0, self.rhs.1
        )
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F: Element> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Element> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, v: F) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[F]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn row_vector(v: &[F]) -> Self {
        Matrix {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn scalar(v: F) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
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
    pub fn data(&self) -> &[F] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    /// First element; for 1x1 loss matrices.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.shape(), (1, 1), "item() on non-scalar matrix");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: F) {
        for x in &mut self.data {
            *x = v;
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Matrix<F> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix<F>, f: impl Fn(F, F) -> F) -> Matrix<F> {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<F>) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
    }

    pub fn scale_assign(&mut self, s: F) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn transpose(&self) -> Matrix<F> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self @ other`.
    pub fn matmul(&self, other: &Matrix<F>) -> Matrix<F> {
        assert_eq!(
            self.cols, other.rows,
            "matmul inner dimension mismatch: {}x{} @ {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        if self.rows == 0 || self.cols == 0 || other.cols == 0 {
            return out;
        }
        unsafe {
            F::gemm(
                self.rows,
                self.cols,
                other.cols,
                F::one(),
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                F::zero(),
                out.data.as_mut_ptr(),
                other.cols as isize,
                1,
            );
        }
        out
    }

    /// `self @ other.T` without materializing the transpose.
    pub fn matmul_bt(&self, other: &Matrix<F>) -> Matrix<F> {
        assert_eq!(
            self.cols, other.cols,
            "matmul_bt inner dimension mismatch: {}x{} @ ({}x{})^T",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.rows);
        if self.rows == 0 || self.cols == 0 || other.rows == 0 {
            return out;
        }
        unsafe {
            F::gemm(
                self.rows,
                self.cols,
                other.rows,
                F::one(),
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                1,
                other.cols as isize,
                F::zero(),
                out.data.as_mut_ptr(),
                other.rows as isize,
                1,
            );
        }
        out
    }

    /// `self.T @ other` without materializing the transpose.
    pub fn matmul_at(&self, other: &Matrix<F>) -> Matrix<F> {
        assert_eq!(
            self.rows, other.rows,
            "matmul_at inner dimension mismatch: ({}x{})^T @ {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.cols, other.cols);
        if self.rows == 0 || self.cols == 0 || other.cols == 0 {
            return out;
        }
        unsafe {
            F::gemm(
                self.cols,
                self.rows,
                other.cols,
                F::one(),
                self.data.as_ptr(),
                1,
                self.cols as isize,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                F::zero(),
                out.data.as_mut_ptr(),
                other.cols as isize,
                1,
            );
        }
        out
    }

    pub fn to_f64_matrix(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v.to_f64()).collect(),
        }
    }

    pub fn from_f64_matrix(m: &Matrix<f64>) -> Matrix<F> {
        Matrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|&v| F::from_f64(v)).collect(),
        }
    }
}

/// Cosine similarity of two equal-length vectors; zero-norm inputs yield -1
/// so they sort last.
pub fn cosine<F: Element>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len(), "cosine length mismatch");
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == F::zero() || nb == F::zero() {
        return -F::one();
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let a = Matrix::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.shape(), (2, 2));
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_bt_equals_explicit_transpose() {
        let a = Matrix::from_vec(3, 5, (0..15).map(|i| i as f64 * 0.3 - 2.0).collect());
        let b = Matrix::from_vec(4, 5, (0..20).map(|i| (i as f64).sin()).collect());
        let direct = a.matmul_bt(&b);
        let via_t = a.matmul(&b.transpose());
        for (x, y) in direct.data().iter().zip(via_t.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_at_equals_explicit_transpose() {
        let a = Matrix::from_vec(5, 3, (0..15).map(|i| i as f64 * 0.1).collect());
        let b = Matrix::from_vec(5, 2, (0..10).map(|i| (i as f64).cos()).collect());
        let direct = a.matmul_at(&b);
        let via_t = a.transpose().matmul(&b);
        for (x, y) in direct.data().iter().zip(via_t.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_zero_norm_is_minus_one() {
        assert_eq!(cosine::<f32>(&[0.0, 0.0], &[1.0, 0.0]), -1.0);
    }
}
