use std::fmt::{Debug, Display};

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::Float;

/// Floating-point element type usable by the tape.
///
/// `f32` is the training width, `f64` is used for gradient verification.
pub trait Scalar:
    Float + LinalgScalar + Debug + Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major matrix operand: `rows x cols` buffer, optionally used transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }
}

/// `c = a * b + beta * c`, with `c` row-major `m x n`.
pub(crate) fn gemm<T: Scalar>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T], m: usize, n: usize) {
    let av = ArrayView2::from_shape((a.rows, a.cols), a.data).expect("gemm lhs buffer");
    let bv = ArrayView2::from_shape((b.rows, b.cols), b.data).expect("gemm rhs buffer");
    let av = if a.transposed { av.reversed_axes() } else { av };
    let bv = if b.transposed { bv.reversed_axes() } else { bv };
    debug_assert_eq!(av.dim(), (m, bv.dim().0));
    debug_assert_eq!(bv.dim().1, n);
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("gemm output buffer");
    general_mat_mul(T::one(), &av, &bv, beta, &mut cv);
}
