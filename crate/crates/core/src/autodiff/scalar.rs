use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the autodiff engine: `f64` for gradient
/// checks, `f32` for training and inference.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static + AddAssign + SubAssign + MulAssign + Sum
{
    /// `c = alpha·a·b + beta·c` over strided row/column layouts.
    ///
    /// # Safety
    /// All strides and extents must address memory inside the given
    /// pointers' allocations.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Matrix layout: `(row stride, column stride)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout(pub usize, pub usize);

impl Layout {
    pub fn row_major(cols: usize) -> Self {
        Layout(cols, 1)
    }

    /// Transposed view of a row-major `[rows × cols]` matrix.
    pub fn transposed(cols: usize) -> Self {
        Layout(1, cols)
    }

    fn span(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.0 + (cols - 1) * self.1 + 1
        }
    }
}

/// Safe wrapper: `c[m×n] = a[m×k]·b[k×n] + beta·c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    assert!(la.span(m, k) <= a.len(), "gemm: lhs out of bounds");
    assert!(lb.span(k, n) <= b.len(), "gemm: rhs out of bounds");
    assert!(lc.span(m, n) <= c.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents checked against slice lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            la.0 as isize,
            la.1 as isize,
            b.as_ptr(),
            lb.0 as isize,
            lb.1 as isize,
            beta,
            c.as_mut_ptr(),
            lc.0 as isize,
            lc.1 as isize,
        );
    }
}
