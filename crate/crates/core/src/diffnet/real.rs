use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::par;

/// Floating-point element type of a [`Tensor`](super::Tensor).
///
/// Networks run in `f32`; gradient checks cast them to `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// `C ← alpha·A·B + beta·C` over strided views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// regions, and `c` must not alias `a` or `b`.
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
        Self::from_f64(v).expect("literal representable")
    }
}

impl Real for f32 {
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// How a row-major operand is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// Stored as the logical `rows × cols` matrix.
    N,
    /// Stored as the transpose, `cols × rows`.
    T,
}

/// Products smaller than this many multiply-adds run as one call.
const SPLIT_MIN_WORK: usize = 1 << 21;

struct SyncPtr<T>(*mut T);
unsafe impl<T> Send for SyncPtr<T> {}
unsafe impl<T> Sync for SyncPtr<T> {}

/// `C (m×n, row-major) ← op(A)·op(B) + beta·C`.
///
/// With several workers the output is cut into one row or column block per
/// worker. Every element still sums over `k` in the same order, so the
/// result is bit-identical to a single call whatever the split.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    op_a: Op,
    b: &[T],
    op_b: Op,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: A has wrong length");
    assert_eq!(b.len(), k * n, "gemm: B has wrong length");
    assert_eq!(c.len(), m * n, "gemm: C has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    let workers = par::current_workers();
    let call = |r0: usize, rows: usize, c0: usize, cols: usize, out: *mut T| {
        // SAFETY: callers pass in-bounds, pairwise disjoint blocks of C, and
        // C never aliases A or B.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                cols,
                T::one(),
                a.as_ptr().offset(r0 as isize * rsa),
                rsa,
                csa,
                b.as_ptr().offset(c0 as isize * csb),
                rsb,
                csb,
                beta,
                out,
                n as isize,
                1,
            )
        }
    };
    if workers <= 1 || m * n * k < SPLIT_MIN_WORK {
        call(0, m, 0, n, c.as_mut_ptr());
    } else if m >= 8 * workers {
        let rows = m.div_ceil(workers).next_multiple_of(8);
        par::for_each_chunk_mut(c, rows * n, |blk, chunk| {
            call(blk * rows, chunk.len() / n, 0, n, chunk.as_mut_ptr())
        });
    } else {
        let cols = n.div_ceil(workers).next_multiple_of(16);
        let base = SyncPtr(c.as_mut_ptr());
        let base = &base;
        par::map_range(n.div_ceil(cols), move |blk| {
            let c0 = blk * cols;
            call(0, m, c0, cols.min(n - c0), base.0.wrapping_add(c0))
        });
    }
}
