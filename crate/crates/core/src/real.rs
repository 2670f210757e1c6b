//! Floating-point element type shared by every kernel.
//!
//! Training runs in `f32`; gradient checks run the identical code paths in
//! `f64`. The only precision-specific piece is the matrix product, which
//! dispatches to the matching `matrixmultiply` routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Strided general matrix product `c = alpha * a * b + beta * c`, where
    /// `a` is `m x k`, `b` is `k x n` and `c` is `m x n`.
    ///
    /// Strides are in elements. Panics if any operand slice is too short for
    /// the requested shape and strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Real")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("every Real converts to f64")
    }
}

fn required_len(rows: usize, cols: usize, strides: (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(
        strides.0 >= 0 && strides.1 >= 0,
        "negative strides are not supported"
    );
    (rows - 1) * strides.0 as usize + (cols - 1) * strides.1 as usize + 1
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(
                    a.len() >= required_len(m, k, a_strides),
                    "gemm: lhs too short"
                );
                assert!(
                    b.len() >= required_len(k, n, b_strides),
                    "gemm: rhs too short"
                );
                assert!(
                    c.len() >= required_len(m, n, c_strides),
                    "gemm: output too short"
                );
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above guarantee every element addressed by
                // the (shape, stride) pairs lies inside the borrowed slices, and
                // `c` is uniquely borrowed so it cannot alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        f64::gemm(
            m,
            k,
            n,
            1.0,
            &a,
            (k as isize, 1),
            &b,
            (n as isize, 1),
            0.0,
            &mut c,
            (n as isize, 1),
        );
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_transposed_operand_via_strides() {
        // a^T stored as k x m, read as m x k by swapping strides
        let (m, k, n) = (2, 3, 2);
        let at: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2
        let b: Vec<f32> = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = vec![1.0f32; m * n];
        f32::gemm(
            m,
            k,
            n,
            1.0,
            &at,
            (1, m as isize),
            &b,
            (n as isize, 1),
            1.0,
            &mut c,
            (n as isize, 1),
        );
        // a = [[1,3,5],[2,4,6]]
        assert_eq!(c, vec![1.0 + 6.0, 1.0 + 8.0, 1.0 + 8.0, 1.0 + 10.0]);
    }
}
