//! Floating-point abstraction shared by the numeric kernels.
//!
//! The neural kernel, reward algebra, car-following law, safety
//! indicators and advantage estimator are written against [`Scalar`], so
//! they run in both `f32` and `f64`. The simulator and learner pin `f64`
//! through the aliases in the crate root.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable by every numeric routine in this crate.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for types that cannot hold it.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. The default is a plain
    /// triple loop; primitive floats forward to a blocked kernel.
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
        c_cols: usize,
    ) {
        let at = |i: usize, p: usize| a[(i as isize * a_strides.0 + p as isize * a_strides.1) as usize];
        let bt = |p: usize, j: usize| b[(p as isize * b_strides.0 + j as isize * b_strides.1) as usize];
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for p in 0..k {
                    acc += at(i, p) * bt(p, j);
                }
                let slot = &mut c[i * c_cols + j];
                *slot = alpha * acc + beta * *slot;
            }
        }
    }
}

macro_rules! blocked_gemm {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
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
                c_cols: usize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for i in 0..m {
                        for v in &mut c[i * c_cols..i * c_cols + n] {
                            *v *= beta;
                        }
                    }
                    return;
                }
                assert!(c.len() >= (m - 1) * c_cols + n, "gemm output too small");
                let last = |rows: usize, cols: usize, s: (isize, isize)| {
                    (rows as isize - 1) * s.0 + (cols as isize - 1) * s.1
                };
                assert!((last(m, k, a_strides) as usize) < a.len(), "gemm lhs too small");
                assert!((last(k, n, b_strides) as usize) < b.len(), "gemm rhs too small");
                // SAFETY: the asserts above bound every index touched by the kernel.
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
                        c_cols as isize,
                        1,
                    );
                }
            }
        }
    };
}

blocked_gemm!(f64, matrixmultiply::dgemm);
blocked_gemm!(f32, matrixmultiply::sgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
        let mut c = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn blocked_kernel_matches_loop() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|v| (v as f64).sin()).collect();
        let mut c = vec![0.0; 15];
        f64::gemm(3, 4, 5, 1.0, &a, (4, 1), &b, (5, 1), 0.0, &mut c, 5);
        let expect = naive(3, 4, 5, &a, &b);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_strides() {
        // a is stored 4x3, used as its transpose (3x4)
        let a: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let b: Vec<f32> = (0..8).map(|v| v as f32 - 3.0).collect();
        let mut c = vec![1.0f32; 6];
        f32::gemm(3, 4, 2, 1.0, &a, (1, 3), &b, (2, 1), 1.0, &mut c, 2);
        let at: Vec<f32> = (0..3)
            .flat_map(|i| (0..4).map(move |p| (p * 3 + i) as f32))
            .collect();
        let expect = naive(3, 4, 2, &at, &b);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - (y + 1.0)).abs() < 1e-4);
        }
    }
}
