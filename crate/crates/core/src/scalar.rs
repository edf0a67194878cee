//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! code runs in f32 (fast pipeline) and f64 (verification at finite-difference
//! precision). Concrete aliases for the main types live at the crate root.

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the crate: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    /// Row-major matrix multiply `c = alpha * op(a) * op(b) + beta * c` where
    /// `op` optionally transposes. `a` is m x k (k x m when transposed), `b` is
    /// k x n (n x k when transposed), `c` is m x n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[allow(clippy::too_many_arguments)]
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "lhs size");
                assert_eq!(b.len(), k * n, "rhs size");
                assert_eq!(c.len(), m * n, "out size");
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                // Safety: dimensions and strides are checked against the slice
                // lengths above; matrixmultiply reads/writes within them.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Shorthand for converting an f64 literal/config value into the working scalar.
#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in scalar type")
}

/// Convert a count into the working scalar.
#[inline]
pub fn cast_usize<T: Scalar>(v: usize) -> T {
    T::from_usize(v).expect("count representable in scalar type")
}
