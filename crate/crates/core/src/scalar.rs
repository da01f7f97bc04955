//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the model, planner, projection and policy code is generic over.
///
/// Tolerances are per-type because the LP and projection thresholds that make sense for
/// `f64` are below the resolution of `f32`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Feasibility/optimality tolerance used by the simplex solver.
    fn lp_tol() -> Self;
    /// Pivot magnitude below which a simplex or LU pivot is treated as zero.
    fn pivot_tol() -> Self;
    /// Convergence threshold on iterate movement inside the projection routines.
    fn proj_tol() -> Self;

    /// Lossless-enough conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    fn lp_tol() -> Self {
        1e-9
    }
    fn pivot_tol() -> Self {
        1e-12
    }
    fn proj_tol() -> Self {
        1e-13
    }
}

impl Real for f32 {
    fn lp_tol() -> Self {
        1e-4
    }
    fn pivot_tol() -> Self {
        1e-6
    }
    fn proj_tol() -> Self {
        1e-6
    }
}

pub(crate) fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(T::zero(), T::max)
}

pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}
