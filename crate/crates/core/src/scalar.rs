//! Scalar type for gas amounts and schedule times.

use std::fmt::{Debug, Display};
use std::hash::Hash;
use std::iter::Sum;

use num_traits::{PrimInt, Unsigned};

/// Unsigned integer scalar used for task weights, start/finish times and
/// makespans. All schedule arithmetic is exact; floating point only appears
/// in derived ratios (speedup, utilization).
pub trait GasScalar:
    PrimInt + Unsigned + Sum<Self> + Hash + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion for ratio metrics.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::MAX)
    }

    /// Converts a count (threads, tasks) into the scalar type.
    ///
    /// Panics if the count does not fit, which only happens when a tiny
    /// scalar type is combined with a huge thread count.
    fn from_count(n: usize) -> Self {
        Self::from(n).expect("count does not fit in gas scalar")
    }
}

impl<T> GasScalar for T where
    T: PrimInt + Unsigned + Sum<T> + Hash + Debug + Display + Default + Send + Sync + 'static
{
}

/// Ceiling division, used by makespan lower bounds.
pub fn div_ceil<G: GasScalar>(a: G, b: G) -> G {
    let d = a / b;
    if a % b == G::zero() {
        d
    } else {
        d + G::one()
    }
}
