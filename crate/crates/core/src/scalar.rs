//! Floating-point abstraction shared by the network, probe, metric and theory code.
//!
//! Everything numeric is written against [`Scalar`]; the crate root fixes the
//! default precision to `f64` through type aliases.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossless-enough conversion from `f64`; every supported type can represent
    /// the constants used in this crate.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn of_sign(s: i8) -> Self {
        if s >= 0 {
            Self::one()
        } else {
            -Self::one()
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `sgn` with the convention `sgn(0) = +1` used for every prediction.
#[inline]
pub fn sign<T: Scalar>(v: T) -> i8 {
    if v >= T::zero() {
        1
    } else {
        -1
    }
}

/// Logistic sigmoid.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// `-log(sigmoid(z))`.
#[inline]
pub fn neg_log_sigmoid<T: Scalar>(z: T) -> T {
    softplus(-z)
}
