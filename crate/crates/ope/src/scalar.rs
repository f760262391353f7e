//! Scalar abstraction so the numeric core works with either `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::num::ParseFloatError;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar used throughout the crate.
///
/// Everything downstream (logs, policies, estimators, oracles) is generic
/// over this trait; `f64` is the default instantiation exposed through the
/// crate-root aliases. `f32` works too but loses oracle precision.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + Sum<Self>
    + for<'a> Sum<&'a Self>
    + Debug
    + Display
    + FromStr<Err = ParseFloatError>
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion of an `f64` constant into the scalar type.
    fn of(v: f64) -> Self;

    /// Counts as scalars, mostly for `1/T` style averages.
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Uniform draw from `[0, 1)`.
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Standard normal draw.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Canonical bit pattern, used to key discrete contexts. `-0.0` maps to
    /// the `0.0` pattern so both spell the same context.
    fn key_bits(self) -> u64;
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }

    fn key_bits(self) -> u64 {
        if self == 0.0 {
            0.0f64.to_bits()
        } else {
            self.to_bits()
        }
    }
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }

    fn key_bits(self) -> u64 {
        if self == 0.0 {
            u64::from(0.0f32.to_bits())
        } else {
            u64::from(self.to_bits())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_bits_canonicalizes_signed_zero() {
        assert_eq!((-0.0f64).key_bits(), 0.0f64.key_bits());
        assert_ne!(1.0f64.key_bits(), 2.0f64.key_bits());
    }

    #[test]
    fn of_round_trips_for_f64() {
        assert_eq!(f64::of(0.25), 0.25);
        assert_eq!(f32::of(0.25), 0.25f32);
    }
}
