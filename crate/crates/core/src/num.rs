//! Generic scalar support for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar usable throughout the numeric core.
///
/// Implemented for `f32` and `f64`. Random draws are routed through the
/// trait so that samplers stay generic without per-call distribution bounds.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Draw from the standard normal distribution.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Conversion from `f64` constants (lossy for `f32`).
    fn of(x: f64) -> Self;

    /// Conversion to `f64` for reporting (lossless for `f32`/`f64`).
    fn to_f64_lossy(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random()
            }

            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// log(p / (1 - p)).
#[inline]
pub fn logit<F: Real>(p: F) -> F {
    (p / (F::one() - p)).ln()
}

/// 1 / (1 + exp(-y)), evaluated stably for large |y|.
#[inline]
pub fn inv_logit<F: Real>(y: F) -> F {
    if y >= F::zero() {
        F::one() / (F::one() + (-y).exp())
    } else {
        let e = y.exp();
        e / (F::one() + e)
    }
}

/// Log density of N(mean, sd^2) at x, including the normalizing constant.
#[inline]
pub fn ln_normal_pdf<F: Real>(x: F, mean: F, sd: F) -> F {
    let z = (x - mean) / sd;
    F::of(-0.5) * z * z - sd.ln() - F::of(0.5 * LN_TWO_PI)
}

/// ln(2 * pi).
pub const LN_TWO_PI: f64 = 1.837_877_066_409_345_5;
