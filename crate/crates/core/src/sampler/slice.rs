//! Univariate slice sampler with stepping-out and shrinkage (Neal 2003),
//! used for every variance and autocorrelation hyperparameter.

use rand::Rng;

use crate::num::Real;

const MAX_STEP_OUT: usize = 64;
const MAX_SHRINK: usize = 256;

/// Draws the next state of a Markov chain whose stationary density is
/// `exp(ln_target)` restricted to `(lo, hi)`. `x0` must have finite
/// log density; `width` sets the initial bracket size.
pub fn slice_sample<F, R, T>(x0: F, mut ln_target: T, width: F, lo: F, hi: F, rng: &mut R) -> F
where
    F: Real,
    R: Rng + ?Sized,
    T: FnMut(F) -> F,
{
    let f0 = ln_target(x0);
    debug_assert!(f0.is_finite(), "slice_sample requires a valid start");
    let ln_level = f0 + F::unit_uniform(rng).ln();

    // Initial bracket around x0, clamped to the domain.
    let mut left = x0 - width * F::unit_uniform(rng);
    let mut right = left + width;
    left = left.max(lo);
    right = right.min(hi);

    let mut steps = MAX_STEP_OUT;
    while steps > 0 && left > lo && ln_target(left) > ln_level {
        left = (left - width).max(lo);
        steps -= 1;
    }
    let mut steps = MAX_STEP_OUT;
    while steps > 0 && right < hi && ln_target(right) > ln_level {
        right = (right + width).min(hi);
        steps -= 1;
    }

    for _ in 0..MAX_SHRINK {
        let x1 = left + F::unit_uniform(rng) * (right - left);
        if ln_target(x1) > ln_level {
            return x1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    // Shrinkage exhausted (an effectively degenerate slice); keep the
    // current state, which leaves the target invariant.
    x0
}
