//! Small numeric helpers shared across modules.

use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

const SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Order-independent sum of nonnegative reals held in 64.64 fixed point.
///
/// Error terms `1 - p` are multiples of 2^-53 for any `p` in `[0, 1]`, so they
/// are represented exactly. Other inputs are rounded once to 2^-64 on entry.
/// Sums can be added and subtracted without rounding, which lets aggregated
/// histograms and per-record loops agree to the last bit.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ExactSum(i128);

impl ExactSum {
    pub const ZERO: ExactSum = ExactSum(0);

    pub fn from_f64(x: f64) -> Self {
        debug_assert!(x.is_finite());
        ExactSum((x * SCALE).round() as i128)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE
    }

    /// `self / n` rounded once.
    pub fn mean(self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.to_f64() / n as f64
        }
    }
}

impl Add for ExactSum {
    type Output = ExactSum;
    fn add(self, rhs: Self) -> Self {
        ExactSum(self.0 + rhs.0)
    }
}

impl Sub for ExactSum {
    type Output = ExactSum;
    fn sub(self, rhs: Self) -> Self {
        ExactSum(self.0 - rhs.0)
    }
}

impl AddAssign for ExactSum {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for ExactSum {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ExactSum::ZERO, Add::add)
    }
}

/// Empirical quantile by linear interpolation between order statistics
/// (the common "type 7" definition). `sorted` must be nonempty and ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}
