//! Nonlinear spreading maps applied to raw token probabilities before Platt
//! scaling. Overconfident probabilities crowd near 0 and 1; these maps add
//! asymptotes there so a one-feature logistic regression can separate them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Saturation guard: probabilities are clamped to `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// `log(1 / (1 - p))`, for the maximum softmax probability of a multiple-choice answer.
    MaxSoftmax,
    /// Branch map around 0.5 for P("Y") from a Y/N verification call.
    PTrue,
    /// Untransformed input (plain Platt scaling).
    Identity,
}

impl TransformKind {
    pub fn apply(self, p: f64) -> Result<f64> {
        match self {
            TransformKind::MaxSoftmax => transform_max_softmax(p),
            TransformKind::PTrue => transform_p_true(p),
            TransformKind::Identity => check(p),
        }
    }

    /// Short name used on the command line: `msp`, `ptrue` or `raw`.
    pub fn cli_name(self) -> &'static str {
        match self {
            TransformKind::MaxSoftmax => "msp",
            TransformKind::PTrue => "ptrue",
            TransformKind::Identity => "raw",
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" | "max_softmax" => Ok(TransformKind::MaxSoftmax),
            "ptrue" | "p_true" => Ok(TransformKind::PTrue),
            "raw" | "identity" => Ok(TransformKind::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown transform `{other}`"
            ))),
        }
    }
}

fn check(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::Domain(p))
    }
}

/// `log(1 / (1 - p))` with `p` capped at `1 - EPS`.
pub fn transform_max_softmax(p_raw: f64) -> Result<f64> {
    let p = check(p_raw)?.min(1.0 - EPS);
    Ok(-(-p).ln_1p())
}

/// `log(1 / (1 - p))` for `p >= 0.5`, otherwise `log 2 - log(1 / p)`.
///
/// Point-symmetric about `(0.5, ln 2 / 2)` away from 0.5 itself; the value at
/// exactly 0.5 comes from the upper branch, so there is a jump of `ln 2` there.
pub fn transform_p_true(p: f64) -> Result<f64> {
    let p = check(p)?.clamp(EPS, 1.0 - EPS);
    if p >= 0.5 {
        Ok(-(-p).ln_1p())
    } else {
        Ok(std::f64::consts::LN_2 + p.ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{E, LN_2};

    #[test]
    fn max_softmax_closed_forms() {
        assert_eq!(transform_max_softmax(0.0).unwrap(), 0.0);
        assert!((transform_max_softmax(0.5).unwrap() - LN_2).abs() < 1e-15);
        assert!((transform_max_softmax(1.0 - 1.0 / E).unwrap() - 1.0).abs() < 1e-15);
        let top = transform_max_softmax(1.0).unwrap();
        assert!((top - 27.631).abs() < 1e-3, "{top}");
    }

    #[test]
    fn p_true_closed_forms() {
        assert!((transform_p_true(0.5).unwrap() - LN_2).abs() < 1e-15);
        assert!((transform_p_true(1.0 - 1.0 / E).unwrap() - 1.0).abs() < 1e-15);
        assert!((transform_p_true(0.25).unwrap() + LN_2).abs() < 1e-15);
        assert!(transform_p_true(0.0).unwrap().is_finite());
    }

    #[test]
    fn domain_errors() {
        for bad in [-0.1, 1.1, f64::NAN] {
            assert!(matches!(transform_max_softmax(bad), Err(Error::Domain(_))));
            assert!(matches!(transform_p_true(bad), Err(Error::Domain(_))));
            assert!(TransformKind::Identity.apply(bad).is_err());
        }
    }

    proptest! {
        #[test]
        fn strictly_monotone(a in EPS..(1.0 - EPS), b in EPS..(1.0 - EPS)) {
            prop_assume!(a < b);
            prop_assert!(transform_max_softmax(a).unwrap() < transform_max_softmax(b).unwrap());
            prop_assert!(transform_p_true(a).unwrap() < transform_p_true(b).unwrap());
        }

        #[test]
        fn p_true_point_symmetry(d in 1e-9f64..(0.5 - 1e-6)) {
            let s = transform_p_true(0.5 + d).unwrap() + transform_p_true(0.5 - d).unwrap();
            prop_assert!((s - LN_2).abs() < 1e-10, "d={} sum={}", d, s);
        }

        #[test]
        fn rank_preserving(v in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
            for kind in [TransformKind::MaxSoftmax, TransformKind::PTrue] {
                let mut by_raw: Vec<usize> = (0..v.len()).collect();
                by_raw.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
                let t: Vec<f64> = v.iter().map(|&p| kind.apply(p).unwrap()).collect();
                let mut by_t: Vec<usize> = (0..v.len()).collect();
                by_t.sort_by(|&i, &j| t[i].total_cmp(&t[j]).then(v[i].total_cmp(&v[j])).then(i.cmp(&j)));
                prop_assert_eq!(by_raw, by_t);
            }
        }
    }
}
