//! Platt scaling on transformed token probabilities.
//!
//! A [`Calibrator`] is a one-feature logistic regression
//! `p_hat = sigmoid(weight * t + intercept)` where `t` is the raw probability
//! passed through a [`TransformKind`]. Fitting maximizes the L2-penalized
//! Bernoulli log-likelihood with Newton/IRLS steps and step-halving.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::records::Dataset;
use crate::transforms::TransformKind;

pub const DEFAULT_L2_LAMBDA: f64 = 1e-4;
pub const DEFAULT_ECE_BINS: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-10;
const MAX_HALVINGS: usize = 60;

/// Calibrated outputs are kept strictly inside `(0, 1)`.
pub const P_HAT_MIN: f64 = f64::EPSILON / 2.0;
pub const P_HAT_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    #[serde(default)]
    pub model_id: String,
    pub transform: TransformKind,
    pub weight: f64,
    pub intercept: f64,
    pub l2_lambda: f64,
    pub fitted_on: usize,
}

impl Calibrator {
    pub fn new(transform: TransformKind, weight: f64, intercept: f64) -> Self {
        Self {
            model_id: String::new(),
            transform,
            weight,
            intercept,
            l2_lambda: 0.0,
            fitted_on: 0,
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    /// Estimated probability that the model's answer is correct.
    pub fn predict(&self, raw_prob: f64) -> Result<f64> {
        let t = self.transform.apply(raw_prob)?;
        Ok(sigmoid(self.weight * t + self.intercept).clamp(P_HAT_MIN, P_HAT_MAX))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(path)?,
        ))?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Free-function form of [`Calibrator::predict`].
pub fn predict(cal: &Calibrator, raw_prob: f64) -> Result<f64> {
    cal.predict(raw_prob)
}

/// Fitted calibrator plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PlattFit {
    pub calibrator: Calibrator,
    /// Standard errors of `(weight, intercept)` from the inverse penalized Hessian.
    pub std_errors: (f64, f64),
    pub iterations: usize,
    /// Gradient of the penalized log-likelihood at the solution.
    pub gradient: (f64, f64),
}

pub fn fit_platt(
    pairs: &[(f64, bool)],
    transform: TransformKind,
    l2_lambda: f64,
) -> Result<Calibrator> {
    fit_platt_with_diagnostics(pairs, transform, l2_lambda).map(|f| f.calibrator)
}

/// Penalized log-likelihood `sum(log-lik) - lambda/2 * (w^2 + b^2)`.
fn objective(xs: &[f64], ys: &[bool], w: f64, b: f64, lambda: f64) -> f64 {
    let ll: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let eta = w * x + b;
            if y {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum();
    ll - 0.5 * lambda * (w * w + b * b)
}

struct Newton {
    grad: (f64, f64),
    // Negated Hessian, symmetric positive definite: [[h11, h12], [h12, h22]].
    h11: f64,
    h12: f64,
    h22: f64,
}

fn newton_terms(xs: &[f64], ys: &[bool], w: f64, b: f64, lambda: f64) -> Newton {
    let (mut gw, mut gb, mut h11, mut h12, mut h22) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let mu = sigmoid(w * x + b);
        let r = f64::from(u8::from(y)) - mu;
        let v = mu * (1.0 - mu);
        gw += r * x;
        gb += r;
        h11 += v * x * x;
        h12 += v * x;
        h22 += v;
    }
    Newton {
        grad: (gw - lambda * w, gb - lambda * b),
        h11: h11 + lambda,
        h12,
        h22: h22 + lambda,
    }
}

pub fn fit_platt_with_diagnostics(
    pairs: &[(f64, bool)],
    transform: TransformKind,
    l2_lambda: f64,
) -> Result<PlattFit> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a calibrator on no data".into(),
        ));
    }
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 training pairs are required".into(),
        ));
    }
    if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "l2_lambda must be >= 0, got {l2_lambda}"
        )));
    }
    let first = pairs[0].1;
    if l2_lambda == 0.0 && pairs.iter().all(|p| p.1 == first) {
        return Err(Error::NonConvergence(
            "all labels identical; the unpenalized likelihood has no maximizer".into(),
        ));
    }
    let xs: Vec<f64> = pairs
        .iter()
        .map(|&(p, _)| transform.apply(p))
        .collect::<Result<_>>()?;
    let ys: Vec<bool> = pairs.iter().map(|p| p.1).collect();
    if l2_lambda == 0.0 && separable(&xs, &ys) {
        return Err(Error::NonConvergence(
            "labels are separable by the score; the unpenalized likelihood has no maximizer".into(),
        ));
    }

    let (mut w, mut b) = (0.0, 0.0);
    let mut current = objective(&xs, &ys, w, b, l2_lambda);
    for iteration in 1..=MAX_ITERATIONS {
        let nt = newton_terms(&xs, &ys, w, b, l2_lambda);
        let det = nt.h11 * nt.h22 - nt.h12 * nt.h12;
        if !(det > 0.0 && det.is_finite()) {
            return Err(Error::NonConvergence(format!(
                "singular information matrix at iteration {iteration}"
            )));
        }
        let dw = (nt.h22 * nt.grad.0 - nt.h12 * nt.grad.1) / det;
        let db = (nt.h11 * nt.grad.1 - nt.h12 * nt.grad.0) / det;

        let slack = 1e-12 * (1.0 + current.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let (nw, nb) = (w + step * dw, b + step * db);
            let value = objective(&xs, &ys, nw, nb, l2_lambda);
            if value >= current - slack {
                accepted = Some((nw, nb, value));
                break;
            }
            step *= 0.5;
        }
        let Some((nw, nb, value)) = accepted else {
            // No ascent direction left at working precision.
            return Ok(finish(&xs, &ys, w, b, l2_lambda, transform, iteration));
        };
        let change = (nw - w).abs().max((nb - b).abs());
        w = nw;
        b = nb;
        current = value;
        if !(w.is_finite() && b.is_finite()) {
            return Err(Error::NonConvergence("parameters diverged".into()));
        }
        if change < TOLERANCE {
            return Ok(finish(&xs, &ys, w, b, l2_lambda, transform, iteration));
        }
    }
    Err(Error::NonConvergence(format!(
        "no convergence after {MAX_ITERATIONS} iterations (w={w}, b={b}); data may be separable"
    )))
}

/// Complete or quasi-complete separation of one score by the labels.
fn separable(xs: &[f64], ys: &[bool]) -> bool {
    let range = |label: bool| {
        xs.iter()
            .zip(ys)
            .filter(|(_, &y)| y == label)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&x, _)| {
                (lo.min(x), hi.max(x))
            })
    };
    let (pos_lo, pos_hi) = range(true);
    let (neg_lo, neg_hi) = range(false);
    neg_hi <= pos_lo || pos_hi <= neg_lo
}

fn finish(
    xs: &[f64],
    ys: &[bool],
    w: f64,
    b: f64,
    lambda: f64,
    transform: TransformKind,
    iterations: usize,
) -> PlattFit {
    let nt = newton_terms(xs, ys, w, b, lambda);
    let det = nt.h11 * nt.h22 - nt.h12 * nt.h12;
    PlattFit {
        calibrator: Calibrator {
            model_id: String::new(),
            transform,
            weight: w,
            intercept: b,
            l2_lambda: lambda,
            fitted_on: xs.len(),
        },
        std_errors: ((nt.h22 / det).sqrt(), (nt.h11 / det).sqrt()),
        iterations,
        gradient: nt.grad,
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Expected calibration error over `n_bins` equal-width bins on `[0, 1]`.
pub fn ece(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be at least 1".into()));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let bin = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
        conf[bin] += p;
        hits[bin] += usize::from(y);
        count[bin] += 1;
    }
    let n = probs.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (conf[b] / c - hits[b] as f64 / c).abs()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// No prediction reached the threshold; precision is reported as 0.
    pub empty_positive: bool,
}

/// Treats `p >= threshold` as a prediction that the answer is correct.
pub fn classification_metrics(
    probs: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<ClassificationMetrics> {
    check_lengths(probs.len(), labels.len())?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassificationMetrics {
        precision,
        recall,
        f1,
        accuracy: ratio(tp + tn, probs.len()),
        empty_positive: tp + fp == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub l2_lambda: f64,
    pub n_bins: usize,
    pub threshold: f64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            l2_lambda: DEFAULT_L2_LAMBDA,
            n_bins: DEFAULT_ECE_BINS,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionMetrics {
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub weight: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub model_id: String,
    pub transform: TransformKind,
    pub n_train: usize,
    pub n_test: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub repetitions: Vec<RepetitionMetrics>,
}

/// Generator for repetition `rep`: same seed, independent stream.
pub fn repetition_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Repeatedly fits on `n_train` random examples and scores the held-out rest.
///
/// Metrics are computed on calibrated outputs. Repetitions run in parallel;
/// each draws from its own stream of the seeded generator, so the report does
/// not depend on the number of worker threads.
pub fn repeated_protocol(
    dataset: &Dataset,
    model_id: &str,
    transform: TransformKind,
    n_train: usize,
    n_reps: usize,
    seed: u64,
    options: &ProtocolOptions,
) -> Result<CalibrationReport> {
    let pairs = dataset.pairs(model_id)?;
    let n = pairs.len();
    if n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "n_train ({n_train}) must be smaller than the dataset ({n} records)"
        )));
    }
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
    }
    let repetitions = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = repetition_rng(seed, rep as u64);
            let mut in_train = vec![false; n];
            let train: Vec<(f64, bool)> = index::sample(&mut rng, n, n_train)
                .into_iter()
                .map(|i| {
                    in_train[i] = true;
                    pairs[i]
                })
                .collect();
            let cal = fit_platt(&train, transform, options.l2_lambda)?;
            let mut probs = Vec::with_capacity(n - n_train);
            let mut labels = Vec::with_capacity(n - n_train);
            for (i, &(p, y)) in pairs.iter().enumerate() {
                if !in_train[i] {
                    probs.push(cal.predict(p)?);
                    labels.push(y);
                }
            }
            let m = classification_metrics(&probs, &labels, options.threshold)?;
            Ok(RepetitionMetrics {
                precision: m.precision,
                f1: m.f1,
                accuracy: m.accuracy,
                ece: ece(&probs, &labels, options.n_bins)?,
                weight: cal.weight,
                intercept: cal.intercept,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean =
        |f: fn(&RepetitionMetrics) -> f64| repetitions.iter().map(f).sum::<f64>() / n_reps as f64;
    Ok(CalibrationReport {
        model_id: model_id.to_string(),
        transform,
        n_train,
        n_test: n - n_train,
        n_reps,
        seed,
        precision: mean(|r| r.precision),
        f1: mean(|r| r.f1),
        accuracy: mean(|r| r.accuracy),
        ece: mean(|r| r.ece),
        repetitions,
    })
}

/// Fits `target`'s correctness against `source`'s transformed probability.
pub fn cross_model_fit(
    dataset: &Dataset,
    source_model_id: &str,
    target_model_id: &str,
    transform: TransformKind,
    l2_lambda: f64,
) -> Result<PlattFit> {
    let pairs = dataset
        .records()
        .iter()
        .map(|r| {
            Ok((
                r.entry(source_model_id)?.raw_prob,
                r.entry(target_model_id)?.correct,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fit = fit_platt_with_diagnostics(&pairs, transform, l2_lambda)?;
    fit.calibrator.model_id = target_model_id.to_string();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ece_hand_enumerated() {
        let e = ece(&[0.9, 0.9, 0.6, 0.6], &[true, false, true, true], 10).unwrap();
        assert!((e - 0.4).abs() < 1e-12, "{e}");
        assert_eq!(ece(&[1.0; 5], &[true; 5], 10).unwrap(), 0.0);
        assert_eq!(ece(&[1.0; 5], &[false; 5], 10).unwrap(), 1.0);
        assert!(matches!(
            ece(&[0.1], &[], 10),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ece_single_bin_is_mean_gap() {
        let mut rng = repetition_rng(1, 0);
        let probs: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..500).map(|_| rng.random()).collect();
        let gap = (probs.iter().sum::<f64>() / 500.0
            - labels.iter().filter(|&&y| y).count() as f64 / 500.0)
            .abs();
        assert!((ece(&probs, &labels, 1).unwrap() - gap).abs() < 1e-12);
    }

    #[test]
    fn ece_is_permutation_invariant() {
        let mut rng = repetition_rng(2, 0);
        let probs: Vec<f64> = (0..300).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..300).map(|_| rng.random()).collect();
        let a = ece(&probs, &labels, 10).unwrap();
        let (rp, rl): (Vec<f64>, Vec<bool>) = probs
            .iter()
            .rev()
            .copied()
            .zip(labels.iter().rev().copied())
            .unzip();
        let b = ece(&rp, &rl, 10).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metrics_examples() {
        let m = classification_metrics(&[0.9, 0.8], &[true, true], 0.5).unwrap();
        assert_eq!((m.precision, m.f1, m.accuracy), (1.0, 1.0, 1.0));
        let m = classification_metrics(&[0.9, 0.9, 0.1, 0.1], &[true, false, false, true], 0.5)
            .unwrap();
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.accuracy, 0.5);
        let m = classification_metrics(&[0.1, 0.2], &[true, false], 0.5).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.empty_positive);
    }

    #[test]
    fn predict_examples() {
        let zero = Calibrator::new(TransformKind::MaxSoftmax, 0.0, 0.0);
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(zero.predict(p).unwrap(), 0.5);
        }
        let ident = Calibrator::new(TransformKind::Identity, 1.0, 0.0);
        assert_eq!(ident.predict(0.0).unwrap(), 0.5);
        let cal = Calibrator::new(TransformKind::MaxSoftmax, 1.3, -0.2);
        let mut last = 0.0;
        for i in 0..=100 {
            let p = cal.predict(i as f64 / 100.0).unwrap();
            assert!(p >= last && p > 0.0 && p < 1.0);
            last = p;
        }
        assert!(cal.predict(1.5).is_err());
    }

    #[test]
    fn degenerate_labels() {
        let pairs: Vec<(f64, bool)> = (0..50).map(|i| (i as f64 / 50.0, true)).collect();
        assert!(matches!(
            fit_platt(&pairs, TransformKind::Identity, 0.0),
            Err(Error::NonConvergence(_))
        ));
        let cal = fit_platt(&pairs, TransformKind::Identity, 1e-4).unwrap();
        assert!(cal.intercept > 3.0);
        for &(p, _) in &pairs {
            assert!(cal.predict(p).unwrap() > 0.95);
        }
        assert!(fit_platt(&[], TransformKind::Identity, 1e-4).is_err());
        assert!(fit_platt(&[(0.5, true)], TransformKind::Identity, 1e-4).is_err());
    }

    #[test]
    fn separable_without_penalty_fails() {
        let pairs: Vec<(f64, bool)> = (0..20).map(|i| (i as f64 / 20.0, i >= 10)).collect();
        assert!(fit_platt(&pairs, TransformKind::Identity, 0.0).is_err());
        assert!(fit_platt(&pairs, TransformKind::Identity, 1e-4).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let cal = Calibrator::new(TransformKind::PTrue, 0.7, -0.1).with_model_id("8B");
        let text = serde_json::to_string(&cal).unwrap();
        assert!(text.contains("\"transform\":\"p_true\""));
        assert_eq!(serde_json::from_str::<Calibrator>(&text).unwrap(), cal);
    }
}
