use hcma::calibration::{
    classification_metrics, cross_model_fit, ece, fit_platt, fit_platt_with_diagnostics,
    repeated_protocol, Calibrator, ProtocolOptions,
};
use hcma::records::{
    generate_synthetic, Dataset, ModelEntry, QueryRecord, SyntheticModel, SyntheticSpec,
};
use hcma::transforms::TransformKind;
use hcma::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Raw probabilities whose max-softmax feature is `t`, labelled from `sigmoid(w t + b)`.
fn logistic_sample(n: usize, w: f64, b: f64, t_max: f64, seed: u64) -> Vec<(f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..t_max);
            let y = rng.random::<f64>() < logistic(w * t + b);
            (-(-t).exp_m1(), y)
        })
        .collect()
}

#[test]
fn recovers_generating_parameters_within_standard_errors() {
    for seed in 0..5 {
        let pairs = logistic_sample(20_000, 2.0, -1.0, 4.0, seed);
        let fit = fit_platt_with_diagnostics(&pairs, TransformKind::MaxSoftmax, 0.0).unwrap();
        let (se_w, se_b) = fit.std_errors;
        assert!(
            (fit.calibrator.weight - 2.0).abs() < 4.0 * se_w,
            "{:?}",
            fit.calibrator
        );
        assert!(
            (fit.calibrator.intercept + 1.0).abs() < 4.0 * se_b,
            "{:?}",
            fit.calibrator
        );
        assert!(fit.gradient.0.abs() < 1e-6 && fit.gradient.1.abs() < 1e-6);
    }
}

#[test]
fn separable_labels_without_penalty_fail_to_converge() {
    let pairs: Vec<(f64, bool)> = (0..40).map(|i| (i as f64 / 40.0, i >= 20)).collect();
    assert!(matches!(
        fit_platt(&pairs, TransformKind::Identity, 0.0),
        Err(Error::NonConvergence(_))
    ));
    let penalized = fit_platt(&pairs, TransformKind::Identity, 1e-4).unwrap();
    assert!(penalized.weight > 0.0);
}

#[test]
fn shared_difficulty_gives_positive_cross_model_weight() {
    let ds = generate_synthetic(&SyntheticSpec::three_tier(1500, 5)).unwrap();
    let fit = cross_model_fit(&ds, "small", "large", TransformKind::MaxSoftmax, 1e-4).unwrap();
    assert!(
        fit.calibrator.weight > 3.0 * fit.std_errors.0,
        "{:?}",
        fit.calibrator
    );
    assert_eq!(fit.calibrator.model_id, "large");
}

#[test]
fn independent_models_give_an_insignificant_cross_model_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let records = (0..3000)
        .map(|i| {
            let entry = |raw_prob: f64, correct: bool| ModelEntry {
                raw_prob,
                correct,
                tokens_in: 0,
                tokens_out: 0,
                latency_ms: None,
            };
            let pa: f64 = rng.random_range(0.25..1.0);
            let pb: f64 = rng.random_range(0.25..1.0);
            let a = entry(pa, rng.random::<f64>() < pa);
            let b = entry(pb, rng.random::<f64>() < pb);
            QueryRecord {
                query_id: format!("q{i}"),
                entries: [("a".to_string(), a), ("b".to_string(), b)]
                    .into_iter()
                    .collect(),
            }
        })
        .collect();
    let ds = Dataset::new(records).unwrap();
    let fit = cross_model_fit(&ds, "a", "b", TransformKind::MaxSoftmax, 0.0).unwrap();
    assert!(
        fit.calibrator.weight.abs() < 3.0 * fit.std_errors.0,
        "{fit:?}"
    );
}

#[test]
fn max_softmax_beats_raw_fits_on_overconfident_scores() {
    let spec = SyntheticSpec {
        n: 1530,
        models: vec![SyntheticModel {
            model_id: "m".into(),
            skill: 1.5,
            sharpness: 3.0,
            latency_ms: None,
        }],
        noise_sd: 0.5,
        seed: 0,
    };
    let ds = generate_synthetic(&spec).unwrap();
    let options = ProtocolOptions::default();
    let raw = repeated_protocol(&ds, "m", TransformKind::Identity, 50, 100, 0, &options).unwrap();
    let msp = repeated_protocol(&ds, "m", TransformKind::MaxSoftmax, 50, 100, 0, &options).unwrap();
    assert_eq!(raw.n_test, 1480);
    // Same seed, same training draws: the comparison is paired by repetition.
    let diffs: Vec<f64> = raw
        .repetitions
        .iter()
        .zip(&msp.repetitions)
        .map(|(r, m)| m.ece - r.ece)
        .collect();
    let mean = diffs.iter().sum::<f64>() / 100.0;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    let t = mean / (sd / 10.0);
    assert!(t < -2.0, "paired t = {t}, raw {} msp {}", raw.ece, msp.ece);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn predictions_are_monotone_for_positive_weight(
        w in 0.01..20.0f64,
        b in -10.0..10.0f64,
        p in 0.0..=1.0f64,
        q in 0.0..=1.0f64,
        kind in prop_oneof![Just(TransformKind::Identity), Just(TransformKind::MaxSoftmax), Just(TransformKind::PTrue)],
    ) {
        let cal = Calibrator::new(kind, w, b);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let (a, c) = (cal.predict(lo).unwrap(), cal.predict(hi).unwrap());
        prop_assert!(a <= c);
        prop_assert!(a > 0.0 && c < 1.0);
    }

    #[test]
    fn single_bin_ece_is_the_global_gap(data in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..200)) {
        let probs: Vec<f64> = data.iter().map(|d| d.0).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let n = probs.len() as f64;
        let gap = (probs.iter().sum::<f64>() / n - labels.iter().filter(|&&y| y).count() as f64 / n).abs();
        prop_assert!((ece(&probs, &labels, 1).unwrap() - gap).abs() < 1e-12);
        let e10 = ece(&probs, &labels, 10).unwrap();
        prop_assert!((0.0..=1.0).contains(&e10));
        prop_assert!(e10 + 1e-12 >= gap);
    }

    #[test]
    fn classification_metrics_are_consistent(data in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..200)) {
        let probs: Vec<f64> = data.iter().map(|d| d.0).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let m = classification_metrics(&probs, &labels, 0.5).unwrap();
        let agree = probs.iter().zip(&labels).filter(|(p, y)| (**p >= 0.5) == **y).count();
        prop_assert_eq!(m.accuracy, agree as f64 / probs.len() as f64);
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
        prop_assert!(m.f1 + 1e-15 >= m.precision.min(m.recall));
    }
}
