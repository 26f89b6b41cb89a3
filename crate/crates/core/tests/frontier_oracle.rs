mod common;

use std::collections::BTreeSet;

use hcma::chain::{CostKind, ErrorMode, ScoredChain};
use hcma::frontier::{
    build_grid, enumerate_frontier, single_model_baseline, skyline, FrontierEngine, FrontierOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn key(p: &hcma::chain::PerformancePoint) -> [u64; 3] {
    [
        p.error.to_bits(),
        p.abstention.to_bits(),
        p.expected_cost.to_bits(),
    ]
}

#[test]
fn histogram_frontier_equals_naive_resimulation_on_5x5x5_grid() {
    let (dataset, members) = three_tier(400, 3);
    let scored = ScoredChain::build(&members, &dataset, CostKind::Dollars).unwrap();
    let grid = build_grid(&scored, 0.25).unwrap();
    assert!(grid.levels.iter().all(|l| l.len() == 5));
    for mode in [ErrorMode::Plugin, ErrorMode::Empirical] {
        for early in [true, false] {
            let options = FrontierOptions {
                early_abstention: early,
                error_mode: mode,
                ..FrontierOptions::default()
            };
            let fast = enumerate_frontier(&scored, &grid, &options).unwrap();
            let naive = naive_frontier(&scored, &grid, mode, early);
            let fast_set: BTreeSet<_> = fast
                .points
                .iter()
                .map(|p| (p.index, key(&p.point)))
                .collect();
            let naive_set: BTreeSet<_> = naive.iter().map(|(c, p)| (*c, key(p))).collect();
            assert_eq!(fast_set, naive_set, "mode {mode:?}, early {early}");
            assert_eq!(
                fast.configs_enumerated as usize,
                all_configs(&grid, early).len()
            );
        }
    }
}

#[test]
fn engine_evaluate_matches_tally_on_random_configs() {
    let (dataset, members) = three_tier(500, 9);
    let scored = ScoredChain::build(&members, &dataset, CostKind::Latency).unwrap();
    let grid = build_grid(&scored, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mode in [ErrorMode::Plugin, ErrorMode::Empirical] {
        let engine = FrontierEngine::new(&scored, &grid, mode).unwrap();
        for _ in 0..200 {
            let mut c = hcma::frontier::ConfigIndex::default();
            for j in 0..3 {
                let m = grid.levels[j].len();
                let r = rng.random_range(0..m);
                c.reject[j] = r as u16;
                c.accept[j] = if j == 2 { r } else { rng.random_range(r..m) } as u16;
            }
            let (r, a) = threshold_values(&grid, &c);
            let naive = hcma::chain::tally_scored(&scored, &r, &a, mode)
                .unwrap()
                .point();
            assert_eq!(key(&engine.evaluate(&c).unwrap()), key(&naive));
        }
    }
}

#[test]
fn single_member_frontier_is_the_baseline_curve() {
    let (dataset, members) = three_tier(600, 4);
    let scored = ScoredChain::build(&members[..1], &dataset, CostKind::Dollars).unwrap();
    let grid = build_grid(&scored, 0.025).unwrap();
    assert_eq!(grid.levels[0].len(), 41);
    let frontier = enumerate_frontier(&scored, &grid, &FrontierOptions::default()).unwrap();
    assert_eq!(frontier.configs_enumerated, 41);
    let baseline = single_model_baseline(&scored, &grid.levels[0], ErrorMode::Plugin).unwrap();
    let from_frontier: BTreeSet<_> = frontier.points.iter().map(|p| key(&p.point)).collect();
    let from_baseline: BTreeSet<_> = baseline
        .iter()
        .map(|b| [b.error.to_bits(), b.abstention.to_bits(), b.cost.to_bits()])
        .collect();
    assert_eq!(from_frontier, from_baseline);
    let first = baseline.first().unwrap();
    assert_eq!(first.abstention, 0.0);
    let last = baseline.last().unwrap();
    assert_eq!((last.abstention, last.error), (1.0, 0.0));
    assert!(baseline.windows(2).all(|w| w[1].error < w[0].error));
}

#[test]
fn frontier_is_an_antichain_and_invariant_to_order() {
    let (dataset, members) = three_tier(300, 5);
    let scored = ScoredChain::build(&members, &dataset, CostKind::Dollars).unwrap();
    let grid = build_grid(&scored, 0.25).unwrap();
    let frontier = enumerate_frontier(&scored, &grid, &FrontierOptions::default()).unwrap();
    let pts: Vec<_> = frontier.points.iter().map(|p| p.point).collect();
    for a in &pts {
        for b in &pts {
            let strictly = weakly_dominates(a, b) && a != b;
            assert!(!strictly, "{a:?} dominates {b:?}");
        }
    }
    let coords = frontier.coords();
    let mut reversed = coords.clone();
    reversed.reverse();
    let n = coords.len();
    let back: BTreeSet<usize> = skyline(&reversed).into_iter().map(|i| n - 1 - i).collect();
    assert_eq!(back.len(), n);
}

#[test]
fn constrained_frontier_is_weakly_dominated() {
    let (dataset, members) = three_tier(400, 6);
    let scored = ScoredChain::build(&members, &dataset, CostKind::Dollars).unwrap();
    let grid = build_grid(&scored, 0.1).unwrap();
    let engine = FrontierEngine::new(&scored, &grid, ErrorMode::Empirical).unwrap();
    let base = FrontierOptions {
        error_mode: ErrorMode::Empirical,
        ..FrontierOptions::default()
    };
    let early = engine.enumerate(&base).unwrap().dedup();
    let constrained = engine
        .enumerate(&FrontierOptions {
            early_abstention: false,
            ..base
        })
        .unwrap();
    assert_eq!(constrained.configs_enumerated, 11 * 11 * 11);
    for c in &constrained.points {
        assert!(c.index.reject[..2].iter().all(|&r| r == 0));
        assert!(early
            .points
            .iter()
            .any(|e| weakly_dominates(&e.point, &c.point)));
    }
}

#[test]
fn finer_grid_never_worsens_the_frontier() {
    let (dataset, members) = three_tier(300, 8);
    let scored = ScoredChain::build(&members[..2], &dataset, CostKind::Dollars).unwrap();
    let coarse = enumerate_frontier(
        &scored,
        &build_grid(&scored, 0.25).unwrap(),
        &FrontierOptions::default(),
    )
    .unwrap();
    let fine = enumerate_frontier(
        &scored,
        &build_grid(&scored, 0.05).unwrap(),
        &FrontierOptions::default(),
    )
    .unwrap()
    .dedup();
    for c in &coarse.points {
        assert!(fine
            .points
            .iter()
            .any(|f| weakly_dominates(&f.point, &c.point)));
    }
}

#[test]
fn oversized_sweeps_are_refused_with_guidance() {
    let (dataset, members) = three_tier(100, 2);
    let scored = ScoredChain::build(&members, &dataset, CostKind::Dollars).unwrap();
    let grid = build_grid(&scored, 0.025).unwrap();
    let err = enumerate_frontier(
        &scored,
        &grid,
        &FrontierOptions {
            max_configs: 1_000_000,
            ..FrontierOptions::default()
        },
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("coarser resolution"), "{msg}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn skyline_matches_brute_force(points in prop::collection::vec((0u8..6, 0u8..6, 0u8..6), 0..80)) {
        let pts: Vec<[f64; 3]> = points.iter().map(|&(a, b, c)| [a as f64, b as f64, c as f64]).collect();
        prop_assert_eq!(skyline(&pts), brute_force_skyline(&pts));
    }

    #[test]
    fn skyline_is_permutation_invariant(points in prop::collection::vec((0u8..5, 0u8..5, 0u8..5), 1..60), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let pts: Vec<[f64; 3]> = points.iter().map(|&(a, b, c)| [a as f64, b as f64, c as f64]).collect();
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<[f64; 3]> = order.iter().map(|&i| pts[i]).collect();
        let direct: BTreeSet<usize> = skyline(&pts).into_iter().collect();
        let via_shuffle: BTreeSet<usize> = skyline(&shuffled).into_iter().map(|i| order[i]).collect();
        prop_assert_eq!(direct, via_shuffle);
    }
}
