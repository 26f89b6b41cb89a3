mod common;

use hcma::chain::{
    delegation_gain, estimate_performance, tally_scored, trace_query, ChainConfig, CostKind,
    Decision, ErrorMode, ScoredChain,
};
use hcma::records::{generate_synthetic, SyntheticSpec};
use proptest::prelude::*;

use common::*;

fn thresholds() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 3).prop_map(|pairs| {
        let reject: Vec<f64> = pairs.iter().map(|&(x, y)| x.min(y)).collect();
        let accept: Vec<f64> = pairs[..2].iter().map(|&(x, y)| x.max(y)).collect();
        (reject, accept)
    })
}

fn with_last(reject: &[f64], accept: &[f64]) -> Vec<f64> {
    let mut a = accept.to_vec();
    a.push(reject[reject.len() - 1]);
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn terminal_counts_partition_the_dataset(seed in 0u64..1000, (reject, accept) in thresholds()) {
        let (dataset, members) = three_tier(200, seed);
        let scored = ScoredChain::build(&members, &dataset, CostKind::Dollars).unwrap();
        for mode in [ErrorMode::Plugin, ErrorMode::Empirical] {
            let tally = tally_scored(&scored, &reject, &with_last(&reject, &accept), mode).unwrap();
            prop_assert_eq!(tally.terminated.iter().sum::<usize>(), dataset.len());
            prop_assert!(tally.rejected <= dataset.len());
        }
    }

    #[test]
    fn abstention_is_monotone_in_each_reject_threshold(
        seed in 0u64..1000,
        (reject, accept) in thresholds(),
        j in 0usize..3,
        bump in 0.0..=1.0f64,
    ) {
        let (dataset, members) = three_tier(200, seed);
        let scored = ScoredChain::build(&members, &dataset, CostKind::Dollars).unwrap();
        let full_accept = with_last(&reject, &accept);
        let before = tally_scored(&scored, &reject, &full_accept, ErrorMode::Plugin).unwrap().point();
        let mut raised = reject.clone();
        let ceiling = if j == 2 { 1.0 } else { accept[j] };
        raised[j] = reject[j] + bump * (ceiling - reject[j]);
        let after = tally_scored(&scored, &raised, &with_last(&raised, &accept), ErrorMode::Plugin).unwrap().point();
        prop_assert!(after.abstention >= before.abstention);
    }

    #[test]
    fn error_is_bounded_by_the_answered_fraction(seed in 0u64..1000, (reject, accept) in thresholds()) {
        let (dataset, members) = three_tier(200, seed);
        let config = ChainConfig::new(members, reject, accept).unwrap();
        let plugin = estimate_performance(&config, &dataset, ErrorMode::Plugin, CostKind::Dollars).unwrap();
        prop_assert!(plugin.error <= 1.0 - plugin.abstention + 1e-15);
        let empirical = estimate_performance(&config, &dataset, ErrorMode::Empirical, CostKind::Dollars).unwrap();
        prop_assert!(empirical.error + empirical.abstention <= 1.0 + 1e-15);
    }

    #[test]
    fn plugin_estimate_equals_sum_of_traces(seed in 0u64..1000, (reject, accept) in thresholds()) {
        let (dataset, members) = three_tier(150, seed);
        let config = ChainConfig::new(members, reject, accept).unwrap();
        let point = estimate_performance(&config, &dataset, ErrorMode::Plugin, CostKind::Dollars).unwrap();
        let (mut error, mut rejected, mut cost) = (0.0, 0usize, 0.0);
        for record in dataset.records() {
            let t = trace_query(&config, record, CostKind::Dollars).unwrap();
            cost += t.effective_cost;
            match t.decision {
                Decision::Accept => error += 1.0 - t.p_hat[t.terminal_index],
                Decision::Reject => rejected += 1,
                Decision::Delegate => unreachable!("traces end in a terminal decision"),
            }
        }
        let n = dataset.len() as f64;
        prop_assert!((point.error - error / n).abs() <= 1e-15);
        prop_assert!((point.expected_cost - cost / n).abs() <= 1e-12);
        prop_assert_eq!(point.abstention, rejected as f64 / n);
    }

    #[test]
    fn delegation_identity_holds_exactly(bits in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 2..400)) {
        let d: Vec<bool> = bits.iter().map(|b| b.0).collect();
        let es: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let el: Vec<bool> = bits.iter().map(|b| b.2).collect();
        let n = d.len() as f64;
        let mean = |v: &dyn Fn(usize) -> bool| (0..d.len()).filter(|&i| v(i)).count() as f64 / n;
        let q = mean(&|i| d[i]);
        let policy = mean(&|i| if d[i] { el[i] } else { es[i] });
        let random = q * mean(&|i| el[i]) + (1.0 - q) * mean(&|i| es[i]);
        let g = delegation_gain(&d, &es, &el).unwrap();
        prop_assert!((policy - random - g.delta_e).abs() <= 1e-12);
    }
}

#[test]
fn accept_all_matches_the_first_model_alone() {
    let (dataset, members) = three_tier(500, 21);
    let chain = ChainConfig::new(members.clone(), vec![0.0; 3], vec![0.0; 2]).unwrap();
    let single = ChainConfig::new(members[..1].to_vec(), vec![0.0], vec![]).unwrap();
    for mode in [ErrorMode::Plugin, ErrorMode::Empirical] {
        for kind in [CostKind::Dollars, CostKind::Latency] {
            let a = estimate_performance(&chain, &dataset, mode, kind).unwrap();
            let b = estimate_performance(&single, &dataset, mode, kind).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.abstention, 0.0);
        }
    }
}

#[test]
fn reject_all_costs_the_first_hop() {
    let (dataset, members) = three_tier(300, 22);
    let sentinel = 1.0f64.next_up();
    let _ = sentinel;
    let config = ChainConfig::new(members, vec![1.0, 1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let p = estimate_performance(&config, &dataset, ErrorMode::Plugin, CostKind::Dollars).unwrap();
    // Calibrated outputs never reach 1, so everything is rejected at the first member.
    assert_eq!(p.abstention, 1.0);
    assert_eq!(p.error, 0.0);
    assert!((p.expected_cost - COSTS[0]).abs() < 1e-15);
}

#[test]
fn latency_costs_accumulate_along_the_visited_prefix() {
    let dataset = generate_synthetic(&SyntheticSpec::three_tier(200, 23)).unwrap();
    let members = calibrated_members(&dataset, &COSTS);
    let config = ChainConfig::new(members, vec![0.0; 3], vec![1.0, 1.0]).unwrap();
    let p = estimate_performance(&config, &dataset, ErrorMode::Plugin, CostKind::Latency).unwrap();
    // Calibrated outputs are below 1, so every query delegates to the last member.
    assert!((p.expected_cost - (150.0 + 400.0 + 1200.0)).abs() < 1e-9);
}
