//! Simulates a three-model chain with fixed thresholds, traces a few queries,
//! and compares the plug-in error estimate with the labelled error.
//!
//! cargo run --example chain_simulation

use hcma::calibration::fit_platt;
use hcma::chain::{estimate_performance, trace_query, ChainConfig, CostKind, ErrorMode};
use hcma::records::{generate_synthetic, ModelProfile, SyntheticSpec};
use hcma::transforms::TransformKind;

fn main() -> anyhow::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::three_tier(1500, 1))?;
    let costs = [0.3, 0.8, 5.0];
    let members = dataset
        .model_ids()
        .iter()
        .zip(costs)
        .map(|(id, cost)| {
            let calibrator =
                fit_platt(&dataset.pairs(id)?, TransformKind::MaxSoftmax, 1e-4)?.with_model_id(id);
            Ok(ModelProfile::new(id, cost)?.with_calibrator(calibrator))
        })
        .collect::<hcma::Result<Vec<_>>>()?;
    let config = ChainConfig::new(members, vec![0.2, 0.25, 0.4], vec![0.7, 0.75])?;

    for record in &dataset.records()[..5] {
        let t = trace_query(&config, record, CostKind::Dollars)?;
        let p: Vec<String> = t.p_hat.iter().map(|p| format!("{p:.3}")).collect();
        println!(
            "{}: p_hat [{}] -> {:?} at {} (cost {:.2})",
            record.query_id,
            p.join(", "),
            t.decision,
            t.terminal_model_id,
            t.effective_cost
        );
    }
    for mode in [ErrorMode::Plugin, ErrorMode::Empirical] {
        let point = estimate_performance(&config, &dataset, mode, CostKind::Dollars)?;
        println!(
            "{mode:?}: error {:.4}, abstention {:.4}, expected cost {:.4}",
            point.error, point.abstention, point.expected_cost
        );
    }
    Ok(())
}
