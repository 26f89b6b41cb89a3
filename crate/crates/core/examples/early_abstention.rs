//! Compares chains that may abstain at any member with chains that abstain
//! only at the last member, with and without a cost ceiling.
//!
//! cargo run --release --example early_abstention

use hcma::calibration::fit_platt;
use hcma::chain::{CostKind, ErrorMode, ScoredChain};
use hcma::frontier::{ablate_early_abstention, build_grid, FrontierEngine};
use hcma::records::{generate_synthetic, ModelProfile, SyntheticSpec};
use hcma::transforms::TransformKind;

fn main() -> anyhow::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::three_tier(1500, 8))?;
    let members = ["small", "medium"]
        .iter()
        .zip([0.3, 0.8])
        .map(|(id, cost)| {
            let calibrator =
                fit_platt(&dataset.pairs(id)?, TransformKind::MaxSoftmax, 1e-4)?.with_model_id(*id);
            Ok(ModelProfile::new(*id, cost)?.with_calibrator(calibrator))
        })
        .collect::<hcma::Result<Vec<_>>>()?;
    let mode = ErrorMode::Empirical;
    let scored = ScoredChain::build(&members, &dataset, CostKind::Dollars)?;
    let grid = build_grid(&scored, 0.025)?;
    let engine = FrontierEngine::new(&scored, &grid, mode)?;
    let report = ablate_early_abstention(&engine, 0.8, u64::MAX)?;

    println!(
        "configurations: {} with early abstention, {} without",
        report.early_configs, report.constrained_configs
    );
    println!(
        "constrained frontier points not covered by the early frontier: {}",
        report.undominated_constrained
    );
    println!(
        "mean cost saving at equal error and abstention: {:.1}%",
        100.0 * report.mean_cost_improvement
    );
    println!("cost ceiling {}:", report.cost_ceiling);
    println!("{:>10} {:>12} {:>12}", "abstention", "early", "last only");
    let show = |e: Option<f64>| e.map_or("-".to_string(), |v| format!("{v:.4}"));
    for row in report
        .ceiling
        .iter()
        .filter(|r| (0.2..=0.5 + 1e-9).contains(&r.abstention))
    {
        println!(
            "{:>10.3} {:>12} {:>12}",
            row.abstention,
            show(row.early_error),
            show(row.constrained_error)
        );
    }
    Ok(())
}
