//! Sweeps every threshold configuration of a three-model chain, extracts the
//! error-abstention-cost frontier and compares cost buckets with each model alone.
//!
//! cargo run --release --example pareto_frontier -- [resolution]

use hcma::calibration::fit_platt;
use hcma::chain::{CostKind, ErrorMode, ScoredChain};
use hcma::frontier::{
    binned_curve, bucket_curves, build_grid, config_count, curve_dominance, single_model_baseline,
    FrontierEngine, FrontierOptions,
};
use hcma::records::{generate_synthetic, ModelProfile, SyntheticSpec};
use hcma::transforms::TransformKind;

fn main() -> anyhow::Result<()> {
    let resolution: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0.05);
    let dataset = generate_synthetic(&SyntheticSpec::three_tier(1500, 3))?;
    let members = dataset
        .model_ids()
        .iter()
        .zip([0.3, 0.8, 5.0])
        .map(|(id, cost)| {
            let calibrator =
                fit_platt(&dataset.pairs(id)?, TransformKind::MaxSoftmax, 1e-4)?.with_model_id(id);
            Ok(ModelProfile::new(id, cost)?.with_calibrator(calibrator))
        })
        .collect::<hcma::Result<Vec<_>>>()?;

    let mode = ErrorMode::Empirical;
    let scored = ScoredChain::build(&members, &dataset, CostKind::Dollars)?;
    let grid = build_grid(&scored, resolution)?;
    println!(
        "{} configurations at resolution {resolution}",
        config_count(&grid, true)
    );
    let options = FrontierOptions {
        error_mode: mode,
        ..FrontierOptions::default()
    };
    let frontier = FrontierEngine::new(&scored, &grid, mode)?
        .enumerate(&options)?
        .dedup();
    println!(
        "{} distinct frontier points, {} dominated, {:.0} ms",
        frontier.points.len(),
        frontier.dominated_count,
        frontier.wall_time_ms
    );

    let edges: Vec<f64> = (0..=31).map(|i| i as f64 * 0.2).collect();
    let buckets = bucket_curves(&frontier, &edges, 0.05)?;
    for (j, m) in members.iter().enumerate() {
        let single = ScoredChain::build(std::slice::from_ref(m), &dataset, CostKind::Dollars)?;
        let baseline = single_model_baseline(&single, &grid.levels[j], mode)?;
        let curve = binned_curve(baseline.iter().map(|p| (p.abstention, p.error)), 0.05);
        let (share, bucket) = buckets
            .iter()
            .map(|b| (curve_dominance(&b.curve, &curve), b))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one bucket");
        println!(
            "{:<7} best bucket [{:.1}, {:.1}) matches or beats it in {:.0}% of abstention bins",
            m.model_id,
            bucket.lower,
            bucket.upper,
            100.0 * share
        );
    }
    Ok(())
}
