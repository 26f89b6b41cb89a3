//! Runs the repeated small-sample calibration protocol with each transform and
//! compares held-out calibration error.
//!
//! cargo run --example calibrate_transforms

use hcma::calibration::{repeated_protocol, ProtocolOptions};
use hcma::records::{generate_synthetic, SyntheticSpec};
use hcma::transforms::TransformKind;

fn main() -> anyhow::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::three_tier(1530, 0))?;
    let options = ProtocolOptions::default();
    println!(
        "{:<8} {:<6} {:>7} {:>7} {:>9} {:>9}",
        "model", "map", "ECE", "F1", "precision", "accuracy"
    );
    for model in dataset.model_ids() {
        let mut eces = Vec::new();
        for kind in [
            TransformKind::Identity,
            TransformKind::MaxSoftmax,
            TransformKind::PTrue,
        ] {
            let report = repeated_protocol(&dataset, model, kind, 50, 100, 0, &options)?;
            println!(
                "{model:<8} {:<6} {:>7.4} {:>7.4} {:>9.4} {:>9.4}",
                kind.cli_name(),
                report.ece,
                report.f1,
                report.precision,
                report.accuracy
            );
            eces.push(report.ece);
        }
        println!(
            "{model:<8} msp vs raw ECE change: {:+.1}%",
            100.0 * (eces[1] / eces[0] - 1.0)
        );
    }
    Ok(())
}
