//! Measures how much better confidence-based delegation is than delegating the
//! same fraction of queries at random, and splits the gain into covariances.
//!
//! cargo run --example delegation_gain

use hcma::chain::delegation_gain;
use hcma::records::{generate_synthetic, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::three_tier(5000, 2))?;
    let small = dataset.pairs("small")?;
    let large = dataset.pairs("large")?;
    let err_small: Vec<bool> = small.iter().map(|p| !p.1).collect();
    let err_large: Vec<bool> = large.iter().map(|p| !p.1).collect();

    let mut sorted: Vec<f64> = small.iter().map(|p| p.0).collect();
    sorted.sort_by(f64::total_cmp);
    println!(
        "{:>9} {:>10} {:>11} {:>11}",
        "delegated", "gain", "cov(D,e_s)", "cov(D,e_l)"
    );
    for q in [0.1, 0.25, 0.5, 0.75] {
        let threshold = sorted[(q * sorted.len() as f64) as usize];
        let delegate: Vec<bool> = small.iter().map(|p| p.0 < threshold).collect();
        let g = delegation_gain(&delegate, &err_small, &err_large)?;
        println!(
            "{q:>9.2} {:>+10.4} {:>11.4} {:>11.4}",
            g.delta_e, g.cov_small, g.cov_large
        );
    }
    println!("a negative gain means delegation by confidence beats random delegation");
    Ok(())
}
