//! Generates a three-model synthetic dataset, saves it as JSONL and CSV, and
//! summarizes per-model accuracy and mean raw confidence.
//!
//! cargo run --example synthetic_dataset -- [n] [seed]

use hcma::records::{generate_synthetic, load_dataset, save_dataset, DataFormat, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1530);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let dataset = generate_synthetic(&SyntheticSpec::three_tier(n, seed))?;
    let dir = tempfile::tempdir()?;
    for name in ["synthetic.jsonl", "synthetic.csv"] {
        let path = dir.path().join(name);
        save_dataset(&dataset, &path, DataFormat::from_path(&path))?;
        let back = load_dataset(&path, DataFormat::from_path(&path))?;
        assert_eq!(back, dataset);
        println!(
            "{name}: {} bytes, round trip exact",
            std::fs::metadata(&path)?.len()
        );
    }

    println!("{:<8} {:>9} {:>14}", "model", "accuracy", "mean raw prob");
    for model in dataset.model_ids() {
        let pairs = dataset.pairs(model)?;
        let n = pairs.len() as f64;
        let accuracy = pairs.iter().filter(|p| p.1).count() as f64 / n;
        let confidence = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        println!("{model:<8} {accuracy:>9.3} {confidence:>14.3}");
    }
    Ok(())
}
