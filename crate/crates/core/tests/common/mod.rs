#![allow(dead_code)]

use hcma::calibration::fit_platt;
use hcma::chain::{tally_scored, ErrorMode, PerformancePoint, ScoredChain};
use hcma::frontier::{skyline, ConfigIndex, QuantileGrid};
use hcma::records::{generate_synthetic, Dataset, ModelProfile, SyntheticSpec};
use hcma::transforms::TransformKind;

pub const COSTS: [f64; 3] = [0.3, 0.8, 5.0];

/// Three-tier synthetic data with MaxSoftmax calibrators fitted on all records.
pub fn three_tier(n: usize, seed: u64) -> (Dataset, Vec<ModelProfile>) {
    let dataset = generate_synthetic(&SyntheticSpec::three_tier(n, seed)).unwrap();
    let members = calibrated_members(&dataset, &COSTS);
    (dataset, members)
}

pub fn calibrated_members(dataset: &Dataset, costs: &[f64]) -> Vec<ModelProfile> {
    dataset
        .model_ids()
        .iter()
        .zip(costs)
        .map(|(id, &c)| {
            let cal = fit_platt(&dataset.pairs(id).unwrap(), TransformKind::MaxSoftmax, 1e-4)
                .unwrap()
                .with_model_id(id);
            ModelProfile::new(id, c).unwrap().with_calibrator(cal)
        })
        .collect()
}

/// Threshold values of a grid configuration, in the form `tally_scored` takes.
pub fn threshold_values(grid: &QuantileGrid, c: &ConfigIndex) -> (Vec<f64>, Vec<f64>) {
    let k = grid.levels.len();
    let reject: Vec<f64> = (0..k)
        .map(|j| grid.levels[j][c.reject[j] as usize])
        .collect();
    let accept: Vec<f64> = (0..k)
        .map(|j| {
            if j + 1 == k {
                reject[j]
            } else {
                grid.levels[j][c.accept[j] as usize]
            }
        })
        .collect();
    (reject, accept)
}

/// Every configuration on the grid with `r_j <= a_j`.
pub fn all_configs(grid: &QuantileGrid, early_abstention: bool) -> Vec<ConfigIndex> {
    let k = grid.levels.len();
    let mut out = vec![ConfigIndex::default()];
    for j in 0..k {
        let m = grid.levels[j].len();
        let last = j + 1 == k;
        let r_max = if early_abstention || last { m } else { 1 };
        let mut next = Vec::new();
        for c in &out {
            for r in 0..r_max {
                let a_range = if last { r..r + 1 } else { r..m };
                for a in a_range {
                    let mut c = *c;
                    c.reject[j] = r as u16;
                    c.accept[j] = a as u16;
                    next.push(c);
                }
            }
        }
        out = next;
    }
    out
}

/// Frontier by per-configuration re-simulation over every record.
pub fn naive_frontier(
    scored: &ScoredChain,
    grid: &QuantileGrid,
    mode: ErrorMode,
    early_abstention: bool,
) -> Vec<(ConfigIndex, PerformancePoint)> {
    let evaluated: Vec<(ConfigIndex, PerformancePoint)> = all_configs(grid, early_abstention)
        .into_iter()
        .map(|c| {
            let (r, a) = threshold_values(grid, &c);
            (c, tally_scored(scored, &r, &a, mode).unwrap().point())
        })
        .collect();
    let coords: Vec<[f64; 3]> = evaluated
        .iter()
        .map(|(_, p)| [p.error, p.abstention, p.expected_cost])
        .collect();
    skyline(&coords).into_iter().map(|i| evaluated[i]).collect()
}

/// Reference O(n^2) skyline.
pub fn brute_force_skyline(points: &[[f64; 3]]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().any(|q| {
                let p = &points[i];
                q.iter().zip(p).all(|(a, b)| a <= b) && q.iter().zip(p).any(|(a, b)| a < b)
            })
        })
        .collect()
}

pub fn weakly_dominates(a: &PerformancePoint, b: &PerformancePoint) -> bool {
    a.error <= b.error && a.abstention <= b.abstention && a.expected_cost <= b.expected_cost
}
