//! Grid search over chain thresholds and Pareto-frontier extraction.
//!
//! Threshold candidates for each member are empirical quantiles of its
//! calibrated probabilities. The top quantile is replaced by a sentinel just
//! above the largest observed value, so "reject everything" and "delegate
//! everything" are expressible, while the 0-quantile (the minimum) already
//! acts as "never reject".
//!
//! Enumeration never re-reads the dataset per configuration. Every record is
//! binned once per member (bin `b` = number of candidates `<= p_hat`), and for
//! each depth `j` a `(j+1)`-dimensional histogram of record counts, error
//! terms and effective costs is turned into inclusive prefix sums. Any
//! configuration then costs a handful of box queries regardless of `n`. All
//! sums are exact ([`ExactSum`]), so results match per-record simulation bit
//! for bit.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::{Add, Sub};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{tally_scored, ErrorMode, PerformancePoint, ScoredChain};
use crate::error::{Error, Result};
use crate::math::{quantile_sorted, ExactSum};

pub const DEFAULT_RESOLUTION: f64 = 0.025;
pub const MAX_CHAIN_LEN: usize = 4;
/// Refuse sweeps above this many configurations unless overridden.
pub const DEFAULT_MAX_CONFIGS: u64 = 2_000_000_000;

/// Per-member threshold candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    pub resolution: f64,
    /// Ascending, deduplicated; the last entry is the above-max sentinel.
    pub levels: Vec<Vec<f64>>,
}

fn steps_for(resolution: f64) -> Result<usize> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "resolution must be in (0, 1], got {resolution}"
        )));
    }
    let steps = (1.0 / resolution).round();
    if (steps * resolution - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "resolution {resolution} does not divide 1 evenly"
        )));
    }
    Ok(steps as usize)
}

/// Threshold candidates for one vector of calibrated probabilities.
pub fn grid_levels(p_hat: &[f64], resolution: f64) -> Result<Vec<f64>> {
    if p_hat.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let steps = steps_for(resolution)?;
    let mut sorted = p_hat.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut levels: Vec<f64> = (0..steps)
        .map(|i| quantile_sorted(&sorted, i as f64 / steps as f64))
        .collect();
    levels.push(sorted[sorted.len() - 1].next_up());
    levels.dedup();
    Ok(levels)
}

pub fn build_grid(scored: &ScoredChain, resolution: f64) -> Result<QuantileGrid> {
    if scored.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let levels = (0..scored.members())
        .map(|j| grid_levels(&scored.column(j), resolution))
        .collect::<Result<_>>()?;
    Ok(QuantileGrid { resolution, levels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierOptions {
    /// When false, only the last member may reject (`r_j` pinned to the minimum for `j < k`).
    pub early_abstention: bool,
    pub error_mode: ErrorMode,
    pub max_configs: u64,
}

impl Default for FrontierOptions {
    fn default() -> Self {
        Self {
            early_abstention: true,
            error_mode: ErrorMode::Plugin,
            max_configs: DEFAULT_MAX_CONFIGS,
        }
    }
}

/// Number of configurations the sweep visits, with `r_j <= a_j` enforced.
pub fn config_count(grid: &QuantileGrid, early_abstention: bool) -> u128 {
    let k = grid.levels.len();
    grid.levels
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let m = l.len() as u128;
            if j + 1 == k {
                m
            } else if early_abstention {
                m * (m + 1) / 2
            } else {
                m
            }
        })
        .product()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Acc {
    count: i128,
    error: ExactSum,
    cost: ExactSum,
}

impl Add for Acc {
    type Output = Acc;
    fn add(self, o: Acc) -> Acc {
        Acc {
            count: self.count + o.count,
            error: self.error + o.error,
            cost: self.cost + o.cost,
        }
    }
}

impl Sub for Acc {
    type Output = Acc;
    fn sub(self, o: Acc) -> Acc {
        Acc {
            count: self.count - o.count,
            error: self.error - o.error,
            cost: self.cost - o.cost,
        }
    }
}

/// Inclusive prefix sums over a dense `(depth+1)`-dimensional histogram with a
/// zero border: position `x + 1` along a dimension covers bins `0..=x`.
#[derive(Debug, Clone)]
struct PrefixTable {
    extents: Vec<usize>,
    strides: Vec<usize>,
    cells: Vec<Acc>,
}

impl PrefixTable {
    fn build(
        scored: &ScoredChain,
        bins: &[Vec<u16>],
        extents: &[usize],
        depth: usize,
        mode: ErrorMode,
    ) -> Self {
        let dims = depth + 1;
        let extents = extents[..dims].to_vec();
        let mut strides = vec![1usize; dims];
        for d in (0..dims - 1).rev() {
            strides[d] = strides[d + 1] * extents[d + 1];
        }
        let total = strides[0] * extents[0];
        let mut cells = vec![Acc::default(); total];
        // `i` indexes every member's bin column.
        #[allow(clippy::needless_range_loop)]
        for i in 0..scored.len() {
            let idx: usize = (0..dims)
                .map(|d| (bins[d][i] as usize + 1) * strides[d])
                .sum();
            let cell = &mut cells[idx];
            cell.count += 1;
            cell.error += scored.error_term(i, depth, mode);
            cell.cost += ExactSum::from_f64(scored.cumulative_cost(i, depth));
        }
        for d in 0..dims {
            let stride = strides[d];
            for idx in 0..total {
                if !(idx / stride).is_multiple_of(extents[d]) {
                    cells[idx] = cells[idx] + cells[idx - stride];
                }
            }
        }
        Self {
            extents,
            strides,
            cells,
        }
    }

    /// Sums over the box given by `(lo, hi]` prefix positions on the leading
    /// dimensions, returned as a prefix line along the last dimension.
    fn line(&self, bounds: &[(usize, usize)]) -> Vec<Acc> {
        let lead = bounds.len();
        debug_assert_eq!(lead + 1, self.extents.len());
        let last = self.extents[lead];
        let mut out = vec![Acc::default(); last];
        for corner in 0..(1usize << lead) {
            let mut base = 0;
            let mut negative = false;
            for (d, &(lo, hi)) in bounds.iter().enumerate() {
                if corner & (1 << d) != 0 {
                    base += lo * self.strides[d];
                    negative = !negative;
                } else {
                    base += hi * self.strides[d];
                }
            }
            let row = &self.cells[base..base + last];
            for (o, &c) in out.iter_mut().zip(row) {
                *o = if negative { *o - c } else { *o + c };
            }
        }
        out
    }
}

/// Threshold indices into the grid: `reject[j]`, `accept[j]` (`accept[k-1] == reject[k-1]`).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct ConfigIndex {
    pub reject: [u16; MAX_CHAIN_LEN],
    pub accept: [u16; MAX_CHAIN_LEN],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    coords: [f64; 3],
    config: ConfigIndex,
}

/// Prefix tables for one scored chain on one grid, ready to evaluate any
/// configuration in time independent of the number of records.
#[derive(Debug, Clone)]
pub struct FrontierEngine {
    grid: QuantileGrid,
    n: usize,
    error_mode: ErrorMode,
    tables: Vec<PrefixTable>,
}

impl FrontierEngine {
    pub fn new(scored: &ScoredChain, grid: &QuantileGrid, error_mode: ErrorMode) -> Result<Self> {
        let k = scored.members();
        if k > MAX_CHAIN_LEN {
            return Err(Error::GridTooLarge(format!(
                "chains longer than {MAX_CHAIN_LEN} members are not supported (got {k}); \
                 split the chain or evaluate fixed configurations with `simulate`"
            )));
        }
        if grid.levels.len() != k {
            return Err(Error::InvalidArgument(format!(
                "grid has {} members, chain has {k}",
                grid.levels.len()
            )));
        }
        if scored.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if grid
            .levels
            .iter()
            .any(|l| l.is_empty() || l.len() > u16::MAX as usize)
        {
            return Err(Error::InvalidArgument(
                "grid levels must hold 1..=65535 values".into(),
            ));
        }
        let bins: Vec<Vec<u16>> = (0..k)
            .map(|j| {
                let levels = &grid.levels[j];
                (0..scored.len())
                    .map(|i| levels.partition_point(|&t| t <= scored.p_hat(i, j)) as u16)
                    .collect()
            })
            .collect();
        // Bins run 0..=m; with the zero border that is m + 2 prefix positions.
        let extents: Vec<usize> = grid.levels.iter().map(|l| l.len() + 2).collect();
        let tables = (0..k)
            .map(|depth| PrefixTable::build(scored, &bins, &extents, depth, error_mode))
            .collect();
        Ok(Self {
            grid: grid.clone(),
            n: scored.len(),
            error_mode,
            tables,
        })
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn members(&self) -> usize {
        self.tables.len()
    }

    fn point(&self, rejected: i128, error: ExactSum, cost: ExactSum) -> PerformancePoint {
        PerformancePoint::from_sums(self.n, rejected as usize, error, cost)
    }

    /// Evaluates a single configuration through the prefix tables.
    pub fn evaluate(&self, config: &ConfigIndex) -> Result<PerformancePoint> {
        let k = self.members();
        let mut bounds = Vec::with_capacity(k);
        let mut total = Acc::default();
        let mut rejected = 0i128;
        for j in 0..k {
            let m = self.grid.levels[j].len();
            let r = config.reject[j] as usize;
            let a = if j + 1 == k {
                r
            } else {
                config.accept[j] as usize
            };
            if r >= m || a >= m || r > a {
                return Err(Error::Config(format!(
                    "threshold indices out of range for member {}",
                    j + 1
                )));
            }
            let line = self.tables[j].line(&bounds);
            let top = line.len() - 1;
            let reject = line[r + 1] - line[0];
            let accept = line[top] - line[a + 1];
            rejected += reject.count;
            total.error += accept.error;
            total.cost += reject.cost + accept.cost;
            bounds.push((r + 1, a + 1));
        }
        Ok(self.point(rejected, total.error, total.cost))
    }

    fn descend(
        &self,
        depth: usize,
        bounds: &mut Vec<(usize, usize)>,
        partial: (i128, ExactSum, ExactSum),
        config: &mut ConfigIndex,
        early_abstention: bool,
        out: &mut Vec<Candidate>,
    ) {
        let k = self.members();
        let m = self.grid.levels[depth].len();
        let line = self.tables[depth].line(bounds);
        let top = line.len() - 1;
        let last = depth + 1 == k;
        let r_max = if last || early_abstention { m } else { 1 };
        for r in 0..r_max {
            let reject = line[r + 1] - line[0];
            config.reject[depth] = r as u16;
            if last {
                let accept = line[top] - line[r + 1];
                config.accept[depth] = r as u16;
                let point = self.point(
                    partial.0 + reject.count,
                    partial.1 + accept.error,
                    partial.2 + reject.cost + accept.cost,
                );
                out.push(Candidate {
                    coords: [point.error, point.abstention, point.expected_cost],
                    config: *config,
                });
                continue;
            }
            for a in r..m {
                let accept = line[top] - line[a + 1];
                config.accept[depth] = a as u16;
                bounds.push((r + 1, a + 1));
                self.descend(
                    depth + 1,
                    bounds,
                    (
                        partial.0 + reject.count,
                        partial.1 + accept.error,
                        partial.2 + reject.cost + accept.cost,
                    ),
                    config,
                    early_abstention,
                    out,
                );
                bounds.pop();
            }
        }
    }

    /// Work units for the parallel sweep: the first member's `(r, a)` choices.
    fn units(&self, early_abstention: bool) -> Vec<(usize, usize)> {
        let m = self.grid.levels[0].len();
        if self.members() == 1 {
            return (0..m).map(|r| (r, r)).collect();
        }
        let r_max = if early_abstention { m } else { 1 };
        (0..r_max)
            .flat_map(|r| (r..m).map(move |a| (r, a)))
            .collect()
    }

    /// Sweeps every configuration and keeps the Pareto-minimal ones.
    pub fn enumerate(&self, options: &FrontierOptions) -> Result<FrontierResult> {
        if options.error_mode != self.error_mode {
            return Err(Error::InvalidArgument(
                "engine was built for a different error mode".into(),
            ));
        }
        let count = config_count(&self.grid, options.early_abstention);
        if count > options.max_configs as u128 {
            return Err(Error::GridTooLarge(format!(
                "{count} configurations exceed the limit of {}; use a coarser resolution \
                 (e.g. {} or larger) or raise the limit",
                options.max_configs,
                suggest_resolution(
                    self.members(),
                    options.max_configs,
                    options.early_abstention
                )
            )));
        }
        let started = Instant::now();
        let k = self.members();
        let locals: Vec<Vec<Candidate>> = self
            .units(options.early_abstention)
            .into_par_iter()
            .map(|(r, a)| {
                let line = self.tables[0].line(&[]);
                let top = line.len() - 1;
                let reject = line[r + 1] - line[0];
                let accept = line[top] - line[a + 1];
                let mut config = ConfigIndex::default();
                config.reject[0] = r as u16;
                config.accept[0] = a as u16;
                let partial = (reject.count, accept.error, reject.cost + accept.cost);
                let mut out = Vec::new();
                if k == 1 {
                    let p = self.point(partial.0, partial.1, partial.2);
                    out.push(Candidate {
                        coords: [p.error, p.abstention, p.expected_cost],
                        config,
                    });
                } else {
                    let mut bounds = vec![(r + 1, a + 1)];
                    self.descend(
                        1,
                        &mut bounds,
                        partial,
                        &mut config,
                        options.early_abstention,
                        &mut out,
                    );
                }
                let keep = skyline_of(&out);
                keep.into_iter().map(|i| out[i]).collect()
            })
            .collect();
        let merged: Vec<Candidate> = locals.into_iter().flatten().collect();
        let mut keep: Vec<Candidate> = skyline_of(&merged).into_iter().map(|i| merged[i]).collect();
        keep.sort_by(|x, y| {
            x.coords[2]
                .total_cmp(&y.coords[2])
                .then(x.coords[0].total_cmp(&y.coords[0]))
                .then(x.coords[1].total_cmp(&y.coords[1]))
                .then(x.config.cmp(&y.config))
        });
        let points = keep
            .into_iter()
            .map(|c| FrontierPoint {
                point: PerformancePoint {
                    error: c.coords[0],
                    abstention: c.coords[1],
                    expected_cost: c.coords[2],
                },
                index: c.config,
            })
            .collect::<Vec<_>>();
        let configs_enumerated = count as u64;
        Ok(FrontierResult {
            dominated_count: configs_enumerated - points.len() as u64,
            configs_enumerated,
            points,
            early_abstention: options.early_abstention,
            error_mode: options.error_mode,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
            grid: self.grid.clone(),
        })
    }
}

fn suggest_resolution(k: usize, max_configs: u64, early: bool) -> f64 {
    [0.025f64, 0.05, 0.1, 0.125, 0.2, 0.25, 0.5, 1.0]
        .into_iter()
        .find(|&res| {
            let m = (1.0 / res).round() as u128 + 1;
            let pair = if early { m * (m + 1) / 2 } else { m };
            pair.pow(k as u32 - 1) * m <= max_configs as u128
        })
        .unwrap_or(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub point: PerformancePoint,
    pub index: ConfigIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierResult {
    /// Sorted by cost, then error, then abstention.
    pub points: Vec<FrontierPoint>,
    pub configs_enumerated: u64,
    pub dominated_count: u64,
    pub early_abstention: bool,
    pub error_mode: ErrorMode,
    pub wall_time_ms: f64,
    /// Grid the indices refer to.
    pub grid: QuantileGrid,
}

impl FrontierResult {
    pub fn members(&self) -> usize {
        self.grid.levels.len()
    }

    /// Keeps one configuration (the smallest index) per distinct performance point.
    pub fn dedup(&self) -> FrontierResult {
        let mut points = self.points.clone();
        points.dedup_by(|b, a| b.point == a.point);
        FrontierResult {
            points,
            ..self.clone()
        }
    }

    /// Threshold values `(r_1..r_k, a_1..a_{k-1})` of a frontier point.
    pub fn thresholds(&self, p: &FrontierPoint) -> (Vec<f64>, Vec<f64>) {
        let k = self.members();
        let levels = &self.grid.levels;
        (
            (0..k)
                .map(|j| levels[j][p.index.reject[j] as usize])
                .collect(),
            (0..k - 1)
                .map(|j| levels[j][p.index.accept[j] as usize])
                .collect(),
        )
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [p.point.error, p.point.abstention, p.point.expected_cost])
            .collect()
    }
}

/// Builds the grid and engine, then sweeps.
pub fn enumerate_frontier(
    scored: &ScoredChain,
    grid: &QuantileGrid,
    options: &FrontierOptions,
) -> Result<FrontierResult> {
    FrontierEngine::new(scored, grid, options.error_mode)?.enumerate(options)
}

/// Maps a float to a `u64` whose unsigned order matches numeric order.
fn order_key(x: f64) -> u64 {
    let bits = (x + 0.0).to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn skyline_of(candidates: &[Candidate]) -> Vec<usize> {
    let coords: Vec<[f64; 3]> = candidates.iter().map(|c| c.coords).collect();
    skyline(&coords)
}

/// Indices of points not dominated by any other point, all coordinates
/// minimized. Exact duplicates do not dominate each other and are all kept.
/// Returned indices are ascending.
///
/// Sort lexicographically, then sweep while keeping a 2-D staircase of the
/// second and third coordinates of everything already accepted: any dominator
/// of a point sorts before it, so a point survives iff no staircase entry is
/// `<=` in both remaining coordinates. O(n log n).
pub fn skyline(points: &[[f64; 3]]) -> Vec<usize> {
    let keys: Vec<[u64; 3]> = points
        .iter()
        .map(|p| [order_key(p[0]), order_key(p[1]), order_key(p[2])])
        .collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_unstable_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));

    // second coordinate -> smallest third coordinate; third strictly decreasing.
    let mut stairs: BTreeMap<u64, u64> = BTreeMap::new();
    let mut keep = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let key = keys[order[i]];
        let mut j = i + 1;
        while j < order.len() && keys[order[j]] == key {
            j += 1;
        }
        let (y, z) = (key[1], key[2]);
        let dominated = stairs
            .range(..=y)
            .next_back()
            .is_some_and(|(_, &sz)| sz <= z);
        if !dominated {
            keep.extend_from_slice(&order[i..j]);
            let stale: Vec<u64> = stairs
                .range(y..)
                .take_while(|(_, &sz)| sz >= z)
                .map(|(&sy, _)| sy)
                .collect();
            for s in stale {
                stairs.remove(&s);
            }
            stairs.insert(y, z);
        }
        i = j;
    }
    keep.sort_unstable();
    keep
}

/// Abstention-binned error curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bin: usize,
    /// Mean abstention of the points in the bin.
    pub abstention: f64,
    pub mean_error: f64,
    pub count: usize,
}

/// Averages error over points grouped into abstention bins of width `bin_width`.
pub fn binned_curve(
    points: impl IntoIterator<Item = (f64, f64)>,
    bin_width: f64,
) -> Vec<CurvePoint> {
    let mut bins: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for (abstention, error) in points {
        let b = (abstention / bin_width + 1e-9).floor() as usize;
        let e = bins.entry(b).or_insert((0.0, 0.0, 0));
        e.0 += abstention;
        e.1 += error;
        e.2 += 1;
    }
    bins.into_iter()
        .map(|(bin, (a, e, c))| CurvePoint {
            bin,
            abstention: a / c as f64,
            mean_error: e / c as f64,
            count: c,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBucket {
    pub lower: f64,
    pub upper: f64,
    /// Indices into the frontier's points.
    pub members: Vec<usize>,
    pub curve: Vec<CurvePoint>,
}

/// Groups frontier points into `[edges[i], edges[i+1])` cost buckets and
/// builds each bucket's error-abstention curve.
pub fn bucket_curves(
    frontier: &FrontierResult,
    bucket_edges: &[f64],
    abstention_bin: f64,
) -> Result<Vec<CostBucket>> {
    if bucket_edges
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::InvalidArgument(
            "bucket edges must be strictly increasing".into(),
        ));
    }
    if abstention_bin.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidArgument(
            "abstention bin width must be positive".into(),
        ));
    }
    Ok(bucket_edges
        .windows(2)
        .map(|w| {
            let members: Vec<usize> = frontier
                .points
                .iter()
                .enumerate()
                .filter(|(_, p)| p.point.expected_cost >= w[0] && p.point.expected_cost < w[1])
                .map(|(i, _)| i)
                .collect();
            let curve = binned_curve(
                members.iter().map(|&i| {
                    let p = &frontier.points[i].point;
                    (p.abstention, p.error)
                }),
                abstention_bin,
            );
            CostBucket {
                lower: w[0],
                upper: w[1],
                members,
                curve,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub threshold: f64,
    pub abstention: f64,
    pub error: f64,
    pub cost: f64,
}

/// Selective prediction with one model alone: sweep `r` over `levels`, accept iff `p_hat >= r`.
///
/// `scored` must hold exactly that one member so costs are its own.
pub fn single_model_baseline(
    scored: &ScoredChain,
    levels: &[f64],
    mode: ErrorMode,
) -> Result<Vec<BaselinePoint>> {
    if scored.members() != 1 {
        return Err(Error::InvalidArgument(
            "baseline expects a single-member scoring".into(),
        ));
    }
    levels
        .iter()
        .map(|&r| {
            let p = tally_scored(scored, &[r], &[r], mode)?.point();
            Ok(BaselinePoint {
                threshold: r,
                abstention: p.abstention,
                error: p.error,
                cost: p.expected_cost,
            })
        })
        .collect()
}

/// Fraction of the baseline's abstention bins in which `candidate` has a point
/// with mean error no higher than the baseline's.
pub fn curve_dominance(candidate: &[CurvePoint], baseline: &[CurvePoint]) -> f64 {
    if baseline.is_empty() {
        return 0.0;
    }
    let by_bin: BTreeMap<usize, f64> = candidate.iter().map(|c| (c.bin, c.mean_error)).collect();
    let wins = baseline
        .iter()
        .filter(|b| by_bin.get(&b.bin).is_some_and(|&e| e <= b.mean_error))
        .count();
    wins as f64 / baseline.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTarget {
    pub error: f64,
    pub abstention: f64,
    pub constrained_cost: f64,
    pub early_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingRow {
    pub abstention: f64,
    /// Lowest error with abstention at most the target and cost within the ceiling.
    pub early_error: Option<f64>,
    pub constrained_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cost_ceiling: f64,
    pub early_configs: u64,
    pub constrained_configs: u64,
    pub early_frontier_size: usize,
    pub constrained_frontier_size: usize,
    /// Constrained frontier points not weakly dominated by the early-abstention frontier (expected 0).
    pub undominated_constrained: usize,
    /// One target per constrained frontier point.
    pub cost_targets: Vec<CostTarget>,
    /// Mean of `1 - early_cost / constrained_cost` over targets with positive cost.
    pub mean_cost_improvement: f64,
    pub ceiling: Vec<CeilingRow>,
    /// False when neither variant has any point within the ceiling.
    pub feasible: bool,
    /// Ceiling rows where early abstention is strictly better.
    pub strict_improvements: usize,
}

fn weakly_dominates(a: &PerformancePoint, b: &PerformancePoint) -> bool {
    a.error <= b.error && a.abstention <= b.abstention && a.expected_cost <= b.expected_cost
}

fn min_cost_reaching(front: &FrontierResult, error: f64, abstention: f64) -> Option<f64> {
    front
        .points
        .iter()
        .filter(|p| p.point.error <= error && p.point.abstention <= abstention)
        .map(|p| p.point.expected_cost)
        .min_by(f64::total_cmp)
}

fn min_error_within(front: &FrontierResult, abstention: f64, ceiling: f64) -> Option<f64> {
    front
        .points
        .iter()
        .filter(|p| p.point.abstention <= abstention && p.point.expected_cost <= ceiling)
        .map(|p| p.point.error)
        .min_by(f64::total_cmp)
}

/// Compares frontiers with and without early abstention on the same engine.
pub fn ablate_early_abstention(
    engine: &FrontierEngine,
    cost_ceiling: f64,
    max_configs: u64,
) -> Result<AblationReport> {
    if engine.members() < 2 {
        return Err(Error::InvalidArgument(
            "the ablation needs a chain of at least 2 members".into(),
        ));
    }
    let base = FrontierOptions {
        early_abstention: true,
        error_mode: engine.error_mode,
        max_configs,
    };
    let early = engine.enumerate(&base)?;
    let constrained = engine.enumerate(&FrontierOptions {
        early_abstention: false,
        ..base
    })?;
    let undominated_constrained = constrained
        .points
        .iter()
        .filter(|c| {
            !early
                .points
                .iter()
                .any(|e| weakly_dominates(&e.point, &c.point))
        })
        .count();
    let cost_targets: Vec<CostTarget> = constrained
        .points
        .iter()
        .map(|c| {
            let (e, a) = (c.point.error, c.point.abstention);
            CostTarget {
                error: e,
                abstention: a,
                constrained_cost: min_cost_reaching(&constrained, e, a)
                    .unwrap_or(c.point.expected_cost),
                early_cost: min_cost_reaching(&early, e, a).unwrap_or(f64::INFINITY),
            }
        })
        .collect();
    let ratios: Vec<f64> = cost_targets
        .iter()
        .filter(|t| t.constrained_cost > 0.0)
        .map(|t| 1.0 - t.early_cost / t.constrained_cost)
        .collect();
    let mean_cost_improvement = if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };
    let steps = steps_for(engine.grid.resolution)?;
    let ceiling: Vec<CeilingRow> = (0..=steps)
        .map(|i| {
            let abstention = i as f64 / steps as f64;
            CeilingRow {
                abstention,
                early_error: min_error_within(&early, abstention, cost_ceiling),
                constrained_error: min_error_within(&constrained, abstention, cost_ceiling),
            }
        })
        .collect();
    let feasible = ceiling
        .iter()
        .any(|r| r.early_error.is_some() || r.constrained_error.is_some());
    let strict_improvements = ceiling
        .iter()
        .filter(|r| match (r.early_error, r.constrained_error) {
            (Some(e), Some(c)) => e < c,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    Ok(AblationReport {
        cost_ceiling,
        early_configs: early.configs_enumerated,
        constrained_configs: constrained.configs_enumerated,
        early_frontier_size: early.points.len(),
        constrained_frontier_size: constrained.points.len(),
        undominated_constrained,
        cost_targets,
        mean_cost_improvement,
        ceiling,
        feasible,
        strict_improvements,
    })
}

/// Writes `r_1..r_k, a_1..a_{k-1}, error, abstention, cost`.
///
/// Numbers use the shortest decimal form that parses back to the identical
/// `f64`, so the file is an exact record of the computed values.
pub fn write_frontier_csv<W: Write>(frontier: &FrontierResult, mut out: W) -> Result<()> {
    let k = frontier.members();
    let mut header: Vec<String> = (1..=k).map(|j| format!("r_{j}")).collect();
    header.extend((1..k).map(|j| format!("a_{j}")));
    header.extend(["error", "abstention", "cost"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for p in &frontier.points {
        let (reject, accept) = frontier.thresholds(p);
        let mut row: Vec<String> = reject.iter().map(|v| v.to_string()).collect();
        row.extend(accept.iter().map(|v| v.to_string()));
        row.push(p.point.error.to_string());
        row.push(p.point.abstention.to_string());
        row.push(p.point.expected_cost.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes `bucket_lower, bucket_upper, abstention, mean_error`.
pub fn write_curves_csv<W: Write>(buckets: &[CostBucket], mut out: W) -> Result<()> {
    writeln!(out, "bucket_lower,bucket_upper,abstention,mean_error")?;
    for b in buckets {
        for c in &b.curve {
            writeln!(
                out,
                "{},{},{},{}",
                b.lower, b.upper, c.abstention, c.mean_error
            )?;
        }
    }
    Ok(())
}

/// Writes `model_id, threshold, abstention, error, cost`.
pub fn write_baselines_csv<W: Write>(
    baselines: &[(String, Vec<BaselinePoint>)],
    mut out: W,
) -> Result<()> {
    writeln!(out, "model_id,threshold,abstention,error,cost")?;
    for (id, points) in baselines {
        for p in points {
            writeln!(
                out,
                "{id},{},{},{},{}",
                p.threshold, p.abstention, p.error, p.cost
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skyline_examples() {
        assert_eq!(skyline(&[[1.0, 1.0, 1.0]]), vec![0]);
        assert_eq!(
            skyline(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [2.0, 3.0, 4.0]]),
            vec![0, 1]
        );
        assert!(skyline(&[]).is_empty());
        // Equal in two coordinates, better in one.
        assert_eq!(skyline(&[[1.0, 1.0, 2.0], [1.0, 1.0, 1.0]]), vec![1]);
        // Incomparable pair.
        assert_eq!(skyline(&[[0.0, 1.0, 0.5], [1.0, 0.0, 0.5]]), vec![0, 1]);
        assert_eq!(skyline(&[[-0.0, 1.0, 1.0], [0.0, 1.0, 1.0]]), vec![0, 1]);
    }

    #[test]
    fn grid_sizes() {
        let p: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert_eq!(grid_levels(&p, 0.5).unwrap().len(), 3);
        assert_eq!(grid_levels(&p, 0.025).unwrap().len(), 41);
        let levels = grid_levels(&p, 0.5).unwrap();
        assert_eq!(levels[0], 0.0005);
        assert!(levels[2] > 0.9995);
        assert!(grid_levels(&p, 0.3).is_err());
        assert!(grid_levels(&[], 0.5).is_err());
        // Constant input: the value itself plus the sentinel above it.
        assert_eq!(
            grid_levels(&[0.7; 20], 0.025).unwrap(),
            vec![0.7, 0.7f64.next_up()]
        );
    }

    #[test]
    fn count_matches_documented_sweep_size() {
        let grid = QuantileGrid {
            resolution: 0.025,
            levels: vec![vec![0.0; 41]; 3],
        };
        assert_eq!(config_count(&grid, true), 861 * 861 * 41);
        assert_eq!(config_count(&grid, true), 30_394_161);
        assert_eq!(config_count(&grid, false), 41 * 41 * 41);
    }

    #[test]
    fn bucket_edges_validation() {
        let empty = FrontierResult {
            points: vec![],
            configs_enumerated: 0,
            dominated_count: 0,
            early_abstention: true,
            error_mode: ErrorMode::Plugin,
            wall_time_ms: 0.0,
            grid: QuantileGrid {
                resolution: 0.5,
                levels: vec![vec![0.0, 0.5, 1.0]],
            },
        };
        assert!(bucket_curves(&empty, &[1.0, 0.5], 0.025).is_err());
        let b = bucket_curves(&empty, &[0.6, 0.9], 0.025).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b[0].members.is_empty());
    }

    #[test]
    fn binned_curve_averages() {
        let c = binned_curve([(0.0, 0.3), (0.01, 0.2), (0.5, 0.1)], 0.025);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].count, 2);
        assert!((c[0].mean_error - 0.25).abs() < 1e-15);
        assert_eq!(c[1].bin, 20);
    }
}
