//! Hierarchical chains with multi-level abstention.
//!
//! Each member `j < k` rejects when `p_hat < r_j`, delegates to the next
//! member when `r_j <= p_hat < a_j` and accepts when `p_hat >= a_j`. The last
//! member only rejects or accepts, with `a_k = r_k`. A rejection anywhere is
//! final for the whole chain.
//!
//! Performance is estimated by averaging over a [`Dataset`]: error,
//! abstention rate and expected effective cost, where a query that stops at
//! member `j` costs `C_j = c_1 + ... + c_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ExactSum;
use crate::records::{Dataset, ModelEntry, ModelProfile, QueryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Reject,
    Delegate,
    Accept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    /// Accumulate `1 - p_hat` of the accepting member.
    #[default]
    Plugin,
    /// Accumulate the observed incorrectness label of the accepting member.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    /// `cost_per_mtok * (tokens_in + tokens_out) / 1e6`, or the flat rate when
    /// a record carries no token counts.
    #[default]
    Dollars,
    /// Per-record `latency_ms`, falling back to the profile latency.
    Latency,
}

/// Cost of one visit to `profile` for the query described by `entry`.
pub fn hop_cost(profile: &ModelProfile, entry: &ModelEntry, kind: CostKind) -> Result<f64> {
    match kind {
        CostKind::Dollars => {
            let tokens = entry.tokens_in + entry.tokens_out;
            if tokens == 0 {
                Ok(profile.cost_per_mtok)
            } else {
                Ok(profile.cost_per_mtok * tokens as f64 / 1e6)
            }
        }
        CostKind::Latency => entry.latency_ms.or(profile.latency_ms).ok_or_else(|| {
            Error::Config(format!(
                "latency cost requested but `{}` has no latency_ms",
                profile.model_id
            ))
        }),
    }
}

/// Single-member policy.
pub fn policy_step(p_hat: f64, reject: f64, accept: f64, is_last: bool) -> Result<Decision> {
    if is_last {
        return Ok(if p_hat < reject {
            Decision::Reject
        } else {
            Decision::Accept
        });
    }
    if reject > accept {
        return Err(Error::Config(format!(
            "reject threshold {reject} exceeds accept threshold {accept}"
        )));
    }
    Ok(if p_hat < reject {
        Decision::Reject
    } else if p_hat < accept {
        Decision::Delegate
    } else {
        Decision::Accept
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    members: Vec<ModelProfile>,
    reject: Vec<f64>,
    accept: Vec<f64>,
}

impl ChainConfig {
    /// `accept` holds `a_1..a_{k-1}`; `a_k` is set to `r_k`.
    pub fn new(members: Vec<ModelProfile>, reject: Vec<f64>, accept: Vec<f64>) -> Result<Self> {
        let k = members.len();
        if k == 0 {
            return Err(Error::Config("a chain needs at least one member".into()));
        }
        if reject.len() != k {
            return Err(Error::Config(format!(
                "expected {k} reject thresholds, got {}",
                reject.len()
            )));
        }
        if accept.len() != k - 1 {
            return Err(Error::Config(format!(
                "expected {} accept thresholds, got {}",
                k - 1,
                accept.len()
            )));
        }
        let mut accept = accept;
        accept.push(reject[k - 1]);
        for (j, (&r, &a)) in reject.iter().zip(&accept).enumerate() {
            if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "thresholds of member {} outside [0, 1]",
                    j + 1
                )));
            }
            if r > a {
                return Err(Error::Config(format!(
                    "member {}: reject threshold {r} exceeds accept threshold {a}",
                    j + 1
                )));
            }
        }
        Ok(Self {
            members,
            reject,
            accept,
        })
    }

    /// Thresholds that never delegate or abstain: everything is answered by member 1.
    pub fn accept_all(members: Vec<ModelProfile>) -> Result<Self> {
        let k = members.len();
        Self::new(members, vec![0.0; k], vec![0.0; k.saturating_sub(1)])
    }

    pub fn members(&self) -> &[ModelProfile] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn reject_thresholds(&self) -> &[f64] {
        &self.reject
    }

    /// All `k` accept thresholds, the last equal to `r_k`.
    pub fn accept_thresholds(&self) -> &[f64] {
        &self.accept
    }

    pub fn with_thresholds(&self, reject: Vec<f64>, accept: Vec<f64>) -> Result<Self> {
        Self::new(self.members.clone(), reject, accept)
    }

    /// Calibrates `raw_prob` for member `j` and applies its policy.
    pub fn step(&self, j: usize, raw_prob: f64) -> Result<(f64, Decision)> {
        let p_hat = self.members[j].calibrator()?.predict(raw_prob)?;
        let decision = policy_step(p_hat, self.reject[j], self.accept[j], j + 1 == self.len())?;
        Ok((p_hat, decision))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformancePoint {
    pub error: f64,
    pub abstention: f64,
    pub expected_cost: f64,
}

impl PerformancePoint {
    /// Converts exact tallies over `n` records; every estimator goes through here.
    pub fn from_sums(n: usize, rejected: usize, error: ExactSum, cost: ExactSum) -> Self {
        Self {
            error: error.mean(n),
            abstention: if n == 0 {
                0.0
            } else {
                rejected as f64 / n as f64
            },
            expected_cost: cost.mean(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub terminal_index: usize,
    pub terminal_model_id: String,
    pub decision: Decision,
    /// Calibrated probability at every visited member, in chain order.
    pub p_hat: Vec<f64>,
    pub effective_cost: f64,
}

/// Walks one record through the chain.
pub fn trace_query(
    config: &ChainConfig,
    record: &QueryRecord,
    cost_kind: CostKind,
) -> Result<ChainTrace> {
    let mut p_hats = Vec::with_capacity(config.len());
    let mut cost = 0.0;
    for (j, member) in config.members.iter().enumerate() {
        let entry = record.entry(&member.model_id)?;
        let (p_hat, decision) = config.step(j, entry.raw_prob)?;
        p_hats.push(p_hat);
        cost += hop_cost(member, entry, cost_kind)?;
        if decision != Decision::Delegate {
            return Ok(ChainTrace {
                terminal_index: j,
                terminal_model_id: member.model_id.clone(),
                decision,
                p_hat: p_hats,
                effective_cost: cost,
            });
        }
    }
    unreachable!("the last member never delegates")
}

/// Calibrated probabilities and cumulative costs for every record and member,
/// stored row-major (`record * k + member`).
#[derive(Debug, Clone)]
pub struct ScoredChain {
    k: usize,
    n: usize,
    p_hat: Vec<f64>,
    wrong: Vec<bool>,
    cumulative_cost: Vec<f64>,
}

impl ScoredChain {
    pub fn build(members: &[ModelProfile], dataset: &Dataset, cost_kind: CostKind) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if members.is_empty() {
            return Err(Error::Config("a chain needs at least one member".into()));
        }
        let calibrators = members
            .iter()
            .map(|m| m.calibrator())
            .collect::<Result<Vec<_>>>()?;
        let k = members.len();
        let n = dataset.len();
        let mut p_hat = Vec::with_capacity(n * k);
        let mut wrong = Vec::with_capacity(n * k);
        let mut cumulative_cost = Vec::with_capacity(n * k);
        for record in dataset.records() {
            let mut acc = 0.0;
            for (member, cal) in members.iter().zip(&calibrators) {
                let entry = record.entry(&member.model_id)?;
                p_hat.push(cal.predict(entry.raw_prob)?);
                wrong.push(!entry.correct);
                acc += hop_cost(member, entry, cost_kind)?;
                cumulative_cost.push(acc);
            }
        }
        Ok(Self {
            k,
            n,
            p_hat,
            wrong,
            cumulative_cost,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn members(&self) -> usize {
        self.k
    }

    pub fn p_hat(&self, record: usize, member: usize) -> f64 {
        self.p_hat[record * self.k + member]
    }

    pub fn wrong(&self, record: usize, member: usize) -> bool {
        self.wrong[record * self.k + member]
    }

    pub fn cumulative_cost(&self, record: usize, member: usize) -> f64 {
        self.cumulative_cost[record * self.k + member]
    }

    /// Error contribution when `member` accepts `record`.
    pub fn error_term(&self, record: usize, member: usize, mode: ErrorMode) -> ExactSum {
        match mode {
            ErrorMode::Plugin => ExactSum::from_f64(1.0 - self.p_hat(record, member)),
            ErrorMode::Empirical => {
                ExactSum::from_f64(f64::from(u8::from(self.wrong(record, member))))
            }
        }
    }

    /// Member `p_hat` values in record order.
    pub fn column(&self, member: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.p_hat(i, member)).collect()
    }
}

/// Integer tallies behind a [`PerformancePoint`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tally {
    pub n: usize,
    pub rejected: usize,
    pub error: ExactSum,
    pub cost: ExactSum,
    /// Queries that stopped at each member.
    pub terminated: Vec<usize>,
}

impl Tally {
    pub fn point(&self) -> PerformancePoint {
        PerformancePoint::from_sums(self.n, self.rejected, self.error, self.cost)
    }
}

/// Per-record evaluation with explicit thresholds (`accept` has length `k`).
pub fn tally_scored(
    scored: &ScoredChain,
    reject: &[f64],
    accept: &[f64],
    mode: ErrorMode,
) -> Result<Tally> {
    let k = scored.members();
    if reject.len() != k || accept.len() != k {
        return Err(Error::Config(
            "threshold vectors must have one entry per member".into(),
        ));
    }
    let mut tally = Tally {
        n: scored.len(),
        terminated: vec![0; k],
        ..Tally::default()
    };
    for i in 0..scored.len() {
        for j in 0..k {
            let decision = policy_step(scored.p_hat(i, j), reject[j], accept[j], j + 1 == k)?;
            match decision {
                Decision::Delegate => continue,
                Decision::Reject => tally.rejected += 1,
                Decision::Accept => tally.error += scored.error_term(i, j, mode),
            }
            tally.cost += ExactSum::from_f64(scored.cumulative_cost(i, j));
            tally.terminated[j] += 1;
            break;
        }
    }
    Ok(tally)
}

/// Monte Carlo estimate of error, abstention and expected cost over `dataset`.
pub fn estimate_performance(
    config: &ChainConfig,
    dataset: &Dataset,
    error_mode: ErrorMode,
    cost_kind: CostKind,
) -> Result<PerformancePoint> {
    let scored = ScoredChain::build(config.members(), dataset, cost_kind)?;
    Ok(tally_scored(
        &scored,
        config.reject_thresholds(),
        config.accept_thresholds(),
        error_mode,
    )?
    .point())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelegationGain {
    /// Change in error versus rate-matched random assignment; negative means delegation helps.
    pub delta_e: f64,
    pub cov_small: f64,
    pub cov_large: f64,
}

/// Population covariances of the delegation indicator with each model's error
/// indicator, and their difference.
pub fn delegation_gain(
    delegate: &[bool],
    err_small: &[bool],
    err_large: &[bool],
) -> Result<DelegationGain> {
    let n = delegate.len();
    if err_small.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: err_small.len(),
        });
    }
    if err_large.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: err_large.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 observations".into(),
        ));
    }
    let count = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&i| f(i)).count() as f64;
    let nf = n as f64;
    let q = count(&|i| delegate[i]) / nf;
    let cov = |e: &[bool]| count(&|i| delegate[i] && e[i]) / nf - q * (count(&|i| e[i]) / nf);
    let cov_small = cov(err_small);
    let cov_large = cov(err_large);
    Ok(DelegationGain {
        delta_e: cov_large - cov_small,
        cov_small,
        cov_large,
    })
}
