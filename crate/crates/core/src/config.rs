//! Chain configuration documents (TOML or JSON, chosen by file extension).
//!
//! ```toml
//! cost_kind = "dollars"
//!
//! [[members]]
//! model_id = "small"
//! cost_per_mtok = 0.3
//! calibrator = "calibrator_small.json"   # relative to this file, or an inline table
//! reject = 0.2
//! accept = 0.7
//!
//! [[members]]
//! model_id = "large"
//! cost_per_mtok = 5.0
//! calibrator = "calibrator_large.json"
//! reject = 0.4                            # last member: accept is ignored
//! ```
//!
//! Router deployments add `[[endpoints]]` tables, see [`crate::router::EndpointSpec`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::Calibrator;
use crate::chain::{ChainConfig, CostKind};
use crate::error::{Error, Result};
use crate::records::ModelProfile;
use crate::router::{EndpointSpec, FailurePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CalibratorRef {
    Path(PathBuf),
    Inline(Calibrator),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub model_id: String,
    pub cost_per_mtok: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrator: Option<CalibratorRef>,
    #[serde(default)]
    pub reject: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    #[serde(default)]
    pub cost_kind: CostKind,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    pub members: Vec<MemberSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub endpoints: Vec<EndpointSpec>,
    /// Directory that relative calibrator paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

impl ChainFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut file: ChainFile = if is_json(path) {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        file.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(file)
    }

    pub fn parse_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Serializes with calibrators inlined.
    pub fn from_chain(config: &ChainConfig, cost_kind: CostKind) -> Self {
        let k = config.len();
        let members = config
            .members()
            .iter()
            .enumerate()
            .map(|(j, m)| MemberSpec {
                model_id: m.model_id.clone(),
                cost_per_mtok: m.cost_per_mtok,
                latency_ms: m.latency_ms,
                calibrator: m.calibrator.clone().map(CalibratorRef::Inline),
                reject: config.reject_thresholds()[j],
                accept: (j + 1 < k).then(|| config.accept_thresholds()[j]),
            })
            .collect();
        Self {
            cost_kind,
            failure_policy: FailurePolicy::default(),
            members,
            endpoints: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = if is_json(path) {
            serde_json::to_string_pretty(self)? + "\n"
        } else {
            toml::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Member profiles with their calibrators loaded.
    pub fn profiles(&self) -> Result<Vec<ModelProfile>> {
        self.members
            .iter()
            .map(|m| {
                let mut profile = ModelProfile::new(&m.model_id, m.cost_per_mtok)?;
                profile.latency_ms = m.latency_ms;
                profile.calibrator = match &m.calibrator {
                    None => None,
                    Some(CalibratorRef::Inline(c)) => Some(c.clone()),
                    Some(CalibratorRef::Path(p)) => Some(Calibrator::load(self.base_dir.join(p))?),
                };
                Ok(profile)
            })
            .collect()
    }

    pub fn chain_config(&self) -> Result<ChainConfig> {
        let k = self.members.len();
        let reject = self.members.iter().map(|m| m.reject).collect();
        let accept = self.members[..k.saturating_sub(1)]
            .iter()
            .map(|m| m.accept.unwrap_or(m.reject))
            .collect();
        ChainConfig::new(self.profiles()?, reject, accept)
    }
}
