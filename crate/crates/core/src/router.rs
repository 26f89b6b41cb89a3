//! Live routing through a calibrated chain.
//!
//! For each request the router calls chain members in order, turns the
//! provider's token log-probabilities into a raw confidence, calibrates it,
//! and applies the same policy step as the simulator. Providers sit behind
//! [`ModelBackend`]: [`OpenAiBackend`] speaks the chat-completions JSON shape
//! with `logprobs`/`top_logprobs`, and [`ReplayBackend`] serves recorded raw
//! probabilities for offline testing.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{info, warn};

use crate::chain::{hop_cost, ChainConfig, CostKind, Decision};
use crate::error::{Error, Result};
use crate::math::ExactSum;
use crate::records::{Dataset, ModelEntry, QueryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    /// One call; confidence is the max softmax over the choice tokens.
    #[default]
    MultipleChoice,
    /// Answer call, then a Y/N verification call; confidence is P("Y").
    FreeFormPtrue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingChoicePolicy {
    #[default]
    Error,
    /// Renormalize over the tokens that are present and flag a warning.
    Renormalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    FailFast,
    /// Treat a failed member as delegating and move on.
    SkipAsDelegate,
}

pub const DEFAULT_ANSWER_TEMPLATE: &str = "{question}";

/// Zero-shot verification prompt.
pub const DEFAULT_VERIFICATION_TEMPLATE: &str = "Question: {question}\n\
Proposed answer: {answer}\n\
Is the proposed answer correct? Reply with a single letter, Y or N.\n\
Answer:";

const COT_MARKERS: [&str; 3] = ["step by step", "reasoning", "think through"];

fn default_choices() -> Vec<String> {
    ["A", "B", "C", "D"].map(String::from).to_vec()
}
fn default_yes() -> Vec<String> {
    vec!["Y".into()]
}
fn default_no() -> Vec<String> {
    vec!["N".into()]
}
fn default_timeout() -> u64 {
    30_000
}
fn default_top_logprobs() -> u8 {
    20
}
fn default_answer_tokens() -> u32 {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub model_id: String,
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Model name sent to the provider; defaults to `model_id`.
    #[serde(default)]
    pub provider_model: Option<String>,
    #[serde(default)]
    pub mode: RequestMode,
    #[serde(default)]
    pub answer_prompt_template: Option<String>,
    #[serde(default)]
    pub verification_prompt_template: Option<String>,
    /// Labels matched against whitespace-trimmed tokens.
    #[serde(default = "default_choices")]
    pub choice_tokens: Vec<String>,
    #[serde(default = "default_yes")]
    pub yes_tokens: Vec<String>,
    #[serde(default = "default_no")]
    pub no_tokens: Vec<String>,
    #[serde(default)]
    pub missing_choices: MissingChoicePolicy,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u8,
    #[serde(default = "default_answer_tokens")]
    pub max_answer_tokens: u32,
}

impl EndpointSpec {
    pub fn new(
        model_id: impl Into<String>,
        base_url: impl Into<String>,
        mode: RequestMode,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            base_url: base_url.into(),
            api_key_env: None,
            provider_model: None,
            mode,
            answer_prompt_template: None,
            verification_prompt_template: (mode == RequestMode::FreeFormPtrue)
                .then(|| DEFAULT_VERIFICATION_TEMPLATE.to_string()),
            choice_tokens: default_choices(),
            yes_tokens: default_yes(),
            no_tokens: default_no(),
            missing_choices: MissingChoicePolicy::Error,
            timeout_ms: default_timeout(),
            top_logprobs: default_top_logprobs(),
            max_answer_tokens: default_answer_tokens(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == RequestMode::FreeFormPtrue {
            let Some(t) = &self.verification_prompt_template else {
                return Err(Error::Config(format!(
                    "endpoint `{}`: free_form_ptrue requires a verification_prompt_template",
                    self.model_id
                )));
            };
            if !t.contains("{answer}") {
                return Err(Error::Config(format!(
                    "endpoint `{}`: verification template lacks an {{answer}} placeholder",
                    self.model_id
                )));
            }
            let lower = t.to_lowercase();
            if COT_MARKERS.iter().any(|m| lower.contains(m)) {
                warn!(
                    model_id = %self.model_id,
                    "verification template looks like chain-of-thought; its probabilities tend to cluster at 0 and 1"
                );
            }
        }
        if self.mode == RequestMode::MultipleChoice && self.choice_tokens.is_empty() {
            return Err(Error::Config(format!(
                "endpoint `{}`: empty choice_tokens",
                self.model_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub raw_prob: f64,
    /// Winning choice label (multiple choice) or "Y"/"N".
    pub label: String,
    /// Some expected tokens were absent and the mass was renormalized.
    pub warning: bool,
}

fn label_masses(top: &[TopLogprob], labels: &[String]) -> Vec<f64> {
    labels
        .iter()
        .map(|label| {
            top.iter()
                .filter(|t| t.token.trim() == label.trim())
                .map(|t| t.logprob.exp())
                .sum()
        })
        .collect()
}

/// Raw confidence from the top log-probabilities at the answer position.
pub fn extract_confidence(top: &[TopLogprob], endpoint: &EndpointSpec) -> Result<Confidence> {
    if top.is_empty() {
        return Err(Error::NoLogprobs);
    }
    match endpoint.mode {
        RequestMode::MultipleChoice => {
            let masses = label_masses(top, &endpoint.choice_tokens);
            let missing: Vec<String> = endpoint
                .choice_tokens
                .iter()
                .zip(&masses)
                .filter(|(_, &m)| m == 0.0)
                .map(|(l, _)| l.clone())
                .collect();
            let total: f64 = masses.iter().sum();
            if total == 0.0
                || (!missing.is_empty() && endpoint.missing_choices == MissingChoicePolicy::Error)
            {
                return Err(Error::MissingChoices(missing));
            }
            let (best, mass) =
                masses
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc },
                    );
            Ok(Confidence {
                raw_prob: (mass / total).min(1.0),
                label: endpoint.choice_tokens[best].clone(),
                warning: !missing.is_empty(),
            })
        }
        RequestMode::FreeFormPtrue => {
            let yes: f64 = label_masses(top, &endpoint.yes_tokens).iter().sum();
            let no: f64 = label_masses(top, &endpoint.no_tokens).iter().sum();
            let mut missing = Vec::new();
            if yes == 0.0 {
                missing.extend(endpoint.yes_tokens.iter().cloned());
            }
            if no == 0.0 {
                missing.extend(endpoint.no_tokens.iter().cloned());
            }
            if yes + no == 0.0
                || (!missing.is_empty() && endpoint.missing_choices == MissingChoicePolicy::Error)
            {
                return Err(Error::MissingChoices(missing));
            }
            let p = (yes / (yes + no)).min(1.0);
            Ok(Confidence {
                raw_prob: p,
                label: if p >= 0.5 { "Y" } else { "N" }.into(),
                warning: !missing.is_empty(),
            })
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatCompletion {
    pub choices: Vec<ChatChoice>,
    #[serde(default)]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatChoice {
    #[serde(default)]
    pub message: Option<ChatMessage>,
    #[serde(default)]
    pub logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatMessage {
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub content: Option<Vec<TokenLogprobs>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TokenLogprobs {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl ChatCompletion {
    /// Top log-probabilities of the first generated token.
    pub fn first_token_logprobs(&self) -> Result<Vec<TopLogprob>> {
        let first = self
            .choices
            .first()
            .and_then(|c| c.logprobs.as_ref())
            .and_then(|l| l.content.as_ref())
            .and_then(|c| c.first())
            .ok_or(Error::NoLogprobs)?;
        if first.top_logprobs.is_empty() {
            Ok(vec![TopLogprob {
                token: first.token.clone(),
                logprob: first.logprob,
            }])
        } else {
            Ok(first.top_logprobs.clone())
        }
    }

    pub fn text(&self) -> String {
        self.choices
            .first()
            .and_then(|c| c.message.as_ref())
            .and_then(|m| m.content.clone())
            .unwrap_or_default()
    }
}

/// What one chain member reported for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub answer: String,
    pub raw_prob: f64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub latency_ms: Option<f64>,
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteQuery {
    pub query: String,
    #[serde(default)]
    pub query_id: Option<String>,
}

impl RouteQuery {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            query_id: None,
        }
    }

    /// Key used by the replay backend: the explicit id, else the query text.
    pub fn key(&self) -> &str {
        self.query_id.as_deref().unwrap_or(&self.query)
    }
}

#[async_trait]
pub trait ModelBackend: Send + Sync {
    async fn observe(&self, endpoint: &EndpointSpec, query: &RouteQuery) -> Result<Observation>;
}

/// Serves recorded raw probabilities, matching requests by query id.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    records: HashMap<String, QueryRecord>,
}

impl ReplayBackend {
    pub fn new(dataset: &Dataset) -> Self {
        Self {
            records: dataset
                .records()
                .iter()
                .map(|r| (r.query_id.clone(), r.clone()))
                .collect(),
        }
    }
}

#[async_trait]
impl ModelBackend for ReplayBackend {
    async fn observe(&self, endpoint: &EndpointSpec, query: &RouteQuery) -> Result<Observation> {
        let record = self
            .records
            .get(query.key())
            .ok_or_else(|| Error::Provider {
                model_id: endpoint.model_id.clone(),
                message: format!("no recorded query `{}`", query.key()),
            })?;
        let entry = record
            .entry(&endpoint.model_id)
            .map_err(|e| Error::Provider {
                model_id: endpoint.model_id.clone(),
                message: e.to_string(),
            })?;
        Ok(Observation {
            answer: format!("replay:{}", endpoint.model_id),
            raw_prob: entry.raw_prob,
            tokens_in: entry.tokens_in,
            tokens_out: entry.tokens_out,
            latency_ms: entry.latency_ms,
            warning: false,
        })
    }
}

/// Client for chat-completions endpoints that return token log-probabilities.
#[derive(Debug, Clone, Default)]
pub struct OpenAiBackend {
    client: reqwest::Client,
}

impl OpenAiBackend {
    pub fn new() -> Self {
        Self::default()
    }

    async fn complete(
        &self,
        endpoint: &EndpointSpec,
        prompt: &str,
        max_tokens: u32,
        logprobs: bool,
    ) -> Result<ChatCompletion> {
        let provider = |message: String| Error::Provider {
            model_id: endpoint.model_id.clone(),
            message,
        };
        let mut body = json!({
            "model": endpoint.provider_model.as_deref().unwrap_or(&endpoint.model_id),
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
            "temperature": 0,
        });
        if logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(endpoint.top_logprobs);
        }
        let url = format!(
            "{}/chat/completions",
            endpoint.base_url.trim_end_matches('/')
        );
        let mut request = self
            .client
            .post(url)
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .json(&body);
        if let Some(var) = &endpoint.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| provider(format!("environment variable {var} is not set")))?;
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| provider(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().await.unwrap_or_default();
            return Err(provider(format!("HTTP {status}: {text}")));
        }
        response.json().await.map_err(|e| provider(e.to_string()))
    }
}

#[async_trait]
impl ModelBackend for OpenAiBackend {
    async fn observe(&self, endpoint: &EndpointSpec, query: &RouteQuery) -> Result<Observation> {
        let started = Instant::now();
        let template = endpoint
            .answer_prompt_template
            .as_deref()
            .unwrap_or(DEFAULT_ANSWER_TEMPLATE);
        let prompt = template.replace("{question}", &query.query);
        let (answer, confidence, usage) = match endpoint.mode {
            RequestMode::MultipleChoice => {
                let completion = self.complete(endpoint, &prompt, 1, true).await?;
                let confidence = extract_confidence(&completion.first_token_logprobs()?, endpoint)?;
                (
                    confidence.label.clone(),
                    confidence,
                    completion.usage.unwrap_or_default(),
                )
            }
            RequestMode::FreeFormPtrue => {
                let answered = self
                    .complete(endpoint, &prompt, endpoint.max_answer_tokens, false)
                    .await?;
                let answer = answered.text();
                let verification = endpoint
                    .verification_prompt_template
                    .as_deref()
                    .unwrap_or(DEFAULT_VERIFICATION_TEMPLATE)
                    .replace("{question}", &query.query)
                    .replace("{answer}", &answer);
                let verified = self.complete(endpoint, &verification, 1, true).await?;
                let confidence = extract_confidence(&verified.first_token_logprobs()?, endpoint)?;
                let a = answered.usage.unwrap_or_default();
                let v = verified.usage.unwrap_or_default();
                let usage = Usage {
                    prompt_tokens: a.prompt_tokens + v.prompt_tokens,
                    completion_tokens: a.completion_tokens + v.completion_tokens,
                };
                (answer, confidence, usage)
            }
        };
        Ok(Observation {
            answer,
            raw_prob: confidence.raw_prob,
            tokens_in: usage.prompt_tokens,
            tokens_out: usage.completion_tokens,
            latency_ms: Some(started.elapsed().as_secs_f64() * 1e3),
            warning: confidence.warning,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RouteStatus {
    Answered,
    Abstained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub model_id: String,
    pub raw_prob: f64,
    pub p_hat: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    pub status: RouteStatus,
    pub answer: String,
    pub terminal_model_id: String,
    pub terminal_index: usize,
    /// Visited members with a usable response, in chain order.
    pub hops: Vec<Hop>,
    pub effective_cost: f64,
    pub total_latency_ms: f64,
    /// Members skipped after a provider failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
}

#[derive(Debug, Default)]
struct ModelCounters {
    accept: AtomicU64,
    delegate: AtomicU64,
    reject: AtomicU64,
    skipped: AtomicU64,
}

#[derive(Debug, Default)]
pub struct RouterStats {
    requests: AtomicU64,
    answered: AtomicU64,
    abstained: AtomicU64,
    exhausted: AtomicU64,
    failed: AtomicU64,
    cost: Mutex<ExactSum>,
    models: Vec<ModelCounters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub model_id: String,
    pub accept: u64,
    pub delegate: u64,
    pub reject: u64,
    /// Requests that ended at this member (`accept + reject`).
    pub terminal: u64,
    pub skipped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    /// Requests that produced a route response.
    pub requests: u64,
    pub answered: u64,
    pub abstained: u64,
    /// Abstentions caused by every remaining member being skipped.
    pub exhausted: u64,
    /// Requests that failed with a provider error.
    pub failed: u64,
    pub cumulative_cost: f64,
    pub models: Vec<ModelStats>,
}

/// A chain bound to its endpoints and a backend.
pub struct Router {
    config: ChainConfig,
    endpoints: Vec<EndpointSpec>,
    backend: Arc<dyn ModelBackend>,
    failure_policy: FailurePolicy,
    cost_kind: CostKind,
    stats: RouterStats,
}

impl std::fmt::Debug for Router {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Router")
            .field("config", &self.config)
            .field("endpoints", &self.endpoints)
            .field("failure_policy", &self.failure_policy)
            .field("cost_kind", &self.cost_kind)
            .finish_non_exhaustive()
    }
}

impl Router {
    /// `endpoints` may be in any order; each chain member needs exactly one.
    pub fn new(
        config: ChainConfig,
        endpoints: Vec<EndpointSpec>,
        backend: Arc<dyn ModelBackend>,
        failure_policy: FailurePolicy,
        cost_kind: CostKind,
    ) -> Result<Self> {
        let mut ordered = Vec::with_capacity(config.len());
        for member in config.members() {
            member.calibrator()?;
            let endpoint = endpoints
                .iter()
                .find(|e| e.model_id == member.model_id)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no endpoint for chain member `{}`",
                        member.model_id
                    ))
                })?;
            endpoint.validate()?;
            ordered.push(endpoint.clone());
        }
        let stats = RouterStats {
            models: (0..config.len())
                .map(|_| ModelCounters::default())
                .collect(),
            ..RouterStats::default()
        };
        Ok(Self {
            config,
            endpoints: ordered,
            backend,
            failure_policy,
            cost_kind,
            stats,
        })
    }

    /// Replay endpoints (no network) for every chain member.
    pub fn replay(config: ChainConfig, dataset: &Dataset, cost_kind: CostKind) -> Result<Self> {
        let endpoints = config
            .members()
            .iter()
            .map(|m| EndpointSpec::new(&m.model_id, "replay://", RequestMode::MultipleChoice))
            .collect();
        Self::new(
            config,
            endpoints,
            Arc::new(ReplayBackend::new(dataset)),
            FailurePolicy::FailFast,
            cost_kind,
        )
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    /// Routes one query. Member `j + 1` is only called after member `j` delegates.
    pub async fn route(&self, query: &RouteQuery) -> Result<RouteResponse> {
        let result = self.route_inner(query).await;
        match &result {
            Ok(response) => self.record(response),
            Err(_) => {
                self.stats.failed.fetch_add(1, Ordering::Relaxed);
            }
        }
        result
    }

    async fn route_inner(&self, query: &RouteQuery) -> Result<RouteResponse> {
        let k = self.config.len();
        let mut hops = Vec::with_capacity(k);
        let mut skipped = Vec::new();
        let mut warnings = Vec::new();
        let mut cost = 0.0;
        let mut latency = 0.0;
        let mut last_error = None;
        for (j, (member, endpoint)) in self
            .config
            .members()
            .iter()
            .zip(&self.endpoints)
            .enumerate()
        {
            let observation = match self.backend.observe(endpoint, query).await {
                Ok(o) => o,
                Err(e) => match self.failure_policy {
                    FailurePolicy::FailFast => return Err(e),
                    FailurePolicy::SkipAsDelegate => {
                        warn!(model_id = %member.model_id, error = %e, "provider failed; skipping member");
                        skipped.push(member.model_id.clone());
                        last_error = Some(e.to_string());
                        continue;
                    }
                },
            };
            if observation.warning {
                warnings.push(format!(
                    "{}: choice tokens missing, mass renormalized",
                    member.model_id
                ));
            }
            let entry = ModelEntry {
                raw_prob: observation.raw_prob,
                correct: false,
                tokens_in: observation.tokens_in,
                tokens_out: observation.tokens_out,
                latency_ms: observation.latency_ms,
            };
            cost += hop_cost(member, &entry, self.cost_kind)?;
            latency += observation.latency_ms.unwrap_or(0.0);
            let (p_hat, decision) = self.config.step(j, observation.raw_prob)?;
            hops.push(Hop {
                model_id: member.model_id.clone(),
                raw_prob: observation.raw_prob,
                p_hat,
                decision,
            });
            if decision == Decision::Delegate {
                continue;
            }
            let answered = decision == Decision::Accept;
            return Ok(RouteResponse {
                status: if answered {
                    RouteStatus::Answered
                } else {
                    RouteStatus::Abstained
                },
                answer: if answered {
                    observation.answer
                } else {
                    String::new()
                },
                terminal_model_id: member.model_id.clone(),
                terminal_index: j,
                hops,
                effective_cost: cost,
                total_latency_ms: latency,
                skipped,
                warnings,
                error_detail: None,
            });
        }
        Ok(RouteResponse {
            status: RouteStatus::Abstained,
            answer: String::new(),
            terminal_model_id: self.config.members()[k - 1].model_id.clone(),
            terminal_index: k - 1,
            hops,
            effective_cost: cost,
            total_latency_ms: latency,
            skipped,
            warnings,
            error_detail: Some(format!(
                "chain exhausted after provider failures: {}",
                last_error.unwrap_or_default()
            )),
        })
    }

    fn record(&self, response: &RouteResponse) {
        let s = &self.stats;
        s.requests.fetch_add(1, Ordering::Relaxed);
        match response.status {
            RouteStatus::Answered => s.answered.fetch_add(1, Ordering::Relaxed),
            RouteStatus::Abstained => s.abstained.fetch_add(1, Ordering::Relaxed),
        };
        if response.error_detail.is_some() {
            s.exhausted.fetch_add(1, Ordering::Relaxed);
        }
        for hop in &response.hops {
            let j = self.index_of(&hop.model_id);
            let counter = match hop.decision {
                Decision::Accept => &s.models[j].accept,
                Decision::Delegate => &s.models[j].delegate,
                Decision::Reject => &s.models[j].reject,
            };
            counter.fetch_add(1, Ordering::Relaxed);
        }
        for id in &response.skipped {
            s.models[self.index_of(id)]
                .skipped
                .fetch_add(1, Ordering::Relaxed);
        }
        let mut cost = s.cost.lock().unwrap_or_else(|p| p.into_inner());
        *cost += ExactSum::from_f64(response.effective_cost);
    }

    fn index_of(&self, model_id: &str) -> usize {
        self.config
            .members()
            .iter()
            .position(|m| m.model_id == model_id)
            .expect("hop from a chain member")
    }

    pub fn stats(&self) -> StatsSnapshot {
        let s = &self.stats;
        let load = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StatsSnapshot {
            requests: load(&s.requests),
            answered: load(&s.answered),
            abstained: load(&s.abstained),
            exhausted: load(&s.exhausted),
            failed: load(&s.failed),
            cumulative_cost: s.cost.lock().unwrap_or_else(|p| p.into_inner()).to_f64(),
            models: self
                .config
                .members()
                .iter()
                .zip(&s.models)
                .map(|(m, c)| ModelStats {
                    model_id: m.model_id.clone(),
                    accept: load(&c.accept),
                    delegate: load(&c.delegate),
                    reject: load(&c.reject),
                    terminal: load(&c.accept) + load(&c.reject),
                    skipped: load(&c.skipped),
                })
                .collect(),
        }
    }
}

fn error_body(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn route_handler(State(router): State<Arc<Router>>, body: Bytes) -> Response {
    let query: RouteQuery = match serde_json::from_slice(&body) {
        Ok(q) => q,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if query.query.trim().is_empty() {
        return error_body(StatusCode::BAD_REQUEST, "query must be a non-empty string");
    }
    match router.route(&query).await {
        Ok(response) => Json(response).into_response(),
        Err(e @ (Error::Provider { .. } | Error::NoLogprobs | Error::MissingChoices(_))) => {
            error_body(StatusCode::BAD_GATEWAY, e.to_string())
        }
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn stats_handler(State(router): State<Arc<Router>>) -> Json<StatsSnapshot> {
    Json(router.stats())
}

/// `POST /v1/route`, `GET /healthz`, `GET /stats`.
pub fn app(router: Arc<Router>) -> axum::Router {
    axum::Router::new()
        .route("/v1/route", post(route_handler))
        .route("/healthz", get(healthz))
        .route("/stats", get(stats_handler))
        .with_state(router)
}

/// Serves until the process is stopped.
pub async fn serve(router: Arc<Router>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(address = %listener.local_addr()?, "router listening");
    axum::serve(listener, app(router)).await?;
    Ok(())
}
