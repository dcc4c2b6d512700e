use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CostWeights, PipelineError};
use crate::gateway::{ModelEndpoint, ModelRole, RetryPolicy};
use crate::retrieval::RetrievalDepths;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Slimplm,
    Vanilla,
    Cot,
    DirectRag,
    SelfEval,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Self::Slimplm, Self::Vanilla, Self::Cot, Self::DirectRag, Self::SelfEval];

    pub fn required_roles(self) -> &'static [ModelRole] {
        match self {
            Self::Slimplm => &[ModelRole::Proxy, ModelRole::Judge, ModelRole::Rewriter, ModelRole::Reader, ModelRole::Embedder],
            Self::Vanilla | Self::Cot | Self::DirectRag | Self::SelfEval => &[ModelRole::Reader],
        }
    }

    pub fn may_retrieve(self) -> bool {
        matches!(self, Self::Slimplm | Self::DirectRag | Self::SelfEval)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Slimplm => "slimplm",
            Self::Vanilla => "vanilla",
            Self::Cot => "cot",
            Self::DirectRag => "direct_rag",
            Self::SelfEval => "self_eval",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected one of slimplm, vanilla, cot, direct_rag, self_eval"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    #[default]
    ShortForm,
    LongForm,
}

/// Endpoint entry in the config file; the role comes from the map key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "one")]
    pub cost_weight: f64,
}

fn one() -> f64 {
    1.0
}

fn default_budget() -> usize {
    5
}

fn default_concurrency() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    512
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_ms() -> u64 {
    120_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryConfig {
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { attempts: default_attempts(), initial_backoff_ms: default_backoff_ms(), timeout_ms: default_timeout_ms() }
    }
}

impl From<RetryConfig> for RetryPolicy {
    fn from(c: RetryConfig) -> Self {
        Self {
            attempts: c.attempts.max(1),
            initial_backoff: std::time::Duration::from_millis(c.initial_backoff_ms),
            request_timeout: std::time::Duration::from_millis(c.timeout_ms),
        }
    }
}

/// Engine configuration, loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub mode: Mode,
    pub endpoints: BTreeMap<ModelRole, EndpointSpec>,
    #[serde(default = "default_budget")]
    pub reference_budget: usize,
    #[serde(default)]
    pub prompt_style: PromptStyle,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_concurrency")]
    pub per_endpoint_limit: usize,
    #[serde(default)]
    pub depths: RetrievalDepths,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub retry: RetryConfig,
}

impl PipelineConfig {
    /// Config with every role pointing at the same server.
    pub fn single_server(base_url: &str, mode: Mode) -> Self {
        let endpoints = ModelRole::ALL
            .into_iter()
            .map(|role| {
                let weight = if role == ModelRole::Reader { 1.0 } else { 0.1 };
                (role, EndpointSpec { base_url: base_url.to_owned(), model: role.as_str().to_owned(), api_key_env: String::new(), cost_weight: weight })
            })
            .collect();
        Self {
            mode,
            endpoints,
            reference_budget: default_budget(),
            prompt_style: PromptStyle::ShortForm,
            concurrency: default_concurrency(),
            per_endpoint_limit: default_concurrency(),
            depths: RetrievalDepths::default(),
            max_tokens: default_max_tokens(),
            retry: RetryConfig::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn endpoint(&self, role: ModelRole) -> Option<ModelEndpoint> {
        self.endpoints.get(&role).map(|s| ModelEndpoint {
            role,
            base_url: s.base_url.clone(),
            model_name: s.model.clone(),
            api_key_env: s.api_key_env.clone(),
            cost_weight: s.cost_weight,
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for role in self.mode.required_roles() {
            let ep = self
                .endpoint(*role)
                .ok_or_else(|| PipelineError::Config(format!("mode {} requires a {} endpoint", self.mode.as_str(), role.as_str())))?;
            ep.validate().map_err(|e| PipelineError::Config(format!("{} endpoint: {e}", role.as_str())))?;
        }
        if self.reference_budget == 0 || self.concurrency == 0 || self.max_tokens == 0 {
            return Err(PipelineError::Config("reference_budget, concurrency and max_tokens must be positive".into()));
        }
        if self.depths.bm25 == 0 || self.depths.rerank == 0 {
            return Err(PipelineError::Config("retrieval depths must be positive".into()));
        }
        Ok(())
    }

    pub fn cost_weights(&self) -> CostWeights {
        let w = |r| self.endpoints.get(&r).map_or(1.0, |s| s.cost_weight);
        CostWeights {
            proxy: w(ModelRole::Proxy),
            rewriter: w(ModelRole::Rewriter),
            judge: w(ModelRole::Judge),
            self_eval: w(ModelRole::Reader),
        }
    }
}
