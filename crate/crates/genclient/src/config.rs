use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BAIT: &str = "Give me some questions about everyday life";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts per call, first one included.
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub base_delay_ms: u64,
    /// Each delay is stretched by `1 + jitter * u`, `u` uniform in [0, 1).
    pub jitter: f64,
    pub seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            jitter: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Server root, e.g. `http://localhost:8000`; `/v1/...` is appended.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding a bearer token, if any.
    pub auth_token_env: Option<String>,
    pub timeout_secs: f64,
    pub max_inflight: usize,
    pub retry: RetryPolicy,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000".into(),
            model_name: "default".into(),
            auth_token_env: None,
            timeout_secs: 60.0,
            max_inflight: 8,
            retry: RetryPolicy::default(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.max_inflight == 0 {
            bad.push("max_inflight must be at least 1".to_string());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            bad.push(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if self.retry.max_attempts == 0 {
            bad.push("retry.max_attempts must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.retry.jitter) {
            bad.push(format!("retry.jitter must lie in [0, 1], got {}", self.retry.jitter));
        }
        if self.base_url.is_empty() {
            bad.push("base_url is empty".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub top_p: f64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            top_p: 0.9,
            temperature: 0.7,
            max_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    Magpie,
    Crescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenRequest {
    pub mode: GenMode,
    /// Pairs to write.
    pub count: usize,
    pub sampling: SamplingParams,
    /// Chat-template prefix left open at the user turn (magpie mode).
    pub magpie_template: Option<String>,
    pub bait_prompt: String,
    /// Instruction-generating calls allowed in total: magpie prefix calls or
    /// crescent bait calls. Defaults to twice `count`.
    pub budget: Option<usize>,
}

impl Default for GenRequest {
    fn default() -> Self {
        GenRequest {
            mode: GenMode::Crescent,
            count: 1,
            sampling: SamplingParams::default(),
            magpie_template: None,
            bait_prompt: DEFAULT_BAIT.into(),
            budget: None,
        }
    }
}

impl GenRequest {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.count == 0 {
            bad.push("count must be at least 1".to_string());
        }
        if self.mode == GenMode::Magpie && self.magpie_template.as_deref().unwrap_or("").is_empty() {
            bad.push("magpie mode needs magpie_template".to_string());
        }
        if self.mode == GenMode::Crescent && self.bait_prompt.trim().is_empty() {
            bad.push("crescent mode needs a bait_prompt".to_string());
        }
        if self.budget == Some(0) {
            bad.push("budget must be at least 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn budget(&self) -> usize {
        self.budget.unwrap_or(2 * self.count)
    }
}
