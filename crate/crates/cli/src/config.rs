//! One serializable document describing a whole experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sasft_core::corpus::{CorpusKind, N_FACTS, VOCAB_SIZE};
use sasft_core::diagnostics::{CorrelationSetup, LipschitzConfig};
use sasft_core::model::ModelConfig;
use sasft_core::sampler::SamplingConfig;
use sasft_core::trainer::{Phase, TrainConfig};
use sasft_genclient::{EndpointConfig, GenRequest};

use crate::error::{CliError, Result};

/// Mix ratios of the default sweep grid.
pub const SWEEP_RATIOS: [f64; 7] = [0.25, 0.50, 0.75, 1.00, 1.25, 1.50, 1.75];

/// Longest rendering: the S1 template has nine fixed tokens plus the
/// style markers.
const S1_FIXED_TOKENS: usize = 9;
const S0_TOKENS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub vocab_seed: u64,
    pub pretrain_n: usize,
    pub pretrain_seed: u64,
    pub eval0_n: usize,
    pub eval0_seed: u64,
    pub eval_task_n: usize,
    pub eval_task_seed: u64,
    pub task_n: usize,
    /// Style-marker count of the task template.
    pub intensity: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            vocab_seed: 0,
            pretrain_n: 4096,
            pretrain_seed: 1,
            eval0_n: 12,
            eval0_seed: 2,
            eval_task_n: 9,
            eval_task_seed: 3,
            task_n: 256,
            intensity: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfGenConfig {
    /// `D_self` holds `floor(lambda * task_n)` pairs; must cover every
    /// ratio that is later mixed in.
    pub lambda: f64,
    pub sampling: SamplingConfig,
}

impl Default for SelfGenConfig {
    fn default() -> Self {
        SelfGenConfig {
            lambda: 2.0,
            sampling: SamplingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    /// Full-batch steps in the Taylor window.
    pub steps: usize,
    pub lr: f64,
    pub lipschitz: LipschitzConfig,
    pub basis_threshold: f64,
    pub contrast_pairs: usize,
    pub contrast_seed: u64,
    /// Step-size factor for the remainder scaling check.
    pub scaling_factor: f64,
    pub correlation: CorrelationSetup,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            steps: 100,
            lr: 0.02,
            lipschitz: LipschitzConfig::default(),
            basis_threshold: 0.9,
            contrast_pairs: 64,
            contrast_seed: 0,
            scaling_factor: 0.5,
            correlation: CorrelationSetup::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ratios: SWEEP_RATIOS.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchConfig {
    pub endpoint: EndpointConfig,
    pub request: GenRequest,
}

/// Fine-tuning regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "lambda")]
pub enum Regime {
    TaskOnly,
    /// Mix-in at the configured `mix_lambda`.
    SaSft,
    Custom(f64),
}

impl Regime {
    pub fn parse(name: &str, ratio: Option<f64>) -> Result<Self> {
        match (name, ratio) {
            ("task-only", None) => Ok(Regime::TaskOnly),
            ("sa-sft", None) => Ok(Regime::SaSft),
            ("custom", Some(r)) => Ok(Regime::Custom(r)),
            ("custom", None) => Err(CliError::invalid(["--regime custom needs --ratio".to_string()])),
            (other, Some(_)) if other != "custom" => Err(CliError::invalid([format!(
                "--ratio only applies to --regime custom (got {other})"
            )])),
            (other, _) => Err(CliError::invalid([format!(
                "unknown regime {other:?}; expected task-only, sa-sft or custom"
            )])),
        }
    }

    /// Mix-in ratio, `None` for task-only.
    pub fn lambda(self, cfg: &ExperimentConfig) -> Option<f64> {
        match self {
            Regime::TaskOnly => None,
            Regime::SaSft => Some(cfg.mix_lambda),
            Regime::Custom(l) => Some(l),
        }
    }

    pub fn name(self) -> String {
        match self {
            Regime::TaskOnly => "task-only".into(),
            Regime::SaSft => "sa-sft".into(),
            Regime::Custom(l) => format!("custom-{l}"),
        }
    }
}

/// Everything a run needs. Fine-tuning randomness is keyed by `seed`; see
/// [`ExperimentConfig::task_seed`] and friends for the derived streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub pretrain: TrainConfig,
    pub selfgen: SelfGenConfig,
    pub mix_lambda: f64,
    pub sft: TrainConfig,
    pub audit: AuditConfig,
    pub sweep: SweepConfig,
    pub fetch: Option<FetchConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            model: ModelConfig::default(),
            corpus: CorpusConfig::default(),
            pretrain: TrainConfig {
                lr: 0.1,
                steps: 3000,
                batch_size: 64,
                phase: Phase::Pretrain,
                momentum: 0.9,
                eval_every: 100,
                patience: 8,
                ..TrainConfig::default()
            },
            selfgen: SelfGenConfig::default(),
            mix_lambda: 1.0,
            // Small enough that Task-only forgetting is still unfolding at
            // the first 40-step snapshot.
            sft: TrainConfig {
                lr: 0.0025,
                ..TrainConfig::default()
            },
            audit: AuditConfig::default(),
            sweep: SweepConfig::default(),
            fetch: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let value = serde_json::from_str(&text).map_err(|e| CliError::invalid([format!("config: {e}")]))?;
        Self::from_value(value)
    }

    /// Overlays a (possibly partial) document on the defaults, section by
    /// section, so `{"pretrain": {"steps": 10}}` keeps the other pretraining
    /// defaults. Unknown keys are errors.
    pub fn from_value(value: Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::default()).expect("config serializes");
        let mut unknown = Vec::new();
        overlay(&mut base, value, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::invalid(unknown.into_iter().map(|k| format!("unknown field {k}"))));
        }
        serde_json::from_value(base).map_err(|e| CliError::invalid([format!("config: {e}")]))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    // Derived seeds keep the four fine-tuning streams distinct.
    pub fn task_seed(&self) -> u64 {
        self.seed * 4
    }

    pub fn sampling_seed(&self) -> u64 {
        self.seed * 4 + 1
    }

    pub fn mix_seed(&self) -> u64 {
        self.seed * 4 + 2
    }

    pub fn batch_seed(&self) -> u64 {
        self.seed * 4 + 3
    }

    /// Same experiment under another fine-tuning seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig {
            seed,
            ..self.clone()
        }
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut sub = |field: &str, r: sasft_core::Result<()>| {
            if let Err(e) = r {
                bad.push(format!("{field}: {e}"));
            }
        };
        sub("model", self.model.validate());
        sub("pretrain", self.pretrain.validate());
        sub("sft", self.sft.validate());
        sub("selfgen.sampling", self.selfgen.sampling.validate());
        if self.model.vocab_size != VOCAB_SIZE {
            bad.push(format!("model.vocab_size must be {VOCAB_SIZE}, got {}", self.model.vocab_size));
        }
        let longest = (S1_FIXED_TOKENS + self.corpus.intensity).max(S0_TOKENS);
        if longest > self.model.context_len {
            bad.push(format!(
                "model.context_len ({}) is shorter than the longest rendering ({longest})",
                self.model.context_len
            ));
        }
        if self.pretrain.phase != Phase::Pretrain {
            bad.push("pretrain.phase must be pretrain".into());
        }
        if self.sft.phase != Phase::Sft {
            bad.push("sft.phase must be sft".into());
        }
        let c = &self.corpus;
        for (name, n) in [("corpus.pretrain_n", c.pretrain_n), ("corpus.task_n", c.task_n)] {
            if n == 0 {
                bad.push(format!("{name} must be positive"));
            }
        }
        let limit = |kind| sasft_core::corpus::eval_capacity(kind);
        for (name, n, kind) in [
            ("corpus.eval0_n", c.eval0_n, CorpusKind::Eval0),
            ("corpus.eval_task_n", c.eval_task_n, CorpusKind::EvalTask),
        ] {
            if n == 0 || n > limit(kind) {
                bad.push(format!("{name} must lie in 1..={}, got {n}", limit(kind)));
            }
        }
        if c.intensity == 0 {
            bad.push("corpus.intensity must be at least 1".into());
        }
        let ratios = std::iter::once(("mix_lambda".to_string(), self.mix_lambda)).chain(
            self.sweep
                .ratios
                .iter()
                .enumerate()
                .map(|(i, &r)| (format!("sweep.ratios[{i}]"), r)),
        );
        for (name, r) in ratios {
            if !(r > 0.0 && r.is_finite()) {
                bad.push(format!("{name} must be positive and finite, got {r}"));
            } else if r > self.selfgen.lambda {
                bad.push(format!("{name} ({r}) exceeds selfgen.lambda ({})", self.selfgen.lambda));
            } else if (r * c.task_n as f64) < 1.0 {
                bad.push(format!("{name} * corpus.task_n is below one example"));
            }
        }
        if !(self.selfgen.lambda > 0.0 && self.selfgen.lambda.is_finite()) {
            bad.push(format!("selfgen.lambda must be positive, got {}", self.selfgen.lambda));
        }
        if self.sweep.ratios.is_empty() {
            bad.push("sweep.ratios must not be empty".into());
        }
        if self.sweep.seeds.is_empty() {
            bad.push("sweep.seeds must not be empty".into());
        }
        let a = &self.audit;
        if a.steps == 0 {
            bad.push("audit.steps must be positive".into());
        }
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            bad.push(format!("audit.lr must be positive, got {}", a.lr));
        }
        if !(a.basis_threshold > 0.0 && a.basis_threshold <= 1.0) {
            bad.push(format!("audit.basis_threshold must lie in (0, 1], got {}", a.basis_threshold));
        }
        if a.contrast_pairs == 0 || a.contrast_pairs > N_FACTS {
            bad.push(format!("audit.contrast_pairs must lie in 1..={N_FACTS}, got {}", a.contrast_pairs));
        }
        if !(a.scaling_factor > 0.0 && a.scaling_factor < 1.0) {
            bad.push(format!("audit.scaling_factor must lie in (0, 1), got {}", a.scaling_factor));
        }
        if a.lipschitz.probes < 8 {
            bad.push("audit.lipschitz.probes must be at least 8".into());
        }
        if a.correlation.intensities.len() < 4 {
            bad.push("audit.correlation.intensities needs at least 4 levels".into());
        }
        if let Some(f) = &self.fetch {
            if let Err(e) = f.endpoint.validate() {
                bad.push(format!("fetch.endpoint: {e}"));
            }
            if let Err(e) = f.request.validate() {
                bad.push(format!("fetch.request: {e}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::invalid(bad))
        }
    }
}

fn overlay(base: &mut Value, patch: Value, at: &str, unknown: &mut Vec<String>) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v, &path, unknown),
                    None => unknown.push(path),
                }
            }
        }
        (slot, patch) => *slot = patch,
    }
}
