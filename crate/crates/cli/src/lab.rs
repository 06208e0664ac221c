//! In-memory experiment pipeline shared by the subcommands and the tests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sasft_core::corpus::{build_corpus, build_vocab, contrast_pairs, CorpusKind, Dataset, StyleSpec, Vocab};
use sasft_core::diagnostics::{
    attenuation_check, first_order_audit, lipschitz_estimate, mixture_identity_check, ppl_grad_correlation,
    risk, step_scaling, style_basis_estimate, AttenuationReport, AuditReport, BasisSummary, CorrelationReport,
    DatasetRisk, MixtureIdentityReport, StepScalingReport,
};
use sasft_core::mixer::{epsilon, mix, select_self, MixManifest, MixSpec};
use sasft_core::model::{ModelConfig, Transformer};
use sasft_core::sampler::{build_self_corpus, self_count, PromptSpec, SamplingConfig};
use sasft_core::trainer::{pretrain, sft, PretrainOutcome, SnapshotSink, TrainConfig};
use sasft_core::{ParameterVector, Trajectory};

use crate::config::{ExperimentConfig, Regime};
use crate::error::Result;

/// Eval set names in snapshot order.
pub const EVAL_NAMES: [&str; 2] = ["eval0", "eval_task"];

/// Model, vocabulary and the seed-independent evaluation sets.
#[derive(Debug, Clone)]
pub struct Lab {
    pub cfg: ExperimentConfig,
    pub vocab: Arc<Vocab>,
    pub model: Transformer,
    pub eval0: Dataset,
    pub eval_task: Dataset,
}

/// Outcome of one fine-tuning regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: Regime,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub n_train: usize,
    pub eval0_initial: f64,
    pub eval0_final: f64,
    /// `R(omega_T) - R(omega_0)` on eval0.
    pub delta_forget: f64,
    pub eval_task_initial: f64,
    pub eval_task_final: f64,
    pub mix: Option<MixManifest>,
}

/// Everything the `audit` subcommand reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBundle {
    pub basis: BasisSummary,
    pub attenuation: AttenuationReport,
    pub mixture: MixtureIdentityReport,
    pub taylor: AuditReport,
    pub scaling: StepScalingReport,
    pub correlation: CorrelationReport,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = Arc::new(build_vocab(cfg.corpus.vocab_seed));
        let model = Transformer::new(cfg.model.clone())?;
        let ctx = cfg.model.context_len;
        let c = &cfg.corpus;
        let eval0 = build_corpus(CorpusKind::Eval0, c.eval0_n, StyleSpec::s0(), c.eval0_seed, vocab.clone(), ctx)?;
        let eval_task = build_corpus(
            CorpusKind::EvalTask,
            c.eval_task_n,
            StyleSpec::s1(c.intensity),
            c.eval_task_seed,
            vocab.clone(),
            ctx,
        )?;
        Ok(Lab {
            cfg,
            vocab,
            model,
            eval0,
            eval_task,
        })
    }

    /// The same lab under another fine-tuning seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Lab {
            cfg: self.cfg.with_seed(seed),
            ..self.clone()
        }
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.cfg.model
    }

    fn ctx(&self) -> usize {
        self.cfg.model.context_len
    }

    pub fn pretrain_corpus(&self) -> Result<Dataset> {
        let c = &self.cfg.corpus;
        Ok(build_corpus(
            CorpusKind::Pretrain,
            c.pretrain_n,
            StyleSpec::s0(),
            c.pretrain_seed,
            self.vocab.clone(),
            self.ctx(),
        )?)
    }

    /// Trains `omega_0` from the model's seeded initialization.
    pub fn pretrain(&self) -> Result<PretrainOutcome> {
        let init: ParameterVector = self.model.init_params();
        let corpus = self.pretrain_corpus()?;
        Ok(pretrain(&self.model, &init, &self.cfg.pretrain, &corpus, &self.eval0)?)
    }

    pub fn task(&self) -> Result<Dataset> {
        let c = &self.cfg.corpus;
        Ok(build_corpus(
            CorpusKind::Task,
            c.task_n,
            StyleSpec::s1(c.intensity),
            self.cfg.task_seed(),
            self.vocab.clone(),
            self.ctx(),
        )?)
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            seed: self.cfg.sampling_seed(),
            ..self.cfg.selfgen.sampling.clone()
        }
    }

    /// `D_self` sampled from the frozen `omega_0`.
    pub fn self_corpus(&self, omega0: &ParameterVector) -> Result<Dataset> {
        Ok(build_self_corpus(
            &self.model,
            omega0,
            self.cfg.selfgen.lambda,
            self.cfg.corpus.task_n,
            &self.sampling(),
            &PromptSpec::bos(&self.vocab),
            self.vocab.clone(),
        )?)
    }

    pub fn mix(&self, task: &Dataset, self_data: &Dataset, lambda: f64) -> Result<(Dataset, MixManifest)> {
        Ok(mix(
            task,
            self_data,
            MixSpec {
                lambda,
                seed: self.cfg.mix_seed(),
            },
        )?)
    }

    /// Training set of a regime; the self corpus is only consulted when the
    /// regime mixes one in.
    pub fn train_set(
        &self,
        regime: Regime,
        task: &Dataset,
        self_data: Option<&Dataset>,
    ) -> Result<(Dataset, Option<MixManifest>)> {
        match regime.lambda(&self.cfg) {
            None => Ok((task.clone(), None)),
            Some(lambda) => {
                let s = self_data.ok_or_else(|| {
                    crate::error::CliError::invalid([format!("regime {} needs a self corpus", regime.name())])
                })?;
                let (d, m) = self.mix(task, s, lambda)?;
                Ok((d, Some(m)))
            }
        }
    }

    pub fn sft_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.cfg.batch_seed(),
            ..self.cfg.sft.clone()
        }
    }

    pub fn finetune(
        &self,
        omega0: &ParameterVector,
        data: &Dataset,
        sink: Option<&mut dyn SnapshotSink<f64>>,
    ) -> Result<Trajectory> {
        Ok(sft(
            &self.model,
            omega0,
            data,
            &self.sft_config(),
            &[&self.eval0, &self.eval_task],
            sink,
        )?)
    }

    /// Builds the regime's data, fine-tunes and summarizes.
    pub fn run_regime(
        &self,
        omega0: &ParameterVector,
        regime: Regime,
        task: &Dataset,
        self_data: Option<&Dataset>,
        sink: Option<&mut dyn SnapshotSink<f64>>,
    ) -> Result<(Trajectory, RegimeSummary)> {
        let (data, manifest) = self.train_set(regime, task, self_data)?;
        let traj = self.finetune(omega0, &data, sink)?;
        let (first, last) = (traj.first(), traj.last());
        let summary = RegimeSummary {
            regime,
            lambda: regime.lambda(&self.cfg),
            seed: self.cfg.seed,
            n_train: data.len(),
            eval0_initial: first.eval_nll[0],
            eval0_final: last.eval_nll[0],
            delta_forget: last.eval_nll[0] - first.eval_nll[0],
            eval_task_initial: first.eval_nll[1],
            eval_task_final: last.eval_nll[1],
            mix: manifest,
        };
        Ok((traj, summary))
    }

    /// Style basis, attenuation and mixture identity at `omega_0`, the
    /// Taylor/drift audit of a full-batch window on the regime's data, and
    /// the perplexity-gap correlation study.
    pub fn audit(&self, omega0: &ParameterVector, regime: Regime) -> Result<AuditBundle> {
        let a = &self.cfg.audit;
        let task = self.task()?;
        let self_data = self.self_corpus(omega0)?;

        let pairs = contrast_pairs(a.contrast_pairs, self.cfg.corpus.intensity, a.contrast_seed, &self.vocab, self.ctx())?;
        let basis = style_basis_estimate(&self.model, omega0, &pairs, a.basis_threshold)?;
        let lambda = self.cfg.mix_lambda;
        let chosen = select_self(&self_data, self_count(lambda, task.len())?, self.cfg.mix_seed())?;
        let (_, g_task) = self.model.batch_grad(omega0, &task.examples)?;
        let (_, g_self) = self.model.batch_grad(omega0, &chosen)?;
        let attenuation = attenuation_check(&g_task, &g_self, &basis, epsilon(lambda)?)?;
        let mixture = mixture_identity_check(&self.model, omega0, &task, &self_data, lambda, self.cfg.mix_seed())?;

        let (data, _) = self.train_set(regime, &task, Some(&self_data))?;
        let window = self.taylor_window(omega0, &data, a.lr)?;
        let objective = DatasetRisk::new(&self.model, &self.eval0);
        let lip = lipschitz_estimate(&objective, omega0, &a.lipschitz, &[])?;
        let taylor = first_order_audit(&objective, &window, &lip)?;
        let scaling = step_scaling(&objective, &window, a.scaling_factor)?;

        let correlation = ppl_grad_correlation(&self.model, omega0, self.vocab.clone(), &a.correlation)?;
        Ok(AuditBundle {
            basis: (&basis).into(),
            attenuation,
            mixture,
            taylor,
            scaling,
            correlation,
        })
    }

    /// Full-batch SGD for `audit.steps` steps, every iterate recorded.
    pub fn taylor_window(&self, omega0: &ParameterVector, data: &Dataset, lr: f64) -> Result<Trajectory> {
        let cfg = TrainConfig {
            lr,
            steps: self.cfg.audit.steps,
            batch_size: data.len(),
            snapshot_every: 1,
            seed: self.cfg.batch_seed(),
            ..self.cfg.sft.clone()
        };
        Ok(sft(&self.model, omega0, data, &cfg, &[&self.eval0], None)?)
    }

    pub fn eval0_risk(&self, params: &ParameterVector) -> Result<f64> {
        Ok(risk(&self.model, params, &self.eval0)?)
    }
}
