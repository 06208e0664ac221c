//! Forgetting, style-subspace and first-order diagnostics.
//!
//! Everything here is a pure function of parameters and data. Risks are
//! accessed through [`Objective`] so the Taylor and smoothness machinery can
//! be checked against closed-form toy risks.

mod basis;
mod checks;
mod correlation;
mod report;
mod taylor;

pub use basis::{project, style_basis_estimate, BasisSummary, style_basis_from_differences, Projection, StyleBasis};
pub use checks::{attenuation_check, mixture_identity_check, AttenuationReport, MixtureIdentityReport};
pub use correlation::{ppl_grad_correlation, spearman, CorrelationReport, CorrelationRow, CorrelationSetup};
pub use report::{write_attenuation, write_correlation, write_drift_csv, write_schema, write_taylor_csv};
pub use taylor::{
    first_order_audit, lipschitz_estimate, AuditReport, CumulativeReport, DriftReport, DriftRow,
    step_scaling, LipschitzConfig, LipschitzEstimate, StepScalingReport, TaylorRecord,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::model::{ParamVector, Transformer};
use crate::scalar::Scalar;

/// A differentiable scalar risk over parameter space.
pub trait Objective<F: Scalar = f64>: Sync {
    fn value(&self, w: &ParamVector<F>) -> Result<F>;
    fn value_grad(&self, w: &ParamVector<F>) -> Result<(F, ParamVector<F>)>;

    fn grad(&self, w: &ParamVector<F>) -> Result<ParamVector<F>> {
        Ok(self.value_grad(w)?.1)
    }
}

/// Example-mean masked cross-entropy of a model on a dataset.
#[derive(Clone, Copy)]
pub struct DatasetRisk<'a> {
    pub model: &'a Transformer,
    pub data: &'a Dataset,
}

impl<'a> DatasetRisk<'a> {
    pub fn new(model: &'a Transformer, data: &'a Dataset) -> Self {
        DatasetRisk { model, data }
    }
}

impl<F: Scalar> Objective<F> for DatasetRisk<'_> {
    fn value(&self, w: &ParamVector<F>) -> Result<F> {
        self.model.mean_loss(w, &self.data.examples)
    }

    fn value_grad(&self, w: &ParamVector<F>) -> Result<(F, ParamVector<F>)> {
        self.model.batch_grad(w, &self.data.examples)
    }
}

/// Risk of `params` on `eval_set` in nats per target token.
pub fn risk<F: Scalar>(model: &Transformer, params: &ParamVector<F>, eval_set: &Dataset) -> Result<F> {
    model.mean_loss(params, &eval_set.examples)
}

/// `R(omega_t) - R(omega_0)` on the pretraining eval set; positive means
/// forgetting.
pub fn delta_forget<F: Scalar>(
    model: &Transformer,
    omega_t: &ParamVector<F>,
    omega_0: &ParamVector<F>,
    eval0: &Dataset,
) -> Result<F> {
    if omega_t.len() != omega_0.len() {
        return Err(Error::LengthMismatch {
            left: omega_t.len(),
            right: omega_0.len(),
        });
    }
    Ok(risk(model, omega_t, eval0)? - risk(model, omega_0, eval0)?)
}

/// Full-sequence NLL of every example (all tokens after BOS, mask ignored).
pub fn sequence_nlls<F: Scalar>(model: &Transformer, params: &ParamVector<F>, data: &Dataset) -> Result<Vec<F>> {
    data.examples
        .par_iter()
        .map(|e| model.sequence_nll(params, &e.token_ids))
        .collect()
}

/// Style perplexity gap between a task set and a pretraining-style set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplGap {
    /// Difference of mean sequence NLLs (nats per sequence).
    pub sequence: f64,
    /// Difference of mean per-token NLLs (nats per predicted token).
    pub per_token: f64,
    pub task_sequence: f64,
    pub base_sequence: f64,
    pub task_per_token: f64,
    pub base_per_token: f64,
}

fn mean_pair(nlls: &[f64], data: &Dataset) -> (f64, f64) {
    let n = nlls.len() as f64;
    let seq = nlls.iter().sum::<f64>() / n;
    let tok = nlls
        .iter()
        .zip(&data.examples)
        .map(|(l, e)| l / (e.len() - 1) as f64)
        .sum::<f64>()
        / n;
    (seq, tok)
}

/// `E_task[-log p(x)] - E_base[-log p(x)]` under `omega_0`, with the
/// sequence-total and per-token normalizations.
pub fn delta_ppl<F: Scalar>(
    model: &Transformer,
    omega_0: &ParamVector<F>,
    task: &Dataset,
    base0: &Dataset,
) -> Result<PplGap> {
    let t: Vec<f64> = sequence_nlls(model, omega_0, task)?.iter().map(|x| x.f64()).collect();
    let b: Vec<f64> = sequence_nlls(model, omega_0, base0)?.iter().map(|x| x.f64()).collect();
    let (ts, tt) = mean_pair(&t, task);
    let (bs, bt) = mean_pair(&b, base0);
    Ok(PplGap {
        sequence: ts - bs,
        per_token: tt - bt,
        task_sequence: ts,
        base_sequence: bs,
        task_per_token: tt,
        base_per_token: bt,
    })
}

#[cfg(test)]
mod tests;
