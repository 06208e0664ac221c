use serde::{Deserialize, Serialize};

use super::basis::{project, StyleBasis};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::mixer::{epsilon, mix, select_self, MixSpec};
use crate::model::{ParamVector, Transformer};
use crate::sampler::self_count;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureIdentityReport {
    pub lambda: f64,
    /// `lambda / (1 + lambda)`.
    pub epsilon: f64,
    /// Self share actually present in the merged set, `M / (N + M)`.
    pub epsilon_effective: f64,
    pub n_task: usize,
    pub n_self: usize,
    /// `lambda * N` is an integer, so the identity is exact.
    pub exact: bool,
    pub tolerance: f64,
    /// `|g_mix - ((1 - eps) g_task + eps g_self)| / |g_mix|`.
    pub deviation: f64,
    pub pass: bool,
}

/// Compares the full-batch gradient on the merged set with the convex
/// combination of the task and self gradients.
///
/// When `lambda * N` is not integral the merged set carries
/// `M / (N + M)` self weight rather than `epsilon`; the check then uses the
/// effective weight and the looser tolerance 1e-9.
pub fn mixture_identity_check<F: Scalar>(
    model: &Transformer,
    omega: &ParamVector<F>,
    task: &Dataset,
    self_data: &Dataset,
    lambda: f64,
    mix_seed: u64,
) -> Result<MixtureIdentityReport> {
    let eps = epsilon(lambda)?;
    let n = task.len();
    let m = self_count(lambda, n)?;
    let exact = (lambda * n as f64 - m as f64).abs() <= 1e-9;
    let eps_eff = m as f64 / (n + m) as f64;
    let (mixed, _) = mix(task, self_data, MixSpec { lambda, seed: mix_seed })?;
    let chosen = select_self(self_data, m, mix_seed)?;
    let (_, g_mix) = model.batch_grad(omega, &mixed.examples)?;
    let (_, g_task) = model.batch_grad(omega, &task.examples)?;
    let (_, g_self) = model.batch_grad(omega, &chosen)?;
    let w = if exact { eps } else { eps_eff };
    let rhs = g_task.scale(F::of(1.0 - w)).add(&g_self.scale(F::of(w)))?;
    let denom = g_mix.norm().f64();
    let deviation = if denom == 0.0 {
        rhs.norm().f64()
    } else {
        g_mix.sub(&rhs)?.norm().f64() / denom
    };
    let tolerance = if exact { 1e-12 } else { 1e-9 };
    Ok(MixtureIdentityReport {
        lambda,
        epsilon: eps,
        epsilon_effective: eps_eff,
        n_task: n,
        n_self: m,
        exact,
        tolerance,
        deviation,
        pass: deviation <= tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationReport {
    pub epsilon: f64,
    /// `|P g_mix| / |P g_task|` with `g_mix = (1 - eps) g_task + eps g_self`.
    pub ratio: f64,
    /// `1 - eps`.
    pub predicted: f64,
    /// `eps |P g_self| / |P g_task|`.
    pub residual_budget: f64,
    pub deviation: f64,
    pub style_fraction_task: f64,
    pub style_fraction_self: f64,
    pub basis_k: usize,
    pub basis_energy: f64,
    pub pass: bool,
}

/// Checks that mixing scales the style component of the task gradient by
/// `1 - eps`, up to the style mass the self gradient contributes.
pub fn attenuation_check<F: Scalar>(
    g_task: &ParamVector<F>,
    g_self: &ParamVector<F>,
    basis: &StyleBasis<F>,
    eps: f64,
) -> Result<AttenuationReport> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("epsilon must lie in [0, 1], got {eps}")));
    }
    if g_task.len() != g_self.len() {
        return Err(Error::LengthMismatch {
            left: g_task.len(),
            right: g_self.len(),
        });
    }
    let pt = project(basis, g_task)?;
    let pt_norm = pt.style.norm().f64();
    if pt_norm == 0.0 {
        return Err(Error::Degenerate("task gradient has no style component".into()));
    }
    let g_mix = g_task.scale(F::of(1.0 - eps)).add(&g_self.scale(F::of(eps)))?;
    let pm = project(basis, &g_mix)?;
    let (ps_norm, frac_self) = if g_self.norm_sq() == F::zero() {
        (0.0, 0.0)
    } else {
        let ps = project(basis, g_self)?;
        (ps.style.norm().f64(), ps.style_fraction.f64())
    };
    let ratio = pm.style.norm().f64() / pt_norm;
    let predicted = 1.0 - eps;
    let residual_budget = eps * ps_norm / pt_norm;
    let deviation = (ratio - predicted).abs();
    Ok(AttenuationReport {
        epsilon: eps,
        ratio,
        predicted,
        residual_budget,
        deviation,
        style_fraction_task: pt.style_fraction.f64(),
        style_fraction_self: frac_self,
        basis_k: basis.k(),
        basis_energy: basis.energy,
        pass: deviation <= residual_budget + 1e-9,
    })
}
