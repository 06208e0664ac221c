use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::basis::{project, style_basis_estimate, BasisSummary};
use super::delta_ppl;
use crate::corpus::{build_corpus, contrast_pairs, CorpusKind, StyleSpec, Vocab};
use crate::error::{Error, Result};
use crate::model::{ParamVector, Transformer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationSetup {
    pub intensities: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Task (and matching base) examples per level and seed.
    pub n_task: usize,
    pub n_pairs: usize,
    /// Intensity of the contrast pairs behind the single style basis.
    pub reference_intensity: usize,
    pub energy_threshold: f64,
    pub pair_seed: u64,
    pub context_len: usize,
}

impl Default for CorrelationSetup {
    fn default() -> Self {
        CorrelationSetup {
            intensities: vec![1, 2, 3, 4, 5, 6],
            seeds: vec![0, 1, 2],
            n_task: 256,
            n_pairs: 64,
            reference_intensity: 2,
            energy_threshold: 0.9,
            pair_seed: 0,
            context_len: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub intensity: usize,
    pub seed: u64,
    pub delta_ppl_sequence: f64,
    pub delta_ppl_per_token: f64,
    /// `|Proj_S g_task(omega_0)|`.
    pub style_projection_norm: f64,
    pub style_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    /// Spearman correlation of sequence-level gap against projection norm
    /// over all rows; `None` when undefined.
    pub spearman: Option<f64>,
    pub spearman_per_token: Option<f64>,
    /// Sequence-level gap strictly increases with intensity for every seed.
    pub gap_increasing: bool,
    pub degenerate: bool,
    pub basis: BasisSummary,
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// For each intensity and seed: the style perplexity gap of a task corpus
/// against a pretraining sample, and the style-subspace norm of the task
/// gradient at `omega_0` (one basis, estimated at the reference intensity).
/// A seed draws the same facts at every intensity.
pub fn ppl_grad_correlation<F: Scalar>(
    model: &Transformer,
    omega_0: &ParamVector<F>,
    vocab: Arc<Vocab>,
    setup: &CorrelationSetup,
) -> Result<CorrelationReport> {
    if setup.intensities.len() < 4 {
        return Err(Error::Config(format!(
            "need at least 4 intensity levels, got {}",
            setup.intensities.len()
        )));
    }
    if setup.seeds.is_empty() {
        return Err(Error::Empty("correlation seeds"));
    }
    let ctx = setup.context_len;
    let pairs = contrast_pairs(setup.n_pairs, setup.reference_intensity, setup.pair_seed, &vocab, ctx)?;
    let basis = style_basis_estimate(model, omega_0, &pairs, setup.energy_threshold)?;
    let mut rows = Vec::new();
    for &seed in &setup.seeds {
        let base = build_corpus(CorpusKind::Pretrain, setup.n_task, StyleSpec::s0(), seed, vocab.clone(), ctx)?;
        for &m in &setup.intensities {
            let task = build_corpus(CorpusKind::Task, setup.n_task, StyleSpec::s1(m), seed, vocab.clone(), ctx)?;
            let gap = delta_ppl(model, omega_0, &task, &base)?;
            let (_, g) = model.batch_grad(omega_0, &task.examples)?;
            let p = project(&basis, &g)?;
            rows.push(CorrelationRow {
                intensity: m,
                seed,
                delta_ppl_sequence: gap.sequence,
                delta_ppl_per_token: gap.per_token,
                style_projection_norm: p.style.norm().f64(),
                style_fraction: p.style_fraction.f64(),
            });
        }
    }
    let gap: Vec<f64> = rows.iter().map(|r| r.delta_ppl_sequence).collect();
    let tok: Vec<f64> = rows.iter().map(|r| r.delta_ppl_per_token).collect();
    let proj: Vec<f64> = rows.iter().map(|r| r.style_projection_norm).collect();
    let distinct = {
        let mut v = setup.intensities.clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let (rho, rho_tok) = if distinct < 2 {
        (None, None)
    } else {
        (spearman(&gap, &proj), spearman(&tok, &proj))
    };
    let gap_increasing = distinct == setup.intensities.len()
        && setup.seeds.iter().all(|&s| {
            let mut r: Vec<_> = rows.iter().filter(|r| r.seed == s).collect();
            r.sort_by_key(|r| r.intensity);
            r.windows(2).all(|w| w[1].delta_ppl_sequence > w[0].delta_ppl_sequence)
        });
    Ok(CorrelationReport {
        degenerate: rho.is_none(),
        spearman: rho,
        spearman_per_token: rho_tok,
        gap_increasing,
        rows,
        basis: (&basis).into(),
    })
}
