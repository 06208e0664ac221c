//! Mix-ratio sweep: one task-only baseline and one mixed run per ratio, for
//! every seed.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sasft_core::ParameterVector;

use crate::config::Regime;
use crate::error::{io_err, Result};
use crate::lab::{Lab, RegimeSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub regime: String,
    /// Mix ratio; 0 for the task-only baseline.
    pub r: f64,
    pub seed: u64,
    pub eval0_nll: f64,
    pub delta_forget: f64,
    pub eval_task_nll: f64,
    /// Share of the baseline's forgetting removed: `(F_task - F_r) / F_task`.
    pub recovery: f64,
    /// Relative in-domain NLL increase over the baseline.
    pub degradation: f64,
    pub score: f64,
}

/// Seed-averaged row per ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub r: f64,
    pub recovery: f64,
    pub degradation: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub trend: Vec<TrendRow>,
    /// Ratio with the highest mean score.
    pub best_ratio: f64,
    pub best_is_interior: bool,
}

fn row(s: &RegimeSummary, base: &RegimeSummary, regime: &str, r: f64) -> SweepRow {
    let recovery = (base.delta_forget - s.delta_forget) / base.delta_forget;
    let degradation = (s.eval_task_final - base.eval_task_final) / base.eval_task_final;
    SweepRow {
        regime: regime.into(),
        r,
        seed: s.seed,
        eval0_nll: s.eval0_final,
        delta_forget: s.delta_forget,
        eval_task_nll: s.eval_task_final,
        recovery,
        degradation,
        score: recovery - degradation,
    }
}

pub fn run_sweep(lab: &Lab, omega0: &ParameterVector) -> Result<SweepReport> {
    let ratios = lab.cfg.sweep.ratios.clone();
    let mut rows = Vec::new();
    for &seed in &lab.cfg.sweep.seeds {
        let lab = lab.reseeded(seed);
        let task = lab.task()?;
        let self_data = lab.self_corpus(omega0)?;
        let (_, base) = lab.run_regime(omega0, Regime::TaskOnly, &task, None, None)?;
        log::info!("sweep seed {seed}: task-only forgetting {:.4}", base.delta_forget);
        rows.push(row(&base, &base, "task-only", 0.0));
        for &r in &ratios {
            let (_, s) = lab.run_regime(omega0, Regime::Custom(r), &task, Some(&self_data), None)?;
            log::info!("sweep seed {seed}: r {r} forgetting {:.4}", s.delta_forget);
            rows.push(row(&s, &base, "sa-sft", r));
        }
    }
    let trend: Vec<TrendRow> = ratios
        .iter()
        .map(|&r| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|x| x.regime == "sa-sft" && x.r == r).collect();
            let mean = |f: fn(&SweepRow) -> f64| sel.iter().map(|x| f(x)).sum::<f64>() / sel.len() as f64;
            TrendRow {
                r,
                recovery: mean(|x| x.recovery),
                degradation: mean(|x| x.degradation),
                score: mean(|x| x.score),
            }
        })
        .collect();
    let best = trend
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.score.total_cmp(&b.1.score))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(SweepReport {
        best_ratio: trend[best].r,
        best_is_interior: best > 0 && best + 1 < trend.len(),
        rows,
        trend,
    })
}

/// Pairs `i < j` with `values[j] < values[i]` (Kendall discordances against
/// an increasing trend).
pub fn inversions(values: &[f64]) -> usize {
    let mut n = 0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if values[j] < values[i] {
                n += 1;
            }
        }
    }
    n
}

pub fn write_summary_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("regime,r,seed,eval0_nll,delta_forget,eval_task_nll,recovery,degradation,score\n");
    for x in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            x.regime, x.r, x.seed, x.eval0_nll, x.delta_forget, x.eval_task_nll, x.recovery, x.degradation, x.score
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn write_trend_csv(path: &Path, trend: &[TrendRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = String::from("r,recovery,degradation,score\n");
    for t in trend {
        out.push_str(&format!("{},{},{},{}\n", t.r, t.recovery, t.degradation, t.score));
    }
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_count() {
        assert_eq!(inversions(&[1.0, 2.0, 3.0]), 0);
        assert_eq!(inversions(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(inversions(&[3.0, 2.0, 1.0]), 3);
        assert_eq!(inversions(&[]), 0);
    }
}
