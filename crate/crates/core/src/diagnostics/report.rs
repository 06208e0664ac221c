use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::checks::AttenuationReport;
use super::correlation::CorrelationReport;
use super::taylor::{DriftReport, TaylorRecord};
use crate::error::Result;

pub fn write_taylor_csv(path: impl AsRef<Path>, records: &[TaylorRecord]) -> Result<()> {
    let mut s = String::from("step,dR,first_order,remainder,bound,pass\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step, r.d_r, r.first_order, r.remainder, r.bound, r.pass
        );
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_drift_csv(path: impl AsRef<Path>, drift: &DriftReport) -> Result<()> {
    let mut s = String::from("step,actual,path_length,bound,pass\n");
    for r in &drift.rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, r.actual, r.path_length, r.bound, r.pass);
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn write_attenuation(path: impl AsRef<Path>, report: &AttenuationReport) -> Result<()> {
    write_json(path, report)
}

pub fn write_correlation(path: impl AsRef<Path>, report: &CorrelationReport) -> Result<()> {
    write_json(path, report)
}

const SCHEMA: &str = r#"{
  "taylor.csv": {
    "step": "index t of the step from w_t to w_{t+1}",
    "dR": "R(w_{t+1}) - R(w_t), nats per target token on the pretraining eval set",
    "first_order": "<grad R(w_t), w_{t+1} - w_t>",
    "remainder": "dR - first_order",
    "bound": "(L/2) * |w_{t+1} - w_t|^2 with L the safety-scaled smoothness estimate",
    "pass": "|remainder| <= bound"
  },
  "drift.csv": {
    "step": "snapshot index t",
    "actual": "|grad R(w_t) - grad R(w_0)|",
    "path_length": "sum over j < t of |w_{j+1} - w_j| (= eta * sum |g_j| for SGD)",
    "bound": "L * path_length",
    "pass": "actual <= bound"
  },
  "attenuation.json": {
    "epsilon": "self weight lambda / (1 + lambda)",
    "ratio": "|P g_mix| / |P g_task|, P the projection onto the style basis",
    "predicted": "1 - epsilon",
    "residual_budget": "epsilon * |P g_self| / |P g_task|",
    "deviation": "|ratio - predicted|",
    "style_fraction_task": "|P g_task|^2 / |g_task|^2",
    "style_fraction_self": "|P g_self|^2 / |g_self|^2",
    "basis_k": "number of basis columns",
    "basis_energy": "captured fraction of squared singular values",
    "pass": "deviation <= residual_budget + 1e-9"
  },
  "correlation.json": {
    "rows": "one entry per (intensity, seed): delta_ppl_sequence, delta_ppl_per_token, style_projection_norm, style_fraction",
    "spearman": "rank correlation of delta_ppl_sequence against style_projection_norm, null if undefined",
    "spearman_per_token": "same with the per-token gap",
    "gap_increasing": "delta_ppl_sequence strictly increases with intensity for every seed",
    "degenerate": "true when the correlation is undefined",
    "basis": "k, energy, threshold, reference intensity and singular values of the style basis"
  }
}
"#;

/// Column documentation for the audit outputs.
pub fn write_schema(path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, SCHEMA)?;
    Ok(())
}
