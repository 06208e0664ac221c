//! Subcommands as run-directory producers. Every stage writes `config.json`
//! (a [`RunRecord`]) first; all other artifacts follow from it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sasft_core::diagnostics::{write_attenuation, write_correlation, write_drift_csv, write_schema, write_taylor_csv};
use sasft_core::trainer::RunDir;
use sasft_core::ParameterVector;
use sasft_genclient::{write_jsonl, GenClient};

use crate::config::{ExperimentConfig, Regime};
use crate::error::{io_err, CliError, Result};
use crate::lab::{AuditBundle, Lab, RegimeSummary, EVAL_NAMES};
use crate::sweep::{run_sweep, write_summary_csv, write_trend_csv, SweepReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Pretrain,
    Selfgen,
    Mix,
    Sft,
    Audit,
    Sweep,
    Fetch,
}

/// Contents of a run directory's `config.json`: enough to redo the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: Command,
    pub regime: Option<Regime>,
    pub experiment: ExperimentConfig,
}

/// A config file is either a bare experiment or the record of a past run.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Option<RunRecord>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::invalid([format!("{}: {e}", path.display())]))?;
    if value.get("experiment").is_some() {
        let rec: RunRecord =
            serde_json::from_value(value).map_err(|e| CliError::invalid([format!("{}: {e}", path.display())]))?;
        Ok((rec.experiment.clone(), Some(rec)))
    } else {
        Ok((ExperimentConfig::from_value(value)?, None))
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(sasft_core::Error::from)?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

fn mkdir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

/// Pretraining inputs; a cached `omega0.bin` is reused only when these match.
#[derive(Serialize)]
struct Omega0Key<'a> {
    model: &'a sasft_core::model::ModelConfig,
    corpus: &'a crate::config::CorpusConfig,
    pretrain: &'a sasft_core::trainer::TrainConfig,
}

fn omega0_key(cfg: &ExperimentConfig) -> String {
    let key = Omega0Key {
        model: &cfg.model,
        corpus: &cfg.corpus,
        pretrain: &cfg.pretrain,
    };
    serde_json::to_string_pretty(&key).expect("key serializes") + "\n"
}

/// Loads `omega0.bin` from `out` when it was produced by the same
/// pretraining inputs, otherwise pretrains and writes it with its curve.
pub fn omega0(lab: &Lab, out: &Path) -> Result<ParameterVector> {
    let bin = out.join("omega0.bin");
    let key_path = out.join("omega0-key.json");
    let key = omega0_key(&lab.cfg);
    if bin.exists() && fs::read_to_string(&key_path).ok().as_deref() == Some(key.as_str()) {
        log::info!("reusing {}", bin.display());
        return Ok(ParameterVector::load(&bin)?);
    }
    log::info!("pretraining omega_0");
    let outcome = lab.pretrain()?;
    let mut csv = String::from("step,lr,batch_loss,eval0_nll\n");
    for p in &outcome.curve {
        csv.push_str(&format!("{},{},{},{}\n", p.step, p.lr, p.batch_loss, p.eval0_nll));
    }
    let curve = out.join("pretrain.csv");
    fs::write(&curve, csv).map_err(io_err(&curve))?;
    outcome.params.save(&bin)?;
    fs::write(&key_path, key).map_err(io_err(&key_path))?;
    log::info!("pretraining stopped after {} steps", outcome.steps_run);
    Ok(outcome.params)
}

fn begin(out: &Path, record: &RunRecord) -> Result<Lab> {
    let lab = Lab::new(record.experiment.clone())?;
    mkdir(out)?;
    write_json(&out.join("config.json"), record)?;
    Ok(lab)
}

pub fn pretrain(out: &Path, record: &RunRecord) -> Result<()> {
    let lab = begin(out, record)?;
    omega0(&lab, out)?;
    Ok(())
}

pub fn selfgen(out: &Path, record: &RunRecord) -> Result<()> {
    let lab = begin(out, record)?;
    let w0 = omega0(&lab, out)?;
    let data = mkdir(&out.join("data"))?;
    lab.self_corpus(&w0)?.write_jsonl(data.join("self.jsonl"))?;
    Ok(())
}

pub fn mix(out: &Path, record: &RunRecord) -> Result<()> {
    let lab = begin(out, record)?;
    let w0 = omega0(&lab, out)?;
    let data = mkdir(&out.join("data"))?;
    let task = lab.task()?;
    let self_data = lab.self_corpus(&w0)?;
    let lambda = record.regime.and_then(|r| r.lambda(&lab.cfg)).unwrap_or(lab.cfg.mix_lambda);
    let (mixed, manifest) = lab.mix(&task, &self_data, lambda)?;
    task.write_jsonl(data.join("task.jsonl"))?;
    self_data.write_jsonl(data.join("self.jsonl"))?;
    mixed.write_jsonl(data.join("mix.jsonl"))?;
    write_json(&data.join("mix.json"), &manifest)
}

/// Fine-tunes one regime; the run directory doubles as the snapshot store
/// (`metrics.csv`, `params-step-<t>.bin`).
pub fn sft(out: &Path, record: &RunRecord) -> Result<RegimeSummary> {
    let regime = record.regime.unwrap_or(Regime::TaskOnly);
    let lab = Lab::new(record.experiment.clone())?;
    mkdir(out)?;
    let names: Vec<String> = EVAL_NAMES.iter().map(|s| s.to_string()).collect();
    let mut run = RunDir::create(out, record, &names)?;
    let w0 = omega0(&lab, out)?;
    let task = lab.task()?;
    let self_data = match regime {
        Regime::TaskOnly => None,
        _ => Some(lab.self_corpus(&w0)?),
    };
    let (_, summary) = lab.run_regime(&w0, regime, &task, self_data.as_ref(), Some(&mut run))?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn audit(out: &Path, record: &RunRecord) -> Result<AuditBundle> {
    let lab = begin(out, record)?;
    let w0 = omega0(&lab, out)?;
    let dir = mkdir(&out.join("audit"))?;
    let bundle = lab.audit(&w0, record.regime.unwrap_or(Regime::TaskOnly))?;
    write_taylor_csv(dir.join("taylor.csv"), &bundle.taylor.records)?;
    write_drift_csv(dir.join("drift.csv"), &bundle.taylor.drift)?;
    write_attenuation(dir.join("attenuation.json"), &bundle.attenuation)?;
    write_correlation(dir.join("correlation.json"), &bundle.correlation)?;
    write_schema(dir.join("schema.json"))?;
    write_json(&dir.join("audit.json"), &AuditSummary::from(&bundle))?;
    Ok(bundle)
}

/// Scalar findings of an audit not covered by the per-step files.
#[derive(Debug, Serialize)]
struct AuditSummary<'a> {
    basis: &'a sasft_core::diagnostics::BasisSummary,
    mixture: &'a sasft_core::diagnostics::MixtureIdentityReport,
    lipschitz: &'a sasft_core::diagnostics::LipschitzEstimate,
    bound_pass_fraction: f64,
    violations: Vec<usize>,
    drift_satisfied: bool,
    cumulative: &'a sasft_core::diagnostics::CumulativeReport,
    median_abs_remainder: f64,
    scaling: &'a sasft_core::diagnostics::StepScalingReport,
}

impl<'a> From<&'a AuditBundle> for AuditSummary<'a> {
    fn from(b: &'a AuditBundle) -> Self {
        AuditSummary {
            basis: &b.basis,
            mixture: &b.mixture,
            lipschitz: &b.taylor.lipschitz,
            bound_pass_fraction: b.taylor.bound_pass_fraction,
            violations: b.taylor.violations(),
            drift_satisfied: b.taylor.drift.satisfied,
            cumulative: &b.taylor.cumulative,
            median_abs_remainder: b.taylor.median_abs_remainder(),
            scaling: &b.scaling,
        }
    }
}

pub fn sweep(out: &Path, record: &RunRecord) -> Result<SweepReport> {
    let lab = begin(out, record)?;
    let w0 = omega0(&lab, out)?;
    let dir = mkdir(&out.join("sweep"))?;
    let report = run_sweep(&lab, &w0)?;
    write_summary_csv(&dir.join("summary.csv"), &report.rows)?;
    write_trend_csv(&dir.join("trend.csv"), &report.trend)?;
    write_json(&dir.join("sweep.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct FetchSummary {
    pairs: usize,
    calls: usize,
    skipped: Vec<sasft_genclient::Skip>,
}

pub fn fetch(out: &Path, record: &RunRecord) -> Result<()> {
    let fc = record
        .experiment
        .fetch
        .clone()
        .ok_or_else(|| CliError::invalid(["fetch: section missing from config".to_string()]))?;
    record.experiment.validate()?;
    mkdir(out)?;
    write_json(&out.join("config.json"), record)?;
    let rt = tokio::runtime::Runtime::new().map_err(io_err(out))?;
    let client = GenClient::new(fc.endpoint)?;
    let outcome = rt.block_on(client.fetch_corpus(&fc.request))?;
    write_jsonl(out.join("pairs.jsonl"), &outcome.pairs)?;
    let mut log = String::new();
    for c in &outcome.calls {
        log.push_str(&serde_json::to_string(c).map_err(sasft_core::Error::from)?);
        log.push('\n');
    }
    let calls = out.join("calls.jsonl");
    fs::write(&calls, log).map_err(io_err(&calls))?;
    write_json(
        &out.join("fetch.json"),
        &FetchSummary {
            pairs: outcome.pairs.len(),
            calls: outcome.calls.len(),
            skipped: outcome.skipped,
        },
    )
}

pub fn run(out: &Path, record: &RunRecord) -> Result<()> {
    match record.command {
        Command::Pretrain => pretrain(out, record),
        Command::Selfgen => selfgen(out, record),
        Command::Mix => mix(out, record),
        Command::Sft => sft(out, record).map(|_| ()),
        Command::Audit => audit(out, record).map(|_| ()),
        Command::Sweep => sweep(out, record).map(|_| ()),
        Command::Fetch => fetch(out, record),
    }
}
