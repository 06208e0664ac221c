//! Pretraining (momentum SGD, cosine schedule, early stop) and the plain-SGD
//! fine-tuning loop with trajectory snapshots.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::model::{ParamVector, Transformer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Sft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub snapshot_every: usize,
    pub seed: u64,
    pub phase: Phase,
    /// Heavy-ball coefficient; pretraining only.
    pub momentum: f64,
    /// Steps between eval0 checks during pretraining.
    pub eval_every: usize,
    /// Evaluations without a new eval0 floor before pretraining stops.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            steps: 240,
            batch_size: 64,
            snapshot_every: 40,
            seed: 0,
            phase: Phase::Sft,
            momentum: 0.9,
            eval_every: 50,
            patience: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if self.steps == 0 {
            bad.push("steps must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be at least 1".to_string());
        }
        if self.snapshot_every == 0 {
            bad.push("snapshot_every must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bad.push(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.eval_every == 0 {
            bad.push("eval_every must be at least 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Mini-batch index stream. Each epoch is a fresh permutation seeded by
/// `(seed, epoch)`; batches may straddle epochs. Indices inside a batch are
/// sorted so the gradient sum order does not depend on the shuffle, and a
/// batch covering the whole set is exactly `0..n`.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = BatchStream {
            n,
            batch: batch.min(n),
            seed,
            epoch: 0,
            perm: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.perm = (0..self.n).collect();
        self.perm.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.batch == self.n {
            return (0..self.n).collect();
        }
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.n {
                self.epoch += 1;
                self.reshuffle();
            }
            let take = (self.batch - out.len()).min(self.n - self.pos);
            out.extend_from_slice(&self.perm[self.pos..self.pos + take]);
            self.pos += take;
        }
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainPoint {
    pub step: usize,
    pub lr: f64,
    pub batch_loss: f64,
    pub eval0_nll: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<F: Scalar = f64> {
    pub params: ParamVector<F>,
    pub steps_run: usize,
    pub curve: Vec<PretrainPoint>,
}

/// Trains from `init` with heavy-ball SGD and a cosine-decayed rate.
///
/// eval0 NLL is checked every `eval_every` steps; training stops once
/// `patience` consecutive checks fail to lower the running floor while the
/// current value is within 1.2x of it, or after `steps`.
pub fn pretrain<F: Scalar>(
    model: &Transformer,
    init: &ParamVector<F>,
    tcfg: &TrainConfig,
    corpus: &Dataset,
    eval0: &Dataset,
) -> Result<PretrainOutcome<F>> {
    tcfg.validate()?;
    if corpus.provenance != Provenance::Pretrain {
        return Err(Error::Config("pretraining corpus must have pretrain provenance".into()));
    }
    let mut params = init.clone();
    let mut velocity = params.zeros_like();
    let mut stream = BatchStream::new(corpus.len(), tcfg.batch_size, tcfg.seed);
    let mut curve = Vec::new();
    let first = model.mean_loss(&params, &eval0.examples)?.f64();
    curve.push(PretrainPoint {
        step: 0,
        lr: tcfg.lr,
        batch_loss: f64::NAN,
        eval0_nll: first,
    });
    let mut floor = first;
    let mut stale = 0usize;
    let mut recent = 0.0;
    let mut recent_n = 0usize;
    let mu = F::of(tcfg.momentum);
    for step in 0..tcfg.steps {
        let lr = 0.5 * tcfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / tcfg.steps as f64).cos());
        let idx = stream.next_batch();
        let batch: Vec<_> = idx.iter().map(|&i| corpus.examples[i].clone()).collect();
        let (loss, grad) = model.batch_grad(&params, &batch)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: loss.f64(),
            });
        }
        recent += loss.f64();
        recent_n += 1;
        let lr_f = F::of(lr);
        for ((w, v), &g) in params.values.iter_mut().zip(&mut velocity.values).zip(&grad.values) {
            *v = mu * *v + g;
            *w -= lr_f * *v;
        }
        let done = step + 1;
        if done % tcfg.eval_every == 0 || done == tcfg.steps {
            let e = model.mean_loss(&params, &eval0.examples)?.f64();
            if !e.is_finite() {
                return Err(Error::Diverged { step, loss: e });
            }
            curve.push(PretrainPoint {
                step: done,
                lr,
                batch_loss: recent / recent_n as f64,
                eval0_nll: e,
            });
            recent = 0.0;
            recent_n = 0;
            if e < floor * (1.0 - 1e-3) {
                floor = e;
                stale = 0;
            } else {
                floor = floor.min(e);
                stale += 1;
            }
            if stale >= tcfg.patience && e <= 1.2 * floor {
                return Ok(PretrainOutcome {
                    params,
                    steps_run: done,
                    curve,
                });
            }
        }
    }
    Ok(PretrainOutcome {
        params,
        steps_run: tcfg.steps,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<F: Scalar = f64> {
    pub step: usize,
    pub params: ParamVector<F>,
    pub train_nll: F,
    pub eval_nll: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F: Scalar = f64> {
    pub snapshots: Vec<Snapshot<F>>,
    pub config: TrainConfig,
    pub eval_names: Vec<String>,
}

impl<F: Scalar> Trajectory<F> {
    pub fn first(&self) -> &Snapshot<F> {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Snapshot<F> {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    /// Per-snapshot NLL on the named eval set.
    pub fn eval_curve(&self, name: &str) -> Option<Vec<(usize, F)>> {
        let k = self.eval_names.iter().position(|n| n == name)?;
        Some(self.snapshots.iter().map(|s| (s.step, s.eval_nll[k])).collect())
    }

    /// True when the snapshots cover every step `0..=T`.
    pub fn is_contiguous(&self) -> bool {
        self.snapshots.iter().enumerate().all(|(i, s)| s.step == i)
    }
}

/// Receives each snapshot as it is recorded.
pub trait SnapshotSink<F: Scalar> {
    fn record(&mut self, snapshot: &Snapshot<F>) -> Result<()>;
}

/// Plain SGD, `w <- w - lr * g(w)`, on epoch-shuffled mini-batches of the
/// full training set. Snapshots (parameters, full-set train NLL, every eval
/// NLL) at step 0, every `snapshot_every` steps and at step `steps`.
pub fn sft<F: Scalar>(
    model: &Transformer,
    omega0: &ParamVector<F>,
    data: &Dataset,
    tcfg: &TrainConfig,
    eval_sets: &[&Dataset],
    mut sink: Option<&mut dyn SnapshotSink<F>>,
) -> Result<Trajectory<F>> {
    tcfg.validate()?;
    if tcfg.phase != Phase::Sft {
        return Err(Error::Config("sft requires phase = sft".into()));
    }
    if !matches!(data.provenance, Provenance::Task | Provenance::Mix) {
        return Err(Error::Config(format!(
            "sft data must be task or mix, got {:?}",
            data.provenance
        )));
    }
    let snap = |step: usize, params: &ParamVector<F>| -> Result<Snapshot<F>> {
        let train_nll = model.mean_loss(params, &data.examples)?;
        let eval_nll = eval_sets
            .iter()
            .map(|d| model.mean_loss(params, &d.examples))
            .collect::<Result<Vec<_>>>()?;
        Ok(Snapshot {
            step,
            params: params.clone(),
            train_nll,
            eval_nll,
        })
    };
    let mut snapshots = Vec::new();
    let mut push = |s: Snapshot<F>, snaps: &mut Vec<Snapshot<F>>| -> Result<()> {
        if let Some(sink) = sink.as_deref_mut() {
            sink.record(&s)?;
        }
        snaps.push(s);
        Ok(())
    };

    let mut params = omega0.clone();
    push(snap(0, &params)?, &mut snapshots)?;
    let mut stream = BatchStream::new(data.len(), tcfg.batch_size, tcfg.seed);
    let lr = F::of(tcfg.lr);
    for step in 0..tcfg.steps {
        let idx = stream.next_batch();
        let (loss, grad) = if idx.len() == data.len() {
            model.batch_grad(&params, &data.examples)?
        } else {
            let batch: Vec<_> = idx.iter().map(|&i| data.examples[i].clone()).collect();
            model.batch_grad(&params, &batch)?
        };
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: loss.f64(),
            });
        }
        for (w, &g) in params.values.iter_mut().zip(&grad.values) {
            *w -= lr * g;
        }
        let done = step + 1;
        if done % tcfg.snapshot_every == 0 || done == tcfg.steps {
            push(snap(done, &params)?, &mut snapshots)?;
        }
    }
    Ok(Trajectory {
        snapshots,
        config: tcfg.clone(),
        eval_names: eval_sets.iter().map(|d| d.name.clone()).collect(),
    })
}

/// Run directory: `config.json`, `params-step-<t>.bin` and an append-only
/// `metrics.csv` with `step,train_nll,<eval>_nll,...`.
pub struct RunDir {
    root: PathBuf,
    metrics: File,
}

impl RunDir {
    pub fn create(root: impl AsRef<Path>, config: &impl Serialize, eval_names: &[String]) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut cfg = serde_json::to_string_pretty(config)?;
        cfg.push('\n');
        fs::write(root.join("config.json"), cfg)?;
        let mut header = String::from("step,train_nll");
        for n in eval_names {
            header.push(',');
            header.push_str(n);
            header.push_str("_nll");
        }
        header.push('\n');
        fs::write(root.join("metrics.csv"), header)?;
        let metrics = OpenOptions::new().append(true).open(root.join("metrics.csv"))?;
        Ok(RunDir { root, metrics })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn params_path(root: &Path, step: usize) -> PathBuf {
        root.join(format!("params-step-{step}.bin"))
    }
}

impl<F: Scalar> SnapshotSink<F> for RunDir {
    fn record(&mut self, s: &Snapshot<F>) -> Result<()> {
        s.params.save(Self::params_path(&self.root, s.step))?;
        let mut line = format!("{},{}", s.step, s.train_nll.f64());
        for e in &s.eval_nll {
            line.push_str(&format!(",{}", e.f64()));
        }
        line.push('\n');
        self.metrics.write_all(line.as_bytes())?;
        self.metrics.flush()?;
        Ok(())
    }
}
