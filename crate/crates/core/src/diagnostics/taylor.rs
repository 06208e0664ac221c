use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::scalar::Scalar;
use crate::trainer::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LipschitzConfig {
    pub probes: usize,
    pub radius: f64,
    pub safety_factor: f64,
    pub seed: u64,
    /// Power-iteration refinements of the best random probe. Each iterate is
    /// itself a probe direction, `u <- (grad R(w + r u) - grad R(w)) / |.|`,
    /// which climbs toward the sharpest curvature direction that random
    /// directions in high dimension almost never hit.
    pub power_iterations: usize,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        LipschitzConfig {
            probes: 16,
            radius: 1e-3,
            safety_factor: 2.0,
            seed: 0,
            power_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// `safety_factor * raw`.
    pub value: f64,
    /// Largest probed `|grad R(w + r u) - grad R(w)| / r`.
    pub raw: f64,
    pub probes: usize,
    pub power_iterations: usize,
    /// Extra caller-supplied directions probed on top of the random ones.
    pub extra_directions: usize,
    pub radius: f64,
    pub safety_factor: f64,
    pub seed: u64,
}

/// Finite-difference estimate of the local gradient-Lipschitz constant.
///
/// Probe `i` uses a unit Gaussian direction drawn from stream `i` of the
/// seeded generator; the best one is then refined by power iteration on the
/// finite-difference Hessian-vector product. Any `extra` directions
/// (normalized here) are probed as well. Every ratio is a lower bound on the
/// local constant, so the estimate only grows with more probes.
pub fn lipschitz_estimate<F: Scalar, O: Objective<F> + ?Sized>(
    objective: &O,
    omega: &ParamVector<F>,
    cfg: &LipschitzConfig,
    extra: &[ParamVector<F>],
) -> Result<LipschitzEstimate> {
    if cfg.probes < 8 {
        return Err(Error::Config(format!("need at least 8 probes, got {}", cfg.probes)));
    }
    if !(cfg.radius > 0.0 && cfg.radius.is_finite()) {
        return Err(Error::Config(format!("probe radius must be positive, got {}", cfg.radius)));
    }
    if !(cfg.safety_factor >= 1.0) {
        return Err(Error::Config(format!(
            "safety factor must be at least 1, got {}",
            cfg.safety_factor
        )));
    }
    let g0 = objective.grad(omega)?;
    let mut dirs: Vec<Vec<f64>> = (0..cfg.probes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            (0..omega.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect();
    for e in extra {
        if e.len() != omega.len() {
            return Err(Error::LengthMismatch {
                left: omega.len(),
                right: e.len(),
            });
        }
        if e.norm_sq() > F::zero() {
            dirs.push(e.values.iter().map(|x| x.f64()).collect());
        }
    }
    let probe = |d: &[f64]| -> Result<(f64, Vec<f64>)> {
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut w = omega.clone();
        for (wi, di) in w.values.iter_mut().zip(d) {
            *wi += F::of(cfg.radius * di / n);
        }
        let g = objective.grad(&w)?;
        if !g.is_finite() {
            return Err(Error::Diverged {
                step: 0,
                loss: f64::NAN,
            });
        }
        let diff: Vec<f64> = g.values.iter().zip(&g0.values).map(|(a, b)| (*a - *b).f64()).collect();
        let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok((norm / cfg.radius, diff))
    };
    let results = dirs.par_iter().map(|d| probe(d)).collect::<Result<Vec<_>>>()?;
    let mut ratios: Vec<f64> = results.iter().map(|r| r.0).collect();
    let best = (0..cfg.probes)
        .max_by(|&a, &b| ratios[a].total_cmp(&ratios[b]).then(b.cmp(&a)))
        .expect("at least 8 probes");
    let mut dir = results[best].1.clone();
    for _ in 0..cfg.power_iterations {
        if dir.iter().all(|x| *x == 0.0) {
            break;
        }
        let (ratio, next) = probe(&dir)?;
        ratios.push(ratio);
        dir = next;
    }
    let raw = ratios.into_iter().fold(0.0, f64::max);
    Ok(LipschitzEstimate {
        value: cfg.safety_factor * raw,
        raw,
        probes: cfg.probes,
        power_iterations: cfg.power_iterations,
        extra_directions: extra.len(),
        radius: cfg.radius,
        safety_factor: cfg.safety_factor,
        seed: cfg.seed,
    })
}

/// One step of the first-order audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorRecord {
    pub step: usize,
    /// `R(w_{t+1}) - R(w_t)`.
    pub d_r: f64,
    /// `<grad R(w_t), w_{t+1} - w_t>`.
    pub first_order: f64,
    /// `d_r - first_order`.
    pub remainder: f64,
    /// `(L / 2) |w_{t+1} - w_t|^2`.
    pub bound: f64,
    pub step_norm: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub step: usize,
    /// `|grad R(w_t) - grad R(w_0)|`.
    pub actual: f64,
    /// `sum_{j<t} |w_{j+1} - w_j|`, which equals `eta sum_{j<t} |g_j|` for SGD.
    pub path_length: f64,
    /// `L * path_length`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    pub satisfied: bool,
}

/// Whole-window comparison of the forgetting with its linear prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulativeReport {
    /// `R(w_T) - R(w_0)`.
    pub delta_forget: f64,
    /// `<grad R(w_0), w_T - w_0>`.
    pub linear_prediction: f64,
    pub total_remainder: f64,
    pub sum_first_order: f64,
    pub sum_remainders: f64,
    /// `sum_t |w_{t+1} - w_t|^2`.
    pub sum_sq_steps: f64,
    /// `|total_remainder| / sum_sq_steps`; the empirical constant in place of
    /// the unspecified absolute one.
    pub remainder_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub records: Vec<TaylorRecord>,
    pub drift: DriftReport,
    pub cumulative: CumulativeReport,
    pub lipschitz: LipschitzEstimate,
    /// Fraction of records with `|remainder| <= bound`.
    pub bound_pass_fraction: f64,
}

impl AuditReport {
    pub fn median_abs_remainder(&self) -> f64 {
        let mut v: Vec<f64> = self.records.iter().map(|r| r.remainder.abs()).collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn violations(&self) -> Vec<usize> {
        self.records.iter().filter(|r| !r.pass).map(|r| r.step).collect()
    }
}

/// Per-step Taylor audit of `objective` along a trajectory recorded at every
/// step, plus the gradient drift check and the cumulative report.
pub fn first_order_audit<F: Scalar, O: Objective<F> + ?Sized>(
    objective: &O,
    traj: &Trajectory<F>,
    lipschitz: &LipschitzEstimate,
) -> Result<AuditReport> {
    if traj.snapshots.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let start = traj.snapshots[0].step;
    if traj.snapshots.iter().enumerate().any(|(i, s)| s.step != start + i) {
        return Err(Error::Config("audit needs a snapshot at every step".into()));
    }
    let evals = traj
        .snapshots
        .par_iter()
        .map(|s| objective.value_grad(&s.params))
        .collect::<Result<Vec<_>>>()?;
    let l = lipschitz.value;
    let mut records = Vec::with_capacity(evals.len().saturating_sub(1));
    let mut rows = vec![DriftRow {
        step: start,
        actual: 0.0,
        path_length: 0.0,
        bound: 0.0,
        pass: true,
    }];
    let mut path = 0.0;
    let mut sum_fo = 0.0;
    let mut sum_rem = 0.0;
    let mut sum_sq = 0.0;
    for t in 0..evals.len() - 1 {
        let (r0, g) = (&evals[t].0, &evals[t].1);
        let r1 = evals[t + 1].0;
        let dw = traj.snapshots[t + 1].params.sub(&traj.snapshots[t].params)?;
        let d_r = (r1 - *r0).f64();
        let first_order = g.dot(&dw)?.f64();
        let remainder = d_r - first_order;
        let sq = dw.norm_sq().f64();
        let bound = 0.5 * l * sq;
        records.push(TaylorRecord {
            step: start + t,
            d_r,
            first_order,
            remainder,
            bound,
            step_norm: sq.sqrt(),
            pass: remainder.abs() <= bound,
        });
        sum_fo += first_order;
        sum_rem += remainder;
        sum_sq += sq;
        path += sq.sqrt();
        let actual = evals[t + 1].1.sub(&evals[0].1)?.norm().f64();
        rows.push(DriftRow {
            step: start + t + 1,
            actual,
            path_length: path,
            bound: l * path,
            pass: actual <= l * path,
        });
    }
    let last = evals.len() - 1;
    let delta_forget = (evals[last].0 - evals[0].0).f64();
    let total = traj.snapshots[last].params.sub(&traj.snapshots[0].params)?;
    let linear_prediction = evals[0].1.dot(&total)?.f64();
    let total_remainder = delta_forget - linear_prediction;
    let passed = records.iter().filter(|r| r.pass).count();
    let bound_pass_fraction = if records.is_empty() {
        1.0
    } else {
        passed as f64 / records.len() as f64
    };
    Ok(AuditReport {
        drift: DriftReport {
            satisfied: rows.iter().all(|r| r.pass),
            rows,
        },
        cumulative: CumulativeReport {
            delta_forget,
            linear_prediction,
            total_remainder,
            sum_first_order: sum_fo,
            sum_remainders: sum_rem,
            sum_sq_steps: sum_sq,
            remainder_ratio: if sum_sq > 0.0 { total_remainder.abs() / sum_sq } else { 0.0 },
        },
        records,
        lipschitz: lipschitz.clone(),
        bound_pass_fraction,
    })
}

/// Remainder medians for the recorded steps and for the same steps rescaled
/// by `factor` from the same iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScalingReport {
    pub factor: f64,
    pub median_full: f64,
    pub median_scaled: f64,
    /// `median_full / median_scaled`; about `1 / factor^2` when the
    /// remainder is second order in the step.
    pub ratio: f64,
}

/// Re-takes every recorded step from its own iterate with the step scaled by
/// `factor` (for plain SGD, `w_t - factor * eta * g_t`) and compares Taylor
/// remainders. Holding the iterate fixed isolates the step-size dependence
/// from the change of path a full rerun would bring.
pub fn step_scaling<F: Scalar, O: Objective<F> + ?Sized>(
    objective: &O,
    traj: &Trajectory<F>,
    factor: f64,
) -> Result<StepScalingReport> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::Config(format!("step factor must lie in (0, 1), got {factor}")));
    }
    if traj.snapshots.len() < 2 {
        return Err(Error::Empty("trajectory window"));
    }
    let start = traj.snapshots[0].step;
    if traj.snapshots.iter().enumerate().any(|(i, s)| s.step != start + i) {
        return Err(Error::Config("step scaling needs a snapshot at every step".into()));
    }
    let pairs = traj
        .snapshots
        .par_windows(2)
        .map(|w| {
            let (a, b) = (&w[0].params, &w[1].params);
            let dw = b.sub(a)?;
            let (r0, g) = objective.value_grad(a)?;
            let full = (objective.value(b)? - r0).f64() - g.dot(&dw)?.f64();
            let half = a.axpy(F::one(), &dw.scale(F::of(factor)))?;
            let scaled = (objective.value(&half)? - r0).f64() - factor * g.dot(&dw)?.f64();
            Ok((full.abs(), scaled.abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let median_full = median(pairs.iter().map(|p| p.0).collect());
    let median_scaled = median(pairs.iter().map(|p| p.1).collect());
    Ok(StepScalingReport {
        factor,
        median_full,
        median_scaled,
        ratio: median_full / median_scaled,
    })
}
