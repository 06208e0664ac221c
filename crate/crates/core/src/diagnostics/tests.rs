use std::sync::Arc;

use super::*;
use crate::corpus::{build_corpus, build_vocab, contrast_pairs_with, CorpusKind, Provenance, StyleSpec};
use crate::model::{Layout, ModelConfig};
use crate::trainer::{Snapshot, TrainConfig, Trajectory};

fn flat(values: Vec<f64>) -> ParamVector {
    let l = Arc::new(Layout::flat(values.len()));
    ParamVector::from_values(values, l).unwrap()
}

/// `R(w) = 1/2 w^T A w` with symmetric `A`.
struct Quadratic {
    a: Vec<Vec<f64>>,
}

impl Quadratic {
    fn apply(&self, w: &[f64]) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().zip(w).map(|(x, y)| x * y).sum()).collect()
    }
}

impl Objective for Quadratic {
    fn value(&self, w: &ParamVector) -> Result<f64> {
        Ok(0.5 * dot_f(&w.values, &self.apply(&w.values)))
    }
    fn value_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        let g = self.apply(&w.values);
        Ok((0.5 * dot_f(&w.values, &g), flat(g)))
    }
}

struct Constant;

impl Objective for Constant {
    fn value(&self, _: &ParamVector) -> Result<f64> {
        Ok(1.5)
    }
    fn value_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        Ok((1.5, w.zeros_like()))
    }
}

fn dot_f(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric matrix with eigenvalues `eig` in a fixed rotated basis.
fn spd(eig: &[f64]) -> Vec<Vec<f64>> {
    let n = eig.len();
    let q = nalgebra::DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin() + if i == j { 2.0 } else { 0.0 })
        .qr()
        .q();
    let d = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eig));
    let a = &q * d * q.transpose();
    (0..n).map(|i| (0..n).map(|j| 0.5 * (a[(i, j)] + a[(j, i)])).collect()).collect()
}

fn gd_trajectory(obj: &Quadratic, w0: Vec<f64>, eta: f64, steps: usize) -> Trajectory<f64> {
    let mut w = flat(w0);
    let mut snaps = vec![];
    for t in 0..=steps {
        snaps.push(Snapshot {
            step: t,
            params: w.clone(),
            train_nll: obj.value(&w).unwrap(),
            eval_nll: vec![],
        });
        let g = obj.grad(&w).unwrap();
        w.add_scaled(-eta, &g).unwrap();
    }
    Trajectory {
        snapshots: snaps,
        config: TrainConfig {
            lr: eta,
            steps,
            snapshot_every: 1,
            ..TrainConfig::default()
        },
        eval_names: vec![],
    }
}

fn lcg(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

struct Setup {
    model: Transformer,
    params: ParamVector,
    vocab: Arc<crate::corpus::Vocab>,
}

fn setup() -> Setup {
    let model = Transformer::new(ModelConfig {
        init_scale: 0.3,
        seed: 4,
        ..ModelConfig::default()
    })
    .unwrap();
    let params = model.init_params();
    Setup {
        model,
        params,
        vocab: Arc::new(build_vocab(3)),
    }
}

#[test]
fn risk_basic_properties() {
    let s = setup();
    let ev = build_corpus(CorpusKind::Eval0, 12, StyleSpec::s0(), 1, s.vocab.clone(), 32).unwrap();
    let r = risk(&s.model, &s.params, &ev).unwrap();
    let mut doubled = ev.clone();
    doubled.examples.extend(ev.examples.clone());
    assert!((risk(&s.model, &s.params, &doubled).unwrap() - r).abs() < 1e-13);

    let dir = tempfile::tempdir().unwrap();
    s.params.save(dir.path().join("w.bin")).unwrap();
    let back = ParamVector::<f64>::load(dir.path().join("w.bin")).unwrap();
    assert_eq!(risk(&s.model, &back, &ev).unwrap(), r);

    let flat_model = Transformer::new(ModelConfig {
        init_scale: 0.0,
        ..ModelConfig::default()
    })
    .unwrap();
    let w: ParamVector = flat_model.init_params();
    assert!((risk(&flat_model, &w, &ev).unwrap() - 40f64.ln()).abs() < 1e-12);
}

#[test]
fn delta_forget_identities() {
    let s = setup();
    let ev = build_corpus(CorpusKind::Eval0, 6, StyleSpec::s0(), 1, s.vocab.clone(), 32).unwrap();
    assert_eq!(delta_forget(&s.model, &s.params, &s.params, &ev).unwrap(), 0.0);
    let other = s.params.scale(0.9);
    let a = delta_forget(&s.model, &other, &s.params, &ev).unwrap();
    let b = delta_forget(&s.model, &s.params, &other, &ev).unwrap();
    assert_eq!(a, -b);
    let short = flat(vec![0.0; 3]);
    assert!(matches!(
        delta_forget(&s.model, &short, &s.params, &ev),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn delta_ppl_of_identical_sets_is_zero() {
    let s = setup();
    let task = build_corpus(CorpusKind::Task, 20, StyleSpec::s1(2), 1, s.vocab.clone(), 32).unwrap();
    let gap = delta_ppl(&s.model, &s.params, &task, &task).unwrap();
    assert_eq!(gap.sequence, 0.0);
    assert_eq!(gap.per_token, 0.0);
    let base = build_corpus(CorpusKind::Pretrain, 20, StyleSpec::s0(), 1, s.vocab.clone(), 32).unwrap();
    let gap = delta_ppl(&s.model, &s.params, &task, &base).unwrap();
    assert!((gap.sequence - (gap.task_sequence - gap.base_sequence)).abs() < 1e-12);
}

#[test]
fn identical_styles_give_degenerate_basis() {
    let s = setup();
    let pairs = contrast_pairs_with(8, StyleSpec::s1(2), StyleSpec::s1(2), 0, &s.vocab, 32).unwrap();
    assert!(matches!(
        style_basis_estimate(&s.model, &s.params, &pairs, 0.9),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn single_difference_is_normalized() {
    let d = flat(vec![3.0, 0.0, -4.0, 0.0]);
    let b = style_basis_from_differences(&[d], 0.9).unwrap();
    assert_eq!(b.k(), 1);
    let u = &b.columns[0].values;
    for (x, y) in u.iter().zip([0.6, 0.0, -0.8, 0.0]) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn basis_is_orthonormal_and_meets_energy() {
    for seed in 0..5 {
        let diffs: Vec<_> = (0..6).map(|i| flat(lcg(seed * 10 + i, 50))).collect();
        // A dependent column must not break anything.
        let mut all = diffs.clone();
        all.push(diffs[0].axpy(2.0, &diffs[1]).unwrap());
        for thr in [0.5, 0.9, 1.0] {
            let b = style_basis_from_differences(&all, thr).unwrap();
            assert!(b.orthonormality_error() <= 1e-10);
            assert!(b.energy >= thr - 1e-12);
            assert!(b.k() >= 1 && b.k() <= 6);
            if thr == 1.0 {
                assert_eq!(b.k(), 6);
                // Every input lies in the span.
                for d in &all {
                    let p = project(&b, d).unwrap();
                    assert!(p.semantic.norm() <= 1e-10 * d.norm());
                }
            }
        }
    }
}

#[test]
fn model_basis_is_orthonormal() {
    let s = setup();
    let pairs = crate::corpus::contrast_pairs(12, 2, 5, &s.vocab, 32).unwrap();
    let b = style_basis_estimate(&s.model, &s.params, &pairs, 0.9).unwrap();
    assert!(b.orthonormality_error() <= 1e-10);
    assert!(b.energy >= 0.9);
    assert_eq!(b.intensity, Some(2));
    // Re-orthogonalizing an orthonormal set must leave it unchanged.
    let again = style_basis_from_differences(&b.columns, 1.0).unwrap();
    assert_eq!(again.k(), b.k());
    for c in &b.columns {
        let p = project(&again, c).unwrap();
        assert!((p.style_fraction - 1.0).abs() < 1e-10);
    }
}

#[test]
fn projection_decomposes_exactly() {
    let diffs: Vec<_> = (0..3).map(|i| flat(lcg(100 + i, 30))).collect();
    let b = style_basis_from_differences(&diffs, 1.0).unwrap();
    let inside = diffs[0].axpy(0.5, &diffs[2]).unwrap();
    let p = project(&b, &inside).unwrap();
    assert!((p.style_fraction - 1.0).abs() < 1e-12);
    assert!(p.semantic.norm() < 1e-12 * inside.norm());

    let mut outside = flat(lcg(7, 30));
    for u in &b.columns {
        let c = u.dot(&outside).unwrap();
        outside.add_scaled(-c, u).unwrap();
    }
    assert!(project(&b, &outside).unwrap().style_fraction <= 1e-10);

    for seed in 0..20 {
        let v = flat(lcg(seed + 500, 30));
        let p = project(&b, &v).unwrap();
        let recon = p.style.add(&p.semantic).unwrap();
        assert!(recon.sub(&v).unwrap().norm() <= 1e-12 * v.norm());
        let vv = v.norm_sq();
        assert!((p.style.norm_sq() + p.semantic.norm_sq() - vv).abs() <= 1e-10 * vv);
        assert!(p.style.dot(&p.semantic).unwrap().abs() <= 1e-10 * vv);
    }
    assert!(project(&b, &flat(vec![0.0; 30])).is_err());
    assert!(project(&b, &flat(vec![1.0; 3])).is_err());
}

fn self_like(s: &Setup, n: usize) -> Dataset {
    let mut d = build_corpus(CorpusKind::Pretrain, n, StyleSpec::s0(), 9, s.vocab.clone(), 32).unwrap();
    d.provenance = Provenance::SelfGen;
    d.name = "self".into();
    d
}

#[test]
fn mixture_identity_holds() {
    let s = setup();
    let task = build_corpus(CorpusKind::Task, 20, StyleSpec::s1(2), 1, s.vocab.clone(), 32).unwrap();
    let selfd = self_like(&s, 60);
    for lambda in [1.0, 3.0] {
        let r = mixture_identity_check(&s.model, &s.params, &task, &selfd, lambda, 4).unwrap();
        assert!(r.exact);
        assert!(r.pass, "lambda {lambda}: {}", r.deviation);
        assert!(r.deviation <= 1e-12);
    }
    let r = mixture_identity_check(&s.model, &s.params, &task, &selfd, 0.33, 4).unwrap();
    assert!(!r.exact);
    assert_eq!(r.tolerance, 1e-9);
    assert!(r.pass);
}

#[test]
fn mixture_of_equal_sets_is_the_task_gradient() {
    let s = setup();
    let task = build_corpus(CorpusKind::Task, 10, StyleSpec::s1(2), 1, s.vocab.clone(), 32).unwrap();
    let mut same = task.clone();
    same.provenance = Provenance::SelfGen;
    let r = mixture_identity_check(&s.model, &s.params, &task, &same, 1.0, 0).unwrap();
    assert!(r.pass);
}

#[test]
fn attenuation_is_linear() {
    let diffs: Vec<_> = (0..2).map(|i| flat(lcg(40 + i, 20))).collect();
    let b = style_basis_from_differences(&diffs, 1.0).unwrap();
    let g_task = flat(lcg(1, 20));
    let mut g_self = flat(lcg(2, 20));
    for u in &b.columns {
        let c = u.dot(&g_self).unwrap();
        g_self.add_scaled(-c, u).unwrap();
    }
    let r = attenuation_check(&g_task, &g_self, &b, 0.5).unwrap();
    assert!((r.ratio - 0.5).abs() < 1e-12);
    assert!(r.pass);
    let r0 = attenuation_check(&g_task, &flat(lcg(3, 20)), &b, 0.0).unwrap();
    assert!((r0.ratio - 1.0).abs() < 1e-15);
    let r = attenuation_check(&g_task, &flat(lcg(3, 20)), &b, 0.3).unwrap();
    assert!(r.pass, "{r:?}");
    let zero = flat(vec![0.0; 20]);
    assert!(attenuation_check(&zero, &g_task, &b, 0.5).is_err());
}

#[test]
fn lipschitz_on_quadratic_respects_top_eigenvalue() {
    let eig = [4.0, 2.5, 1.0, 0.5, 0.1];
    let obj = Quadratic { a: spd(&eig) };
    let w = flat(vec![0.3, -0.2, 0.1, 0.0, 0.5]);
    let random_only = |probes| LipschitzConfig {
        probes,
        power_iterations: 0,
        ..LipschitzConfig::default()
    };
    let few = lipschitz_estimate(&obj, &w, &random_only(16), &[]).unwrap();
    assert!(few.raw <= 4.0 * (1.0 + 1e-9));
    assert_eq!(few.value, 2.0 * few.raw);
    let many = lipschitz_estimate(&obj, &w, &random_only(2000), &[]).unwrap();
    assert!(many.raw >= few.raw);
    assert!(many.raw <= 4.0 * (1.0 + 1e-9) && many.raw >= 0.9 * 4.0, "{}", many.raw);
    let refined = lipschitz_estimate(&obj, &w, &LipschitzConfig::default(), &[]).unwrap();
    assert!(refined.raw <= 4.0 * (1.0 + 1e-9) && refined.raw >= 4.0 * (1.0 - 1e-6), "{}", refined.raw);
    let a = lipschitz_estimate(&obj, &w, &LipschitzConfig { radius: 1e-3, ..Default::default() }, &[]).unwrap();
    let b = lipschitz_estimate(&obj, &w, &LipschitzConfig { radius: 1e-4, ..Default::default() }, &[]).unwrap();
    assert!((a.raw - b.raw).abs() <= 0.1 * a.raw);
    let c = lipschitz_estimate(&Constant, &w, &LipschitzConfig::default(), &[]).unwrap();
    assert_eq!(c.value, 0.0);
    assert!(lipschitz_estimate(&obj, &w, &LipschitzConfig { probes: 7, ..Default::default() }, &[]).is_err());
    assert!(lipschitz_estimate(&obj, &w, &LipschitzConfig { radius: 0.0, ..Default::default() }, &[]).is_err());
}

#[test]
fn lipschitz_on_model_is_radius_stable() {
    let s = setup();
    let ev = build_corpus(CorpusKind::Eval0, 8, StyleSpec::s0(), 1, s.vocab.clone(), 32).unwrap();
    let obj = DatasetRisk::new(&s.model, &ev);
    let est = |r| {
        lipschitz_estimate(&obj, &s.params, &LipschitzConfig { radius: r, probes: 8, ..Default::default() }, &[])
            .unwrap()
            .raw
    };
    let (a, b) = (est(1e-3), est(1e-4));
    assert!(a > 0.0);
    assert!((a - b).abs() <= 0.1 * a, "{a} vs {b}");
}

#[test]
fn audit_matches_quadratic_remainder() {
    let obj = Quadratic { a: spd(&[3.0, 1.0, 0.2]) };
    let w0 = vec![1.0, -0.5, 0.25];
    let eta = 0.1;
    let traj = gd_trajectory(&obj, w0.clone(), eta, 1);
    let lip = lipschitz_estimate(&obj, &traj.first().params, &LipschitzConfig::default(), &[]).unwrap();
    let rep = first_order_audit(&obj, &traj, &lip).unwrap();
    let g = obj.apply(&w0);
    let ag = obj.apply(&g);
    let expected = 0.5 * eta * eta * dot_f(&g, &ag);
    let r = rep.records[0];
    assert!((r.remainder - expected).abs() <= 1e-14 * expected.abs().max(1.0));
    assert!((r.first_order - (-eta * dot_f(&g, &g))).abs() < 1e-14);
    assert_eq!(r.d_r, r.first_order + r.remainder);
}

#[test]
fn audit_of_frozen_run_is_zero() {
    let obj = Quadratic { a: spd(&[2.0, 1.0]) };
    let traj = gd_trajectory(&obj, vec![0.4, 0.7], 0.0, 5);
    let lip = lipschitz_estimate(&obj, &traj.first().params, &LipschitzConfig::default(), &[]).unwrap();
    let rep = first_order_audit(&obj, &traj, &lip).unwrap();
    assert_eq!(rep.records.len(), 5);
    for r in &rep.records {
        assert_eq!((r.d_r, r.first_order, r.remainder, r.bound), (0.0, 0.0, 0.0, 0.0));
    }
    assert!(rep.drift.satisfied);
    assert_eq!(rep.bound_pass_fraction, 1.0);
}

#[test]
fn audit_remainder_scales_with_step_squared() {
    let obj = Quadratic { a: spd(&[1.0, 0.6, 0.3, 0.1]) };
    let w0 = vec![1.0, 1.0, -1.0, 0.5];
    let run = |eta| {
        let traj = gd_trajectory(&obj, w0.clone(), eta, 20);
        let lip = lipschitz_estimate(&obj, &traj.first().params, &LipschitzConfig::default(), &[]).unwrap();
        first_order_audit(&obj, &traj, &lip).unwrap()
    };
    let (full, half) = (run(0.02), run(0.01));
    let ratio = full.median_abs_remainder() / half.median_abs_remainder();
    assert!((3.0..=5.0).contains(&ratio), "{ratio}");
    // On a quadratic the true constant is the top eigenvalue, so the
    // safety-scaled bound holds everywhere.
    assert_eq!(full.bound_pass_fraction, 1.0);
    assert!(full.drift.satisfied);
    let c = full.cumulative;
    assert!((c.delta_forget - (c.linear_prediction + c.total_remainder)).abs() < 1e-15);
}

#[test]
fn step_scaling_on_quadratic_is_exactly_quadratic() {
    let obj = Quadratic { a: spd(&[1.0, 0.6, 0.3, 0.1]) };
    let traj = gd_trajectory(&obj, vec![1.0, 1.0, -1.0, 0.5], 0.05, 10);
    let rep = step_scaling(&obj, &traj, 0.5).unwrap();
    assert!((rep.ratio - 4.0).abs() < 1e-6, "{}", rep.ratio);
    assert!(step_scaling(&obj, &traj, 1.0).is_err());
}

#[test]
fn audit_needs_contiguous_snapshots() {
    let obj = Quadratic { a: spd(&[1.0, 0.5]) };
    let mut traj = gd_trajectory(&obj, vec![1.0, 0.0], 0.1, 4);
    traj.snapshots.remove(2);
    let lip = lipschitz_estimate(&obj, &traj.first().params, &LipschitzConfig::default(), &[]).unwrap();
    assert!(first_order_audit(&obj, &traj, &lip).is_err());
}

#[test]
fn spearman_values() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    // Ties take average ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3).
    let r = spearman(&[5.0, 5.0, 9.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
}

#[test]
fn equal_intensities_are_degenerate() {
    let s = setup();
    let cfg = CorrelationSetup {
        intensities: vec![2, 2, 2, 2],
        seeds: vec![0],
        n_task: 8,
        n_pairs: 6,
        ..CorrelationSetup::default()
    };
    let rep = ppl_grad_correlation(&s.model, &s.params, s.vocab.clone(), &cfg).unwrap();
    assert!(rep.degenerate && rep.spearman.is_none());
    assert!(!rep.gap_increasing);
    let short = CorrelationSetup {
        intensities: vec![1, 2, 3],
        ..cfg
    };
    assert!(ppl_grad_correlation(&s.model, &s.params, s.vocab.clone(), &short).is_err());
}

#[test]
fn reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let obj = Quadratic { a: spd(&[1.0, 0.5]) };
    let traj = gd_trajectory(&obj, vec![1.0, 0.0], 0.1, 3);
    let lip = lipschitz_estimate(&obj, &traj.first().params, &LipschitzConfig::default(), &[]).unwrap();
    let rep = first_order_audit(&obj, &traj, &lip).unwrap();
    write_taylor_csv(dir.path().join("taylor.csv"), &rep.records).unwrap();
    write_drift_csv(dir.path().join("drift.csv"), &rep.drift).unwrap();
    write_schema(dir.path().join("schema.json")).unwrap();
    let t = std::fs::read_to_string(dir.path().join("taylor.csv")).unwrap();
    assert_eq!(t.lines().next().unwrap(), "step,dR,first_order,remainder,bound,pass");
    assert_eq!(t.lines().count(), 4);
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("schema.json")).unwrap()).unwrap();
    for f in ["taylor.csv", "drift.csv", "attenuation.json", "correlation.json"] {
        assert!(schema.get(f).is_some());
    }
}
