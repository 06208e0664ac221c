//! Invariants of the public API under random inputs.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sasft_core::corpus::{
    build_corpus, build_vocab, render, CorpusKind, KnowledgeTable, Provenance, RenderedExample,
    StyleSpec, N_RELATIONS, N_SUBJECTS,
};
use sasft_core::diagnostics::{project, spearman, style_basis_from_differences};
use sasft_core::mixer::{epsilon, mix, MixSpec};
use sasft_core::model::{Layout, ParamVector};
use sasft_core::sampler::{draw_token, nucleus, self_count, SamplingConfig};
use sasft_core::trainer::BatchStream;

fn flat(values: Vec<f64>) -> ParamVector {
    let n = values.len();
    ParamVector::from_values(values, Arc::new(Layout::flat(n))).unwrap()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn intensity_only_changes_marker_count(
        s in 0..N_SUBJECTS, r in 0..N_RELATIONS, m1 in 1usize..8, m2 in 1usize..8,
    ) {
        let v = build_vocab(0);
        let fact = KnowledgeTable::standard().fact(s, r);
        let a = render(&fact, StyleSpec::s1(m1), &v, 32).unwrap();
        let b = render(&fact, StyleSpec::s1(m2), &v, 32).unwrap();
        prop_assert_eq!(a.len() as i64 - b.len() as i64, m1 as i64 - m2 as i64);
        prop_assert_eq!(a.target_count(), m1 + 2);
        let bang = v.specials().bang;
        let content = |e: &RenderedExample| -> Vec<u32> {
            e.token_ids.iter().copied().filter(|&t| t != bang).collect()
        };
        prop_assert_eq!(content(&a), content(&b));
        let plain = render(&fact, StyleSpec::s0(), &v, 32).unwrap();
        prop_assert_eq!(plain.target_count(), plain.len() - 1);
    }

    #[test]
    fn nucleus_is_a_renormalized_head(raw in prop::collection::vec(0.0f64..1.0, 2..16), top_p in 0.05f64..=1.0) {
        let z: f64 = raw.iter().sum();
        prop_assume!(z > 1e-6);
        let p: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let kept = nucleus(&p, top_p);
        let total: f64 = kept.iter().map(|k| k.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let mass: f64 = kept.iter().map(|k| p[k.0]).sum();
        let support = p.iter().filter(|&&x| x > 0.0).count();
        prop_assert!(mass >= top_p - 1e-12 || kept.len() == support);
        prop_assert!(mass - p[kept.last().unwrap().0] < top_p + 1e-12);
        let floor = kept.iter().map(|k| p[k.0]).fold(f64::INFINITY, f64::min);
        for (i, &q) in p.iter().enumerate() {
            if !kept.iter().any(|k| k.0 == i) {
                prop_assert!(q <= floor);
            }
        }
    }

    #[test]
    fn draws_come_from_the_nucleus(
        logits in prop::collection::vec(-4.0f64..4.0, 2..12), top_p in 0.1f64..1.0, seed in any::<u64>(),
    ) {
        let cfg = SamplingConfig { top_p, temperature: 1.0, ..SamplingConfig::default() };
        let p = softmax(&logits);
        let floor = nucleus(&p, top_p).iter().map(|k| p[k.0]).fold(f64::INFINITY, f64::min);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let t = draw_token(&logits, &cfg, &mut rng);
            prop_assert!(p[t] >= floor - 1e-9);
        }
    }

    #[test]
    fn self_count_and_epsilon_laws(lambda in 0.01f64..4.0, n in 1usize..5000) {
        let eps = epsilon(lambda).unwrap();
        prop_assert!(eps > 0.0 && eps < 1.0);
        prop_assert!((eps / (1.0 - eps) - lambda).abs() < 1e-9 * lambda.max(1.0));
        match self_count(lambda, n) {
            Ok(m) => {
                prop_assert!(m as f64 <= lambda * n as f64 + 1e-6);
                prop_assert!((m + 1) as f64 > lambda * n as f64);
            }
            Err(_) => prop_assert!(lambda * (n as f64) < 1.0),
        }
    }

    #[test]
    fn epsilon_is_monotone(a in 0.01f64..10.0, b in 0.01f64..10.0) {
        prop_assume!(a < b);
        prop_assert!(epsilon(a).unwrap() < epsilon(b).unwrap());
    }

    #[test]
    fn batch_epochs_are_permutations(k in 1usize..8, b in 1usize..32, seed in any::<u64>()) {
        let n = k * b;
        let mut s = BatchStream::new(n, b, seed);
        for _ in 0..3 {
            let mut epoch: Vec<usize> = (0..k).flat_map(|_| s.next_batch()).collect();
            epoch.sort_unstable();
            prop_assert_eq!(epoch, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn projection_reconstructs(
        cols in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 24), 1..5),
        v in prop::collection::vec(-1.0f64..1.0, 24),
    ) {
        let diffs: Vec<ParamVector> = cols.into_iter().map(flat).collect();
        prop_assume!(diffs.iter().any(|d| d.norm() > 1e-3));
        let basis = style_basis_from_differences(&diffs, 0.9).unwrap();
        prop_assert!(basis.orthonormality_error() < 1e-10);
        let v = flat(v);
        prop_assume!(v.norm() > 1e-6);
        let p = project(&basis, &v).unwrap();
        let back = p.style.add(&p.semantic).unwrap();
        prop_assert!(back.sub(&v).unwrap().norm() <= 1e-10 * v.norm());
        prop_assert!(p.style.dot(&p.semantic).unwrap().abs() <= 1e-10 * v.norm_sq());
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p.style_fraction));
    }

    #[test]
    fn spearman_sees_only_ranks(xs in prop::collection::vec(-100.0f64..100.0, 3..20)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        if let Some(r) = spearman(&xs, &ys) {
            prop_assert!((r - 1.0).abs() < 1e-12);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            prop_assert!((spearman(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
            prop_assert_eq!(spearman(&ys, &xs), Some(r));
        }
    }

    #[test]
    fn spearman_is_bounded(xy in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..20)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let Some(r) = spearman(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mix_size_law_and_provenance(n in 4usize..64, quarters in 1usize..8, seed in any::<u64>()) {
        let v = Arc::new(build_vocab(1));
        let lambda = quarters as f64 / 4.0;
        let task = build_corpus(CorpusKind::Task, n, StyleSpec::s1(2), seed, v.clone(), 32).unwrap();
        let mut selfd = build_corpus(CorpusKind::Pretrain, 2 * n, StyleSpec::s0(), seed, v, 32).unwrap();
        selfd.provenance = Provenance::SelfGen;
        selfd.examples.iter_mut().for_each(|e| e.meta.origin = Provenance::SelfGen);
        let (d, man) = mix(&task, &selfd, MixSpec { lambda, seed }).unwrap();
        prop_assert_eq!(man.n_self, self_count(lambda, n).unwrap());
        prop_assert_eq!(d.len(), n + man.n_self);
        let n_task = d.examples.iter().filter(|e| e.meta.origin == Provenance::Task).count();
        prop_assert_eq!(n_task, n);
    }
}
