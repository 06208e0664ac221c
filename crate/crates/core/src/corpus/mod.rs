//! Synthetic language with independent content and style knobs.

mod dataset;
mod knowledge;
mod render;
mod vocab;

use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::Dataset;
pub use knowledge::{
    ContentTriple, FactSplit, KnowledgeTable, CONTENT_SPACE, N_FACTS, N_OBJECTS, N_RELATIONS,
    N_SUBJECTS, TASK_RELATIONS,
};
pub use render::{render, ExampleMeta, Provenance, RenderedExample, StyleId, StyleSpec};
pub use vocab::{build_vocab, Specials, Vocab, VOCAB_SIZE};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Pretrain,
    Task,
    Eval0,
    EvalTask,
}

impl CorpusKind {
    fn splits(self) -> &'static [FactSplit] {
        match self {
            CorpusKind::Pretrain => &[
                FactSplit::PretrainOnly,
                FactSplit::Eval0,
                FactSplit::TaskTrain,
                FactSplit::EvalTask,
            ],
            CorpusKind::Eval0 => &[FactSplit::Eval0],
            CorpusKind::Task => &[FactSplit::TaskTrain],
            CorpusKind::EvalTask => &[FactSplit::EvalTask],
        }
    }

    fn is_eval(self) -> bool {
        matches!(self, CorpusKind::Eval0 | CorpusKind::EvalTask)
    }

    fn provenance(self) -> Provenance {
        match self {
            CorpusKind::Pretrain | CorpusKind::Eval0 => Provenance::Pretrain,
            CorpusKind::Task | CorpusKind::EvalTask => Provenance::Task,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CorpusKind::Pretrain => "pretrain",
            CorpusKind::Task => "task",
            CorpusKind::Eval0 => "eval0",
            CorpusKind::EvalTask => "eval_task",
        }
    }
}

/// Distinct facts an evaluation corpus of this kind can hold.
pub fn eval_capacity(kind: CorpusKind) -> usize {
    KnowledgeTable::standard().facts_in(kind.splits()).len()
}

/// Builds one of the four corpora.
///
/// Training kinds sample facts with replacement from their split; eval kinds
/// sample distinct facts, so `n` is bounded by the split size. Pretraining
/// kinds require S0 and task kinds S1.
pub fn build_corpus(
    kind: CorpusKind,
    n: usize,
    style: StyleSpec,
    seed: u64,
    vocab: Arc<Vocab>,
    context_len: usize,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("corpus size must be at least 1"));
    }
    let wanted = match kind {
        CorpusKind::Pretrain | CorpusKind::Eval0 => StyleId::S0,
        CorpusKind::Task | CorpusKind::EvalTask => StyleId::S1,
    };
    if style.style != wanted {
        return Err(Error::Config(format!(
            "{} corpus must use style {wanted:?}",
            kind.name()
        )));
    }
    let table = KnowledgeTable::standard();
    let pool = table.facts_in(kind.splits());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<ContentTriple> = if kind.is_eval() {
        if n > pool.len() {
            return Err(Error::NotEnoughTriples {
                requested: n,
                available: pool.len(),
            });
        }
        let mut p = pool;
        p.shuffle(&mut rng);
        p.truncate(n);
        p
    } else {
        (0..n).map(|_| *pool.choose(&mut rng).expect("nonempty pool")).collect()
    };
    let provenance = kind.provenance();
    let examples = triples
        .iter()
        .map(|t| {
            let mut e = render(t, style, &vocab, context_len)?;
            e.meta.origin = provenance;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(kind.name(), examples, provenance, seed, vocab)
}

/// The same fact rendered in S0 and in S1 with the given intensity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastPair {
    pub plain: RenderedExample,
    pub styled: RenderedExample,
}

/// `n` style-contrast pairs over distinct facts.
pub fn contrast_pairs(
    n: usize,
    intensity: usize,
    seed: u64,
    vocab: &Vocab,
    context_len: usize,
) -> Result<Vec<ContrastPair>> {
    contrast_pairs_with(n, StyleSpec::s0(), StyleSpec::s1(intensity), seed, vocab, context_len)
}

/// Contrast pairs with explicit styles on both sides.
pub fn contrast_pairs_with(
    n: usize,
    plain: StyleSpec,
    styled: StyleSpec,
    seed: u64,
    vocab: &Vocab,
    context_len: usize,
) -> Result<Vec<ContrastPair>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 contrast pairs, got {n}")));
    }
    let mut facts = KnowledgeTable::standard().facts();
    if n > facts.len() {
        return Err(Error::NotEnoughTriples {
            requested: n,
            available: facts.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    facts.shuffle(&mut rng);
    facts
        .iter()
        .take(n)
        .map(|t| {
            Ok(ContrastPair {
                plain: render(t, plain, vocab, context_len)?,
                styled: render(t, styled, vocab, context_len)?,
            })
        })
        .collect()
}
