use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{OBJECTS, RELATIONS, SUBJECTS};

pub const N_SUBJECTS: usize = SUBJECTS.len();
pub const N_RELATIONS: usize = RELATIONS.len();
pub const N_OBJECTS: usize = OBJECTS.len();
/// Size of the full (subject, relation, object) content space.
pub const CONTENT_SPACE: usize = N_SUBJECTS * N_RELATIONS * N_OBJECTS;
/// Number of facts, i.e. triples consistent with the knowledge table.
pub const N_FACTS: usize = N_SUBJECTS * N_RELATIONS;

/// Relations the narrow task domain draws from.
pub const TASK_RELATIONS: [usize; 3] = [0, 1, 2];
/// Held-out facts per relation reserved for the pretraining eval split.
pub const EVAL0_PER_RELATION: usize = 2;
/// Held-out task-domain facts reserved for the in-domain eval split.
pub const EVAL_TASK_FACTS: usize = 9;

const TABLE_SEED: u64 = 0x5eed_7ab1e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContentTriple {
    pub subject_id: usize,
    pub relation_id: usize,
    pub object_id: usize,
}

impl ContentTriple {
    pub fn new(subject_id: usize, relation_id: usize, object_id: usize) -> Self {
        ContentTriple {
            subject_id,
            relation_id,
            object_id,
        }
    }

    pub fn in_range(&self) -> bool {
        self.subject_id < N_SUBJECTS && self.relation_id < N_RELATIONS && self.object_id < N_OBJECTS
    }

    /// All 864 triples of the content space, consistent or not.
    pub fn all() -> impl Iterator<Item = ContentTriple> {
        (0..N_SUBJECTS).flat_map(|s| {
            (0..N_RELATIONS).flat_map(move |r| (0..N_OBJECTS).map(move |o| ContentTriple::new(s, r, o)))
        })
    }
}

/// Which split a fact belongs to. The partition is fixed, independent of any
/// corpus seed. Every fact is pretrained on; the eval splits are disjoint from
/// the task training facts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactSplit {
    /// Fact held for the pretraining eval set (also pretrained on).
    Eval0,
    EvalTask,
    /// Task-relation fact used for both pretraining and task training.
    TaskTrain,
    /// Non-task fact used only for pretraining.
    PretrainOnly,
}

/// The global (subject, relation) -> object map plus the fixed fact partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeTable {
    objects: Vec<usize>,
    splits: Vec<FactSplit>,
}

impl KnowledgeTable {
    pub fn standard() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED);
        let mut objects = vec![0usize; N_FACTS];
        for r in 0..N_RELATIONS {
            let mut perm: Vec<usize> = (0..N_OBJECTS).collect();
            perm.shuffle(&mut rng);
            for s in 0..N_SUBJECTS {
                objects[s * N_RELATIONS + r] = perm[s % N_OBJECTS];
            }
        }

        let mut splits = vec![FactSplit::PretrainOnly; N_FACTS];
        for (fact, split) in splits.iter_mut().enumerate() {
            if TASK_RELATIONS.contains(&(fact % N_RELATIONS)) {
                *split = FactSplit::TaskTrain;
            }
        }
        let mut task_facts: Vec<usize> = (0..N_FACTS)
            .filter(|f| splits[*f] == FactSplit::TaskTrain)
            .collect();
        task_facts.shuffle(&mut rng);
        for &f in &task_facts[..EVAL_TASK_FACTS] {
            splits[f] = FactSplit::EvalTask;
        }
        for r in 0..N_RELATIONS {
            let mut candidates: Vec<usize> = (0..N_SUBJECTS)
                .map(|s| s * N_RELATIONS + r)
                .filter(|&f| splits[f] != FactSplit::EvalTask)
                .collect();
            candidates.shuffle(&mut rng);
            for &f in &candidates[..EVAL0_PER_RELATION] {
                splits[f] = FactSplit::Eval0;
            }
        }
        KnowledgeTable { objects, splits }
    }

    pub fn object(&self, subject_id: usize, relation_id: usize) -> usize {
        self.objects[subject_id * N_RELATIONS + relation_id]
    }

    pub fn is_consistent(&self, t: &ContentTriple) -> bool {
        t.in_range() && self.object(t.subject_id, t.relation_id) == t.object_id
    }

    pub fn fact(&self, subject_id: usize, relation_id: usize) -> ContentTriple {
        ContentTriple::new(subject_id, relation_id, self.object(subject_id, relation_id))
    }

    pub fn split_of(&self, t: &ContentTriple) -> FactSplit {
        self.splits[t.subject_id * N_RELATIONS + t.relation_id]
    }

    /// Every consistent triple in (subject, relation) order.
    pub fn facts(&self) -> Vec<ContentTriple> {
        (0..N_SUBJECTS)
            .flat_map(|s| (0..N_RELATIONS).map(move |r| (s, r)))
            .map(|(s, r)| self.fact(s, r))
            .collect()
    }

    pub fn facts_in(&self, wanted: &[FactSplit]) -> Vec<ContentTriple> {
        self.facts()
            .into_iter()
            .filter(|t| wanted.contains(&self.split_of(t)))
            .collect()
    }
}

impl Default for KnowledgeTable {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn partition_sizes() {
        let kt = KnowledgeTable::standard();
        assert_eq!(kt.facts().len(), 72);
        assert_eq!(kt.facts_in(&[FactSplit::Eval0]).len(), 12);
        assert_eq!(kt.facts_in(&[FactSplit::EvalTask]).len(), 9);
        assert_eq!(kt.facts_in(&[FactSplit::TaskTrain]).len(), 36 - 9 - 6);
        assert_eq!(kt.facts_in(&[FactSplit::PretrainOnly]).len(), 30);
        for t in kt.facts_in(&[FactSplit::EvalTask, FactSplit::TaskTrain]) {
            assert!(TASK_RELATIONS.contains(&t.relation_id));
        }
    }

    #[test]
    fn every_relation_is_a_permutation() {
        let kt = KnowledgeTable::standard();
        for r in 0..N_RELATIONS {
            let objs: HashSet<_> = (0..N_SUBJECTS).map(|s| kt.object(s, r)).collect();
            assert_eq!(objs.len(), N_OBJECTS);
        }
        assert_eq!(ContentTriple::all().count(), CONTENT_SPACE);
        assert_eq!(ContentTriple::all().filter(|t| kt.is_consistent(t)).count(), N_FACTS);
    }
}
