use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUBJECTS: [&str; 12] = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory",
    "oscar",
];
pub const RELATIONS: [&str; 6] = ["likes", "owns", "fears", "visits", "paints", "builds"];
pub const OBJECTS: [&str; 12] = [
    "tea", "coffee", "bread", "apples", "boats", "kites", "drums", "maps", "lamps", "roses",
    "clocks", "books",
];
pub const GLUE: [&str; 2] = ["the", "?"];
pub const SPECIALS: [&str; 8] = ["BOS", "EOS", "PAD", "SEP", "INST", "RESP", "DOT", "BANG"];

pub const VOCAB_SIZE: usize =
    SPECIALS.len() + SUBJECTS.len() + RELATIONS.len() + OBJECTS.len() + GLUE.len();

/// Ids of the eight structural tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
    pub sep: u32,
    pub inst: u32,
    pub resp: u32,
    pub dot: u32,
    pub bang: u32,
}

/// Fixed 40-token vocabulary whose id assignment is a seeded permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    seed: u64,
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
    specials: Specials,
}

impl Vocab {
    pub fn new(seed: u64) -> Self {
        let mut tokens: Vec<String> = SPECIALS
            .iter()
            .chain(SUBJECTS.iter())
            .chain(RELATIONS.iter())
            .chain(OBJECTS.iter())
            .chain(GLUE.iter())
            .map(|s| s.to_string())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        tokens.shuffle(&mut rng);
        let id_of: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let sp = |name: &str| id_of[name];
        let specials = Specials {
            bos: sp("BOS"),
            eos: sp("EOS"),
            pad: sp("PAD"),
            sep: sp("SEP"),
            inst: sp("INST"),
            resp: sp("RESP"),
            dot: sp("DOT"),
            bang: sp("BANG"),
        };
        Vocab {
            seed,
            tokens,
            id_of,
            specials,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn id(&self, token: &str) -> Result<u32> {
        self.id_of
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id: id as usize,
                size: self.len(),
            })
    }

    pub fn subject(&self, i: usize) -> u32 {
        self.id_of[SUBJECTS[i]]
    }

    pub fn relation(&self, i: usize) -> u32 {
        self.id_of[RELATIONS[i]]
    }

    pub fn object(&self, i: usize) -> u32 {
        self.id_of[OBJECTS[i]]
    }

    pub fn the(&self) -> u32 {
        self.id_of["the"]
    }

    pub fn question(&self) -> u32 {
        self.id_of["?"]
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<&str>> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<u32>> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

pub fn build_vocab(seed: u64) -> Vocab {
    Vocab::new(seed)
}
