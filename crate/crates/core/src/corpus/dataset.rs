//! `Dataset` and its JSONL encoding.
//!
//! One JSON object per line: `tokens` (token strings), `mask` (0/1) and
//! `meta` (per-example origin, style, triple ids, plus the dataset's name,
//! provenance and seed so a file reads back into an equal `Dataset`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::render::{ExampleMeta, Provenance, RenderedExample};
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<RenderedExample>,
    pub provenance: Provenance,
    pub seed: u64,
    pub vocab: Arc<Vocab>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        examples: Vec<RenderedExample>,
        provenance: Provenance,
        seed: u64,
        vocab: Arc<Vocab>,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("dataset has no examples"));
        }
        Ok(Dataset {
            name: name.into(),
            examples,
            provenance,
            seed,
            vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn validate(&self, context_len: usize) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Empty("dataset has no examples"));
        }
        self.examples
            .iter()
            .try_for_each(|e| e.validate(&self.vocab, context_len))
    }

    pub fn max_len(&self) -> usize {
        self.examples.iter().map(|e| e.len()).max().unwrap_or(0)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.examples {
            let line = Line {
                tokens: self.vocab.decode(&e.token_ids)?.into_iter().map(str::to_string).collect(),
                mask: e.loss_mask.iter().map(|&m| m as u8).collect(),
                meta: LineMeta {
                    example: e.meta.clone(),
                    dataset: self.name.clone(),
                    provenance: self.provenance,
                    seed: self.seed,
                },
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>, vocab: Arc<Vocab>) -> Result<Self> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let mut examples = Vec::new();
        let mut header: Option<(String, Provenance, u64)> = None;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            if parsed.tokens.len() != parsed.mask.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "tokens and mask differ in length".into(),
                });
            }
            let token_ids = vocab.encode(&parsed.tokens).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            let loss_mask = parsed
                .mask
                .iter()
                .map(|&m| match m {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Parse {
                        line: lineno,
                        msg: format!("mask entry {other} is not 0/1"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            let h = (parsed.meta.dataset.clone(), parsed.meta.provenance, parsed.meta.seed);
            match &header {
                None => header = Some(h),
                Some(prev) if *prev != h => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "dataset name/provenance/seed differ from earlier lines".into(),
                    })
                }
                _ => {}
            }
            examples.push(RenderedExample {
                token_ids,
                loss_mask,
                meta: parsed.meta.example,
            });
        }
        let (name, provenance, seed) = header.ok_or(Error::Empty("dataset file has no examples"))?;
        Dataset::new(name, examples, provenance, seed, vocab)
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    tokens: Vec<String>,
    mask: Vec<u8>,
    meta: LineMeta,
}

#[derive(Serialize, Deserialize)]
struct LineMeta {
    #[serde(flatten)]
    example: ExampleMeta,
    dataset: String,
    provenance: Provenance,
    seed: u64,
}
