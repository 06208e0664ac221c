use serde::{Deserialize, Serialize};

use super::knowledge::ContentTriple;
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StyleId {
    S0,
    S1,
}

/// Surface style of a rendering. `intensity` counts repeated BANG markers
/// and only matters for S1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleSpec {
    pub style: StyleId,
    pub intensity: usize,
}

impl StyleSpec {
    pub const DEFAULT_INTENSITY: usize = 2;

    pub fn s0() -> Self {
        StyleSpec {
            style: StyleId::S0,
            intensity: 0,
        }
    }

    pub fn s1(intensity: usize) -> Self {
        StyleSpec {
            style: StyleId::S1,
            intensity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Pretrain,
    Task,
    #[serde(rename = "self")]
    SelfGen,
    Mix,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub origin: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<StyleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple: Option<[usize; 3]>,
}

/// Token sequence plus the positions that contribute to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedExample {
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub meta: ExampleMeta,
}

impl RenderedExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn target_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// Checks BOS/EOS framing, id range, context fit and a contiguous target
    /// region that ends at EOS.
    pub fn validate(&self, vocab: &Vocab, context_len: usize) -> Result<()> {
        let sp = vocab.specials();
        if self.token_ids.len() != self.loss_mask.len() {
            return Err(Error::LengthMismatch {
                left: self.token_ids.len(),
                right: self.loss_mask.len(),
            });
        }
        if self.token_ids.len() < 2 {
            return Err(Error::Empty("example shorter than BOS+EOS"));
        }
        if self.token_ids.len() > context_len {
            return Err(Error::TooLong {
                len: self.token_ids.len(),
                context: context_len,
            });
        }
        if let Some(&id) = self.token_ids.iter().find(|&&id| id as usize >= vocab.len()) {
            return Err(Error::TokenOutOfRange {
                id: id as usize,
                size: vocab.len(),
            });
        }
        if self.token_ids[0] != sp.bos || *self.token_ids.last().unwrap() != sp.eos {
            return Err(Error::Config("example must begin with BOS and end with EOS".into()));
        }
        let first = self
            .loss_mask
            .iter()
            .position(|&m| m)
            .ok_or(Error::EmptyMask)?;
        if first == 0 || !self.loss_mask[first..].iter().all(|&m| m) {
            return Err(Error::Config(
                "loss mask must be one contiguous region after BOS ending at EOS".into(),
            ));
        }
        Ok(())
    }
}

/// Renders a fact in the requested style.
///
/// S0: `BOS the SUBJ REL the OBJ DOT EOS`, every token after BOS is a target.
/// S1: `BOS INST REL ? SUBJ SEP RESP OBJ BANG*m EOS`, only `OBJ BANG*m EOS`
/// are targets.
pub fn render(
    triple: &ContentTriple,
    style: StyleSpec,
    vocab: &Vocab,
    context_len: usize,
) -> Result<RenderedExample> {
    if !triple.in_range() {
        return Err(Error::InconsistentTriple {
            subject: triple.subject_id,
            relation: triple.relation_id,
            object: triple.object_id,
        });
    }
    let sp = vocab.specials();
    let subj = vocab.subject(triple.subject_id);
    let rel = vocab.relation(triple.relation_id);
    let obj = vocab.object(triple.object_id);
    let (token_ids, loss_mask) = match style.style {
        StyleId::S0 => {
            let toks = vec![sp.bos, vocab.the(), subj, rel, vocab.the(), obj, sp.dot, sp.eos];
            let mut mask = vec![true; toks.len()];
            mask[0] = false;
            (toks, mask)
        }
        StyleId::S1 => {
            if style.intensity == 0 {
                return Err(Error::Config("S1 intensity must be at least 1".into()));
            }
            let len = 9 + style.intensity;
            if len > context_len {
                return Err(Error::TooLong {
                    len,
                    context: context_len,
                });
            }
            let mut toks = vec![sp.bos, sp.inst, rel, vocab.question(), subj, sp.sep, sp.resp, obj];
            let answer_start = toks.len() - 1;
            toks.extend(std::iter::repeat_n(sp.bang, style.intensity));
            toks.push(sp.eos);
            let mask = (0..toks.len()).map(|i| i >= answer_start).collect();
            (toks, mask)
        }
    };
    if token_ids.len() > context_len {
        return Err(Error::TooLong {
            len: token_ids.len(),
            context: context_len,
        });
    }
    Ok(RenderedExample {
        token_ids,
        loss_mask,
        meta: ExampleMeta {
            origin: Provenance::Pretrain,
            style: Some(style.style),
            intensity: (style.style == StyleId::S1).then_some(style.intensity),
            triple: Some([triple.subject_id, triple.relation_id, triple.object_id]),
        },
    })
}
