use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model hyper-parameters. Defaults give the 2-layer, 32-wide desk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::corpus::VOCAB_SIZE,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ff: 64,
            context_len: 32,
            init_scale: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.vocab_size == 0 {
            bad.push("vocab_size must be positive".to_string());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            bad.push(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 {
            bad.push("d_ff must be positive".to_string());
        }
        if self.context_len < 2 {
            bad.push("context_len must be at least 2".to_string());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            bad.push("init_scale must be finite and non-negative".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// How a segment is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Weight,
    Bias,
    Gain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named segment manifest of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub segments: Vec<Segment>,
    pub total: usize,
}

impl Layout {
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let (v, c, f, t) = (cfg.vocab_size, cfg.d_model, cfg.d_ff, cfg.context_len);
        let mut b = LayoutBuilder::default();
        b.push("tok_emb", &[v, c], SegmentKind::Weight);
        b.push("pos_emb", &[t, c], SegmentKind::Weight);
        for l in 0..cfg.n_layers {
            let p = format!("blocks.{l}");
            b.push(&format!("{p}.ln1.gain"), &[c], SegmentKind::Gain);
            b.push(&format!("{p}.ln1.bias"), &[c], SegmentKind::Bias);
            b.push(&format!("{p}.attn.qkv.weight"), &[c, 3 * c], SegmentKind::Weight);
            b.push(&format!("{p}.attn.qkv.bias"), &[3 * c], SegmentKind::Bias);
            b.push(&format!("{p}.attn.out.weight"), &[c, c], SegmentKind::Weight);
            b.push(&format!("{p}.attn.out.bias"), &[c], SegmentKind::Bias);
            b.push(&format!("{p}.ln2.gain"), &[c], SegmentKind::Gain);
            b.push(&format!("{p}.ln2.bias"), &[c], SegmentKind::Bias);
            b.push(&format!("{p}.ffn.in.weight"), &[c, f], SegmentKind::Weight);
            b.push(&format!("{p}.ffn.in.bias"), &[f], SegmentKind::Bias);
            b.push(&format!("{p}.ffn.out.weight"), &[f, c], SegmentKind::Weight);
            b.push(&format!("{p}.ffn.out.bias"), &[c], SegmentKind::Bias);
        }
        b.push("ln_f.gain", &[c], SegmentKind::Gain);
        b.push("ln_f.bias", &[c], SegmentKind::Bias);
        b.push("head.weight", &[c, v], SegmentKind::Weight);
        b.push("head.bias", &[v], SegmentKind::Bias);
        b.finish()
    }

    /// One unnamed weight segment of length `n`; for objectives that are not
    /// the transformer (tests, toy risks).
    pub fn flat(n: usize) -> Self {
        let mut b = LayoutBuilder::default();
        b.push("flat", &[n], SegmentKind::Weight);
        b.finish()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Offset of a segment that is known to exist.
    pub(crate) fn at(&self, name: &str) -> usize {
        self.segment(name)
            .unwrap_or_else(|| panic!("layout has no segment {name}"))
            .offset
    }

    /// Segments tile `0..total` in order with no gaps or overlaps.
    pub fn check(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.segments {
            if s.offset != next {
                return Err(Error::ParamFormat(format!(
                    "segment {} starts at {} but expected {}",
                    s.name, s.offset, next
                )));
            }
            next += s.len();
        }
        if next != self.total {
            return Err(Error::ParamFormat(format!(
                "segments cover {next} entries, manifest says {}",
                self.total
            )));
        }
        Ok(())
    }
}

#[derive(Default)]
struct LayoutBuilder {
    segments: Vec<Segment>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: &str, shape: &[usize], kind: SegmentKind) {
        let seg = Segment {
            name: name.to_string(),
            offset: self.next,
            shape: shape.to_vec(),
            kind,
        };
        self.next += seg.len();
        self.segments.push(seg);
    }

    fn finish(self) -> Layout {
        Layout {
            segments: self.segments,
            total: self.next,
        }
    }
}
