//! Self-augmentation: nucleus/temperature sampling from the frozen model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, ExampleMeta, Provenance, RenderedExample, Vocab};
use crate::error::{Error, Result};
use crate::model::{ParamVector, Transformer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub top_p: f64,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            top_p: 0.9,
            temperature: 0.7,
            max_len: 256,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            bad.push(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            bad.push(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_len == 0 {
            bad.push("max_len must be at least 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prefix_tokens: Vec<u32>,
}

impl PromptSpec {
    /// The bare `[BOS]` prompt.
    pub fn bos(vocab: &Vocab) -> Self {
        PromptSpec {
            prefix_tokens: vec![vocab.specials().bos],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfPair {
    pub x_prime: Vec<u32>,
    pub y_prime: Vec<u32>,
}

/// The renormalized nucleus: `(token, probability)` sorted by descending
/// probability, ties by ascending token id.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    kept.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

/// Temperature-scaled softmax of `logits` with an optional banned token.
fn tempered(logits: &[f64], temperature: f64, banned: Option<u32>) -> Vec<f64> {
    let scaled: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if banned == Some(i as u32) {
                f64::NEG_INFINITY
            } else {
                l / temperature
            }
        })
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn argmax(logits: &[f64], banned: Option<u32>) -> usize {
    let mut best = usize::MAX;
    for (i, &l) in logits.iter().enumerate() {
        if banned == Some(i as u32) {
            continue;
        }
        if best == usize::MAX || l > logits[best] {
            best = i;
        }
    }
    best
}

/// Draws one token id from `logits` under `cfg`. Temperature 0 is greedy.
pub fn draw_token<R: Rng>(logits: &[f64], cfg: &SamplingConfig, rng: &mut R) -> usize {
    draw_token_excluding(logits, cfg, None, rng).0
}

/// Like [`draw_token`] but with one token removed from the support. Also
/// returns the nucleus the draw came from (empty for greedy steps).
pub fn draw_token_excluding<R: Rng>(
    logits: &[f64],
    cfg: &SamplingConfig,
    banned: Option<u32>,
    rng: &mut R,
) -> (usize, Vec<(usize, f64)>) {
    if cfg.temperature == 0.0 {
        return (argmax(logits, banned), Vec::new());
    }
    let probs = tempered(logits, cfg.temperature, banned);
    let kept = nucleus(&probs, cfg.top_p);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, q) in &kept {
        acc += q;
        if u < acc {
            return (i, kept);
        }
    }
    let last = kept.last().expect("nucleus is never empty").0;
    (last, kept)
}

/// One recorded decoding step, for replaying nucleus membership.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub nucleus: Vec<(usize, f64)>,
    pub chosen: usize,
}

struct Decoder<'a, F: Scalar> {
    model: &'a Transformer,
    params: &'a ParamVector<F>,
    cfg: &'a SamplingConfig,
    trace: Option<&'a mut Vec<StepTrace>>,
}

impl<F: Scalar> Decoder<'_, F> {
    /// Extends `seq` until a stop token (kept) or `budget` new tokens.
    fn run<R: Rng>(
        &mut self,
        seq: &mut Vec<u32>,
        budget: usize,
        stops: &[u32],
        banned: Option<u32>,
        rng: &mut R,
    ) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        while out.len() < budget {
            let logits = self.model.logits(self.params, seq)?;
            let v = self.model.config().vocab_size;
            let last: Vec<f64> = logits[(seq.len() - 1) * v..].iter().map(|x| x.f64()).collect();
            let (tok, kept) = draw_token_excluding(&last, self.cfg, banned, rng);
            if let Some(t) = self.trace.as_deref_mut() {
                t.push(StepTrace {
                    nucleus: kept,
                    chosen: tok,
                });
            }
            let tok = tok as u32;
            seq.push(tok);
            out.push(tok);
            if stops.contains(&tok) {
                break;
            }
        }
        Ok(out)
    }
}

fn generation_budget(model: &Transformer, prompt: &PromptSpec, cfg: &SamplingConfig) -> Result<usize> {
    if prompt.prefix_tokens.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    // One slot stays free for an EOS appended to capped generations.
    let room = model
        .config()
        .context_len
        .checked_sub(prompt.prefix_tokens.len() + 1)
        .filter(|&r| r >= 1)
        .ok_or(Error::TooLong {
            len: prompt.prefix_tokens.len() + 2,
            context: model.config().context_len,
        })?;
    Ok(cfg.max_len.min(room))
}

/// Autoregressive draw after `prompt` until EOS or the length cap. Returns
/// only the generated tokens.
pub fn sample_sequence<F: Scalar, R: Rng>(
    model: &Transformer,
    params: &ParamVector<F>,
    prompt: &PromptSpec,
    cfg: &SamplingConfig,
    eos: u32,
    rng: &mut R,
) -> Result<Vec<u32>> {
    sample_sequence_traced(model, params, prompt, cfg, eos, rng, None)
}

pub fn sample_sequence_traced<F: Scalar, R: Rng>(
    model: &Transformer,
    params: &ParamVector<F>,
    prompt: &PromptSpec,
    cfg: &SamplingConfig,
    eos: u32,
    rng: &mut R,
    trace: Option<&mut Vec<StepTrace>>,
) -> Result<Vec<u32>> {
    cfg.validate()?;
    let budget = generation_budget(model, prompt, cfg)?;
    let mut seq = prompt.prefix_tokens.clone();
    Decoder {
        model,
        params,
        cfg,
        trace,
    }
    .run(&mut seq, budget, &[eos], None, rng)
}

/// Two-stage draw: `x'` continues the prompt up to the first DOT or SEP
/// (EOS excluded from its support), then `y'` continues `prompt ++ x'` up to
/// EOS. Both stages share the length cap.
pub fn self_augment_pair<F: Scalar, R: Rng>(
    model: &Transformer,
    params: &ParamVector<F>,
    prompt: &PromptSpec,
    cfg: &SamplingConfig,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<SelfPair> {
    self_augment_pair_traced(model, params, prompt, cfg, vocab, rng, None)
}

pub fn self_augment_pair_traced<F: Scalar, R: Rng>(
    model: &Transformer,
    params: &ParamVector<F>,
    prompt: &PromptSpec,
    cfg: &SamplingConfig,
    vocab: &Vocab,
    rng: &mut R,
    trace: Option<&mut Vec<StepTrace>>,
) -> Result<SelfPair> {
    cfg.validate()?;
    let sp = vocab.specials();
    let budget = generation_budget(model, prompt, cfg)?.max(2);
    let mut seq = prompt.prefix_tokens.clone();
    let mut dec = Decoder {
        model,
        params,
        cfg,
        trace,
    };
    let x_prime = dec.run(&mut seq, budget - 1, &[sp.dot, sp.sep], Some(sp.eos), rng)?;
    let y_prime = dec.run(&mut seq, budget - x_prime.len(), &[sp.eos], None, rng)?;
    Ok(SelfPair { x_prime, y_prime })
}

/// Turns a pair into a training example: the prompt is context, the whole
/// generated region `x' ++ y'` is target. An EOS is appended if the draw hit
/// the length cap.
pub fn pair_to_example(prompt: &PromptSpec, pair: &SelfPair, vocab: &Vocab) -> RenderedExample {
    let eos = vocab.specials().eos;
    let mut token_ids = prompt.prefix_tokens.clone();
    token_ids.extend(&pair.x_prime);
    token_ids.extend(&pair.y_prime);
    if token_ids.last() != Some(&eos) {
        token_ids.push(eos);
    }
    let loss_mask = (0..token_ids.len())
        .map(|i| i >= prompt.prefix_tokens.len())
        .collect();
    RenderedExample {
        token_ids,
        loss_mask,
        meta: ExampleMeta {
            origin: Provenance::SelfGen,
            style: None,
            intensity: None,
            triple: None,
        },
    }
}

/// Per-pair RNG: stream `index` of the generator seeded with `seed`.
pub fn pair_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Number of self examples for a task set of size `n` at ratio `lambda`:
/// `floor(lambda * n)`, with a small tolerance so products that are integral
/// in exact arithmetic are not rounded down.
pub fn self_count(lambda: f64, n: usize) -> Result<usize> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("mix-in ratio must be positive, got {lambda}")));
    }
    let m = (lambda * n as f64 + 1e-9).floor() as usize;
    if m < 1 {
        return Err(Error::Config(format!(
            "lambda * N = {} is below one example",
            lambda * n as f64
        )));
    }
    Ok(m)
}

/// `D_self` with `floor(lambda * n)` examples drawn from the frozen model.
/// Pair `j` uses RNG stream `j`, so the corpus is independent of scheduling.
pub fn build_self_corpus<F: Scalar>(
    model: &Transformer,
    params: &ParamVector<F>,
    lambda: f64,
    n: usize,
    cfg: &SamplingConfig,
    prompt: &PromptSpec,
    vocab: std::sync::Arc<Vocab>,
) -> Result<Dataset> {
    let m = self_count(lambda, n)?;
    cfg.validate()?;
    let examples = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = pair_rng(cfg.seed, j as u64);
            let pair = self_augment_pair(model, params, prompt, cfg, &vocab, &mut rng)?;
            Ok(pair_to_example(prompt, &pair, &vocab))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("self", examples, Provenance::SelfGen, cfg.seed, vocab)
}
