//! Decoder-only transformer with a hand-written backward pass.
//!
//! Pre-norm blocks (LN -> causal attention -> residual, LN -> GELU MLP ->
//! residual), learned token and absolute position embeddings, final LN and
//! an untied linear head. Weight matrices are stored input-major, so a
//! linear map is `y = x W + b` with `W` of shape `[n_in, n_out]`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layout::{Layout, ModelConfig, SegmentKind};
use super::params::ParamVector;
use crate::corpus::RenderedExample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct BlockOffsets {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    out_w: usize,
    out_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc_w: usize,
    fc_b: usize,
    proj_w: usize,
    proj_b: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    tok: usize,
    pos: usize,
    blocks: Vec<BlockOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
}

impl Offsets {
    fn new(layout: &Layout, n_layers: usize) -> Self {
        let blocks = (0..n_layers)
            .map(|l| {
                let at = |s: &str| layout.at(&format!("blocks.{l}.{s}"));
                BlockOffsets {
                    ln1_g: at("ln1.gain"),
                    ln1_b: at("ln1.bias"),
                    qkv_w: at("attn.qkv.weight"),
                    qkv_b: at("attn.qkv.bias"),
                    out_w: at("attn.out.weight"),
                    out_b: at("attn.out.bias"),
                    ln2_g: at("ln2.gain"),
                    ln2_b: at("ln2.bias"),
                    fc_w: at("ffn.in.weight"),
                    fc_b: at("ffn.in.bias"),
                    proj_w: at("ffn.out.weight"),
                    proj_b: at("ffn.out.bias"),
                }
            })
            .collect();
        Offsets {
            tok: layout.at("tok_emb"),
            pos: layout.at("pos_emb"),
            blocks,
            lnf_g: layout.at("ln_f.gain"),
            lnf_b: layout.at("ln_f.bias"),
            head_w: layout.at("head.weight"),
            head_b: layout.at("head.bias"),
        }
    }
}

/// Cached activations of one block for one sequence.
struct BlockCache<F> {
    ln1_xhat: Vec<F>,
    ln1_rstd: Vec<F>,
    ln1_out: Vec<F>,
    qkv: Vec<F>,
    /// `[head][query][key]`, zero above the diagonal.
    att: Vec<F>,
    atty: Vec<F>,
    ln2_xhat: Vec<F>,
    ln2_rstd: Vec<F>,
    ln2_out: Vec<F>,
    fc_pre: Vec<F>,
    fc_act: Vec<F>,
}

struct Cache<F> {
    len: usize,
    tokens: Vec<u32>,
    blocks: Vec<BlockCache<F>>,
    lnf_xhat: Vec<F>,
    lnf_rstd: Vec<F>,
    lnf_out: Vec<F>,
    logits: Vec<F>,
}

/// The model architecture. Holds no parameters; every method takes a
/// `ParamVector` so trajectories and probes can share one instance.
#[derive(Debug, Clone)]
pub struct Transformer {
    config: ModelConfig,
    layout: Arc<Layout>,
    offs: Offsets,
}

impl Transformer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::for_config(&config));
        let offs = Offsets::new(&layout, config.n_layers);
        Ok(Transformer {
            config,
            layout,
            offs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    /// Gaussian(0, init_scale^2) weights, zero biases, unit gains.
    pub fn init_params<F: Scalar>(&self) -> ParamVector<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut p = ParamVector::zeros(self.layout.clone());
        for seg in &self.layout.segments {
            let r = seg.range();
            match seg.kind {
                SegmentKind::Weight => {
                    for v in &mut p.values[r] {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = F::of(self.config.init_scale * z);
                    }
                }
                SegmentKind::Bias => {}
                SegmentKind::Gain => p.values[r].iter_mut().for_each(|v| *v = F::one()),
            }
        }
        p
    }

    pub(crate) fn check_params<F: Scalar>(&self, params: &ParamVector<F>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.layout.total,
            });
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if tokens.len() > self.config.context_len {
            return Err(Error::TooLong {
                len: tokens.len(),
                context: self.config.context_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: id as usize,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Logits for every position, row-major `[len, vocab]`.
    pub fn logits<F: Scalar>(&self, params: &ParamVector<F>, tokens: &[u32]) -> Result<Vec<F>> {
        self.check_params(params)?;
        self.check_tokens(tokens)?;
        Ok(self.forward(&params.values, tokens).logits)
    }

    /// Distribution over the next token after `prefix`.
    pub fn next_token_dist<F: Scalar>(
        &self,
        params: &ParamVector<F>,
        prefix: &[u32],
    ) -> Result<Vec<F>> {
        if prefix.len() + 1 > self.config.context_len {
            return Err(Error::TooLong {
                len: prefix.len() + 1,
                context: self.config.context_len,
            });
        }
        let logits = self.logits(params, prefix)?;
        let v = self.config.vocab_size;
        let last = &logits[(prefix.len() - 1) * v..prefix.len() * v];
        Ok(softmax(last))
    }

    /// Mean negative log-likelihood over the example's target positions.
    pub fn example_loss<F: Scalar>(
        &self,
        params: &ParamVector<F>,
        example: &RenderedExample,
    ) -> Result<F> {
        self.check_params(params)?;
        self.check_example(example)?;
        let cache = self.forward(&params.values, &example.token_ids);
        Ok(self.masked_nll(&cache, &example.loss_mask, None))
    }

    /// Loss and its gradient for one example.
    pub fn example_loss_grad<F: Scalar>(
        &self,
        params: &ParamVector<F>,
        example: &RenderedExample,
    ) -> Result<(F, Vec<F>)> {
        self.check_params(params)?;
        self.check_example(example)?;
        let cache = self.forward(&params.values, &example.token_ids);
        let mut dlogits = vec![F::zero(); cache.logits.len()];
        let loss = self.masked_nll(&cache, &example.loss_mask, Some(&mut dlogits));
        let mut grad = vec![F::zero(); self.layout.total];
        self.backward(&params.values, &cache, &dlogits, &mut grad);
        Ok((loss, grad))
    }

    /// Sum of `-log p(x_t | x_<t)` over every token after the first,
    /// ignoring any loss mask.
    pub fn sequence_nll<F: Scalar>(&self, params: &ParamVector<F>, tokens: &[u32]) -> Result<F> {
        self.check_params(params)?;
        self.check_tokens(tokens)?;
        if tokens.len() < 2 {
            return Err(Error::Empty("sequence needs at least two tokens"));
        }
        let cache = self.forward(&params.values, tokens);
        let mask: Vec<bool> = (0..tokens.len()).map(|i| i > 0).collect();
        let n = F::of((tokens.len() - 1) as f64);
        Ok(self.masked_nll(&cache, &mask, None) * n)
    }

    fn check_example(&self, example: &RenderedExample) -> Result<()> {
        self.check_tokens(&example.token_ids)?;
        if example.loss_mask.len() != example.token_ids.len() {
            return Err(Error::LengthMismatch {
                left: example.token_ids.len(),
                right: example.loss_mask.len(),
            });
        }
        if !example.loss_mask.iter().skip(1).any(|&m| m) {
            return Err(Error::EmptyMask);
        }
        Ok(())
    }

    /// Token-mean cross-entropy over mask-true positions `p >= 1`, each
    /// predicted from the logits at `p - 1`. Writes `dloss/dlogits` when
    /// asked.
    fn masked_nll<F: Scalar>(
        &self,
        cache: &Cache<F>,
        mask: &[bool],
        mut dlogits: Option<&mut Vec<F>>,
    ) -> F {
        let v = self.config.vocab_size;
        let count = mask.iter().skip(1).filter(|&&m| m).count();
        let inv = F::one() / F::of(count as f64);
        let mut total = F::zero();
        for p in 1..cache.len {
            if !mask[p] {
                continue;
            }
            let row = &cache.logits[(p - 1) * v..p * v];
            let target = cache.tokens[p] as usize;
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for &l in row {
                z += (l - max).exp();
            }
            let lse = max + z.ln();
            total += lse - row[target];
            if let Some(d) = dlogits.as_deref_mut() {
                let drow = &mut d[(p - 1) * v..p * v];
                for (dj, &l) in drow.iter_mut().zip(row) {
                    *dj = (l - lse).exp() * inv;
                }
                drow[target] -= inv;
            }
        }
        total * inv
    }

    fn forward<F: Scalar>(&self, w: &[F], tokens: &[u32]) -> Cache<F> {
        let cfg = &self.config;
        let (t_len, c, ff, v) = (tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let o = &self.offs;

        let mut x = vec![F::zero(); t_len * c];
        for (t, &tok) in tokens.iter().enumerate() {
            let te = &w[o.tok + tok as usize * c..][..c];
            let pe = &w[o.pos + t * c..][..c];
            for i in 0..c {
                x[t * c + i] = te[i] + pe[i];
            }
        }

        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for b in &o.blocks {
            let mut ln1_out = vec![F::zero(); t_len * c];
            let (ln1_xhat, ln1_rstd) =
                layernorm_forward(&mut ln1_out, &x, &w[b.ln1_g..][..c], &w[b.ln1_b..][..c], t_len, c);
            let mut qkv = vec![F::zero(); t_len * 3 * c];
            linear_forward(&mut qkv, &ln1_out, &w[b.qkv_w..][..c * 3 * c], &w[b.qkv_b..][..3 * c], t_len, c, 3 * c);
            let mut atty = vec![F::zero(); t_len * c];
            let att = attention_forward(&mut atty, &qkv, t_len, c, cfg.n_heads);
            let mut attn_out = vec![F::zero(); t_len * c];
            linear_forward(&mut attn_out, &atty, &w[b.out_w..][..c * c], &w[b.out_b..][..c], t_len, c, c);
            for (xi, ai) in x.iter_mut().zip(&attn_out) {
                *xi += *ai;
            }

            let mut ln2_out = vec![F::zero(); t_len * c];
            let (ln2_xhat, ln2_rstd) =
                layernorm_forward(&mut ln2_out, &x, &w[b.ln2_g..][..c], &w[b.ln2_b..][..c], t_len, c);
            let mut fc_pre = vec![F::zero(); t_len * ff];
            linear_forward(&mut fc_pre, &ln2_out, &w[b.fc_w..][..c * ff], &w[b.fc_b..][..ff], t_len, c, ff);
            let fc_act: Vec<F> = fc_pre.iter().map(|&u| gelu(u)).collect();
            let mut mlp_out = vec![F::zero(); t_len * c];
            linear_forward(&mut mlp_out, &fc_act, &w[b.proj_w..][..ff * c], &w[b.proj_b..][..c], t_len, ff, c);
            for (xi, mi) in x.iter_mut().zip(&mlp_out) {
                *xi += *mi;
            }

            blocks.push(BlockCache {
                ln1_xhat,
                ln1_rstd,
                ln1_out,
                qkv,
                att,
                atty,
                ln2_xhat,
                ln2_rstd,
                ln2_out,
                fc_pre,
                fc_act,
            });
        }

        let mut lnf_out = vec![F::zero(); t_len * c];
        let (lnf_xhat, lnf_rstd) =
            layernorm_forward(&mut lnf_out, &x, &w[o.lnf_g..][..c], &w[o.lnf_b..][..c], t_len, c);
        let mut logits = vec![F::zero(); t_len * v];
        linear_forward(&mut logits, &lnf_out, &w[o.head_w..][..c * v], &w[o.head_b..][..v], t_len, c, v);

        Cache {
            len: t_len,
            tokens: tokens.to_vec(),
            blocks,
            lnf_xhat,
            lnf_rstd,
            lnf_out,
            logits,
        }
    }

    fn backward<F: Scalar>(&self, w: &[F], cache: &Cache<F>, dlogits: &[F], g: &mut [F]) {
        let cfg = &self.config;
        let (t_len, c, ff, v) = (cache.len, cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let o = &self.offs;

        let mut dlnf = vec![F::zero(); t_len * c];
        {
            let (gw, gb) = split_two(g, o.head_w, c * v, o.head_b, v);
            linear_backward(&mut dlnf, gw, gb, dlogits, &cache.lnf_out, &w[o.head_w..][..c * v], t_len, c, v);
        }
        let mut dx = vec![F::zero(); t_len * c];
        {
            let (gg, gb) = split_two(g, o.lnf_g, c, o.lnf_b, c);
            layernorm_backward(&mut dx, gg, gb, &dlnf, &cache.lnf_xhat, &cache.lnf_rstd, &w[o.lnf_g..][..c], t_len, c);
        }

        for (b, bc) in o.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch: dx flows both into the residual and the branch.
            let mut dact = vec![F::zero(); t_len * ff];
            {
                let (gw, gb) = split_two(g, b.proj_w, ff * c, b.proj_b, c);
                linear_backward(&mut dact, gw, gb, &dx, &bc.fc_act, &w[b.proj_w..][..ff * c], t_len, ff, c);
            }
            let dpre: Vec<F> = dact
                .iter()
                .zip(&bc.fc_pre)
                .map(|(&d, &u)| d * gelu_grad(u))
                .collect();
            let mut dln2 = vec![F::zero(); t_len * c];
            {
                let (gw, gb) = split_two(g, b.fc_w, c * ff, b.fc_b, ff);
                linear_backward(&mut dln2, gw, gb, &dpre, &bc.ln2_out, &w[b.fc_w..][..c * ff], t_len, c, ff);
            }
            {
                let (gg, gb) = split_two(g, b.ln2_g, c, b.ln2_b, c);
                layernorm_backward(&mut dx, gg, gb, &dln2, &bc.ln2_xhat, &bc.ln2_rstd, &w[b.ln2_g..][..c], t_len, c);
            }

            // Attention branch.
            let mut datty = vec![F::zero(); t_len * c];
            {
                let (gw, gb) = split_two(g, b.out_w, c * c, b.out_b, c);
                linear_backward(&mut datty, gw, gb, &dx, &bc.atty, &w[b.out_w..][..c * c], t_len, c, c);
            }
            let mut dqkv = vec![F::zero(); t_len * 3 * c];
            attention_backward(&mut dqkv, &datty, &bc.qkv, &bc.att, t_len, c, cfg.n_heads);
            let mut dln1 = vec![F::zero(); t_len * c];
            {
                let (gw, gb) = split_two(g, b.qkv_w, c * 3 * c, b.qkv_b, 3 * c);
                linear_backward(&mut dln1, gw, gb, &dqkv, &bc.ln1_out, &w[b.qkv_w..][..c * 3 * c], t_len, c, 3 * c);
            }
            {
                let (gg, gb) = split_two(g, b.ln1_g, c, b.ln1_b, c);
                layernorm_backward(&mut dx, gg, gb, &dln1, &bc.ln1_xhat, &bc.ln1_rstd, &w[b.ln1_g..][..c], t_len, c);
            }
        }

        for (t, &tok) in cache.tokens.iter().enumerate() {
            let d = &dx[t * c..(t + 1) * c];
            let te = &mut g[o.tok + tok as usize * c..][..c];
            for i in 0..c {
                te[i] += d[i];
            }
            let pe = &mut g[o.pos + t * c..][..c];
            for i in 0..c {
                pe[i] += d[i];
            }
        }
    }
}

/// Two disjoint mutable windows `[a, a+la)` and `[b, b+lb)` with `a < b`.
fn split_two<F>(g: &mut [F], a: usize, la: usize, b: usize, lb: usize) -> (&mut [F], &mut [F]) {
    debug_assert!(a + la <= b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a..a + la], &mut hi[..lb])
}

pub(crate) fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[inline]
fn gelu<F: Scalar>(x: F) -> F {
    F::of(0.5) * x * (F::one() + (x * F::FRAC_1_SQRT_2()).erf())
}

#[inline]
fn gelu_grad<F: Scalar>(x: F) -> F {
    let cdf = F::of(0.5) * (F::one() + (x * F::FRAC_1_SQRT_2()).erf());
    let pdf = (-F::of(0.5) * x * x).exp() * F::FRAC_2_SQRT_PI() * F::FRAC_1_SQRT_2() * F::of(0.5);
    cdf + x * pdf
}

fn linear_forward<F: Scalar>(
    out: &mut [F],
    inp: &[F],
    w: &[F],
    b: &[F],
    rows: usize,
    n_in: usize,
    n_out: usize,
) {
    for t in 0..rows {
        let o = &mut out[t * n_out..(t + 1) * n_out];
        o.copy_from_slice(b);
        let x = &inp[t * n_in..(t + 1) * n_in];
        for (i, &xi) in x.iter().enumerate() {
            let wr = &w[i * n_out..(i + 1) * n_out];
            for (oj, &wij) in o.iter_mut().zip(wr) {
                *oj += xi * wij;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn linear_backward<F: Scalar>(
    dinp: &mut [F],
    dw: &mut [F],
    db: &mut [F],
    dout: &[F],
    inp: &[F],
    w: &[F],
    rows: usize,
    n_in: usize,
    n_out: usize,
) {
    for t in 0..rows {
        let d = &dout[t * n_out..(t + 1) * n_out];
        for (dbj, &dj) in db.iter_mut().zip(d) {
            *dbj += dj;
        }
        let x = &inp[t * n_in..(t + 1) * n_in];
        let dx = &mut dinp[t * n_in..(t + 1) * n_in];
        for i in 0..n_in {
            let wr = &w[i * n_out..(i + 1) * n_out];
            let mut acc = F::zero();
            for (&wij, &dj) in wr.iter().zip(d) {
                acc += wij * dj;
            }
            dx[i] += acc;
            let xi = x[i];
            let dwr = &mut dw[i * n_out..(i + 1) * n_out];
            for (dwij, &dj) in dwr.iter_mut().zip(d) {
                *dwij += xi * dj;
            }
        }
    }
}

/// Returns `(xhat, rstd)` for the backward pass.
fn layernorm_forward<F: Scalar>(
    out: &mut [F],
    x: &[F],
    gain: &[F],
    bias: &[F],
    rows: usize,
    c: usize,
) -> (Vec<F>, Vec<F>) {
    let mut xhat = vec![F::zero(); rows * c];
    let mut rstd = vec![F::zero(); rows];
    let n = F::of(c as f64);
    for t in 0..rows {
        let row = &x[t * c..(t + 1) * c];
        let mean = row.iter().copied().sum::<F>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let r = F::one() / (var + F::of(LN_EPS)).sqrt();
        rstd[t] = r;
        for i in 0..c {
            let h = (row[i] - mean) * r;
            xhat[t * c + i] = h;
            out[t * c + i] = h * gain[i] + bias[i];
        }
    }
    (xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
fn layernorm_backward<F: Scalar>(
    dx: &mut [F],
    dgain: &mut [F],
    dbias: &mut [F],
    dout: &[F],
    xhat: &[F],
    rstd: &[F],
    gain: &[F],
    rows: usize,
    c: usize,
) {
    let n = F::of(c as f64);
    for t in 0..rows {
        let d = &dout[t * c..(t + 1) * c];
        let h = &xhat[t * c..(t + 1) * c];
        let mut mean_dh = F::zero();
        let mut mean_dh_h = F::zero();
        for i in 0..c {
            let dh = d[i] * gain[i];
            mean_dh += dh;
            mean_dh_h += dh * h[i];
            dgain[i] += d[i] * h[i];
            dbias[i] += d[i];
        }
        mean_dh /= n;
        mean_dh_h /= n;
        for i in 0..c {
            let dh = d[i] * gain[i];
            dx[t * c + i] += rstd[t] * (dh - mean_dh - h[i] * mean_dh_h);
        }
    }
}

/// Causal multi-head attention. `qkv` rows hold `[q | k | v]`.
fn attention_forward<F: Scalar>(
    out: &mut [F],
    qkv: &[F],
    rows: usize,
    c: usize,
    heads: usize,
) -> Vec<F> {
    let hd = c / heads;
    let scale = F::one() / F::of(hd as f64).sqrt();
    let mut att = vec![F::zero(); heads * rows * rows];
    for h in 0..heads {
        for t in 0..rows {
            let q = &qkv[t * 3 * c + h * hd..][..hd];
            let a = &mut att[(h * rows + t) * rows..][..rows];
            let mut max = F::neg_infinity();
            for s in 0..=t {
                let k = &qkv[s * 3 * c + c + h * hd..][..hd];
                let mut dot = F::zero();
                for i in 0..hd {
                    dot += q[i] * k[i];
                }
                a[s] = dot * scale;
                max = max.max(a[s]);
            }
            let mut z = F::zero();
            for val in a.iter_mut().take(t + 1) {
                *val = (*val - max).exp();
                z += *val;
            }
            for val in a.iter_mut().take(t + 1) {
                *val /= z;
            }
            let o = &mut out[t * c + h * hd..][..hd];
            for s in 0..=t {
                let vv = &qkv[s * 3 * c + 2 * c + h * hd..][..hd];
                for i in 0..hd {
                    o[i] += a[s] * vv[i];
                }
            }
        }
    }
    att
}

fn attention_backward<F: Scalar>(
    dqkv: &mut [F],
    dout: &[F],
    qkv: &[F],
    att: &[F],
    rows: usize,
    c: usize,
    heads: usize,
) {
    let hd = c / heads;
    let scale = F::one() / F::of(hd as f64).sqrt();
    let mut da = vec![F::zero(); rows];
    for h in 0..heads {
        for t in 0..rows {
            let a = &att[(h * rows + t) * rows..][..rows];
            let d = &dout[t * c + h * hd..][..hd];
            for s in 0..=t {
                let vv = &qkv[s * 3 * c + 2 * c + h * hd..][..hd];
                let mut acc = F::zero();
                for i in 0..hd {
                    acc += d[i] * vv[i];
                }
                da[s] = acc;
                let dv = &mut dqkv[s * 3 * c + 2 * c + h * hd..][..hd];
                for i in 0..hd {
                    dv[i] += a[s] * d[i];
                }
            }
            let mut inner = F::zero();
            for s in 0..=t {
                inner += a[s] * da[s];
            }
            for s in 0..=t {
                let ds = a[s] * (da[s] - inner) * scale;
                for i in 0..hd {
                    let ki = qkv[s * 3 * c + c + h * hd + i];
                    let qi = qkv[t * 3 * c + h * hd + i];
                    dqkv[t * 3 * c + h * hd + i] += ds * ki;
                    dqkv[s * 3 * c + c + h * hd + i] += ds * qi;
                }
            }
        }
    }
}
