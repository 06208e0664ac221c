//! Tiny decoder-only language model with exact reverse-mode gradients.

mod layout;
mod params;
mod transformer;

use rayon::prelude::*;

pub use layout::{Layout, ModelConfig, Segment, SegmentKind};
pub use params::{dot, ParamVector};
pub use transformer::Transformer;

use crate::corpus::RenderedExample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Examples evaluated concurrently before their results are folded in.
const CHUNK: usize = 64;

impl Transformer {
    /// Unweighted mean of per-example losses and gradients.
    ///
    /// Examples are processed in parallel chunks but summed strictly in list
    /// order, so the result is bit-identical to a sequential loop.
    pub fn batch_grad<F: Scalar>(
        &self,
        params: &ParamVector<F>,
        examples: &[RenderedExample],
    ) -> Result<(F, ParamVector<F>)> {
        if examples.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        self.check_params(params)?;
        let mut grad = params.zeros_like();
        let mut loss = F::zero();
        for chunk in examples.chunks(CHUNK) {
            let parts: Vec<(F, Vec<F>)> = chunk
                .par_iter()
                .map(|e| self.example_loss_grad(params, e))
                .collect::<Result<_>>()?;
            for (l, g) in parts {
                loss += l;
                for (acc, gi) in grad.values.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
        }
        let inv = F::one() / F::of(examples.len() as f64);
        grad.values.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }

    /// Unweighted example-mean of `example_loss`.
    pub fn mean_loss<F: Scalar>(
        &self,
        params: &ParamVector<F>,
        examples: &[RenderedExample],
    ) -> Result<F> {
        if examples.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let losses: Vec<F> = examples
            .par_iter()
            .map(|e| self.example_loss(params, e))
            .collect::<Result<_>>()?;
        let mut total = F::zero();
        for l in losses {
            total += l;
        }
        Ok(total / F::of(examples.len() as f64))
    }
}
