//! Bias-corrected Adam.

use super::init::ParamSet;
use super::tensor::Tensor;
use crate::error::{CwmError, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &ParamSet, hyper: AdamHyper) -> Self {
        let m = (0..params.len())
            .map(|i| Tensor::zeros(params.tensor(i).shape()))
            .collect();
        let v = (0..params.len())
            .map(|i| Tensor::zeros(params.tensor(i).shape()))
            .collect();
        Self { m, v, step: 0, hyper }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` is the gradient for `params.tensor(i)`; a `None`
    /// entry means the parameter did not participate in the loss (its moments
    /// decay with zero gradient).
    pub fn apply(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(CwmError::Graph(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params.tensor(i).shape() {
                    return Err(CwmError::Graph(format!(
                        "adam: gradient shape {:?} for parameter {} of shape {:?}",
                        g.shape(),
                        params.name(i),
                        params.tensor(i).shape()
                    )));
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);

        let zero = [];
        #[allow(clippy::needless_range_loop)]
        for i in 0..params.len() {
            let g: &[f64] = grads[i].as_ref().map_or(&zero, |t| t.data());
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = if g.is_empty() { 0.0 } else { g[j] };
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= h.lr * mhat / (vhat.sqrt() + h.eps);
            }
            params.tensor(i).check_finite("adam update")?;
        }
        Ok(())
    }
}
