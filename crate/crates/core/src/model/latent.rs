//! Latent currency of the models: per-object slot vectors and per-object
//! confounder estimates.

use crate::diff::Tensor;
use crate::error::{CwmError, Result};

/// K per-object latent vectors of width d, as a [K, d] tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSlots(Tensor);

impl LatentSlots {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 2 {
            return Err(CwmError::Schema(format!(
                "latent slots must be [K, d], got {:?}",
                tensor.shape()
            )));
        }
        Ok(Self(tensor))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(k * d);
        for r in &rows {
            if r.len() != d {
                return Err(CwmError::Schema("ragged latent rows".into()));
            }
            data.extend_from_slice(r);
        }
        Self::new(Tensor::new(vec![k, d], data)?)
    }

    pub fn k_slots(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn slot(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.0.data()[k * d..(k + 1) * d]
    }

    /// Flattened view, row-major over slots.
    pub fn flat(&self) -> &[f64] {
        self.0.data()
    }

    /// Reorder slots by a permutation: output slot i is input slot perm[i].
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k_slots() {
            return Err(CwmError::Schema("permutation length mismatch".into()));
        }
        let rows = perm.iter().map(|&p| self.slot(p).to_vec()).collect();
        Self::from_rows(rows)
    }
}

/// Per-object confounder estimates, one hidden-state row per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfounderEstimate(Tensor);

impl ConfounderEstimate {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 2 {
            return Err(CwmError::Schema(format!(
                "confounder estimate must be [K, h], got {:?}",
                tensor.shape()
            )));
        }
        Ok(Self(tensor))
    }

    pub fn k_slots(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn slot(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.0.data()[k * w..(k + 1) * w]
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k_slots() {
            return Err(CwmError::Schema("permutation length mismatch".into()));
        }
        let w = self.width();
        let mut data = Vec::with_capacity(self.k_slots() * w);
        for &p in perm {
            data.extend_from_slice(self.slot(p));
        }
        Self::new(Tensor::new(vec![perm.len(), w], data)?)
    }
}
