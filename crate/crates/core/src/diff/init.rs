//! Parameter containers and seeded initialization.
//!
//! Weights draw from uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out));
//! biases start at zero and layer-norm gains at one. Initialization is a pure
//! function of the seed.

use super::tensor::Tensor;
use crate::error::{CwmError, Result};
use crate::rng::Stream;

/// An ordered, name-addressed set of parameter tensors.
///
/// Order is the creation order and is stable; optimizer state and file
/// serialization index into it positionally.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index_of(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| CwmError::Schema(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Builds a [`ParamSet`] with seeded Xavier-uniform weights.
pub struct ParamBuilder {
    set: ParamSet,
    rng: Stream,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            set: ParamSet::new(),
            rng: Stream::substream(seed, 0xC0DE),
        }
    }

    fn xavier(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.uniform(-a, a)).collect();
        Tensor::new(shape.to_vec(), data).expect("xavier init is finite")
    }

    /// Dense layer: `{prefix}.w` of [fan_in, fan_out] plus zero `{prefix}.b`.
    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> &mut Self {
        let w = self.xavier(&[fan_in, fan_out], fan_in, fan_out);
        self.set.push(format!("{prefix}.w"), w);
        self.set.push(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
        self
    }

    /// Square-kernel convolution: `{prefix}.w` of [c_out, c_in, k, k] plus
    /// zero `{prefix}.b`.
    pub fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) -> &mut Self {
        let w = self.xavier(&[c_out, c_in, k, k], c_in * k * k, c_out * k * k);
        self.set.push(format!("{prefix}.w"), w);
        self.set.push(format!("{prefix}.b"), Tensor::zeros(&[c_out]));
        self
    }

    /// Layer norm affine: unit `{prefix}.g`, zero `{prefix}.b`.
    pub fn layer_norm(&mut self, prefix: &str, dim: usize) -> &mut Self {
        self.set.push(format!("{prefix}.g"), Tensor::filled(&[dim], 1.0));
        self.set.push(format!("{prefix}.b"), Tensor::zeros(&[dim]));
        self
    }

    /// One GRU layer: reset/update/candidate input and hidden matrices plus
    /// zero biases.
    pub fn gru_layer(&mut self, prefix: &str, in_dim: usize, hidden: usize) -> &mut Self {
        for gate in ["r", "z", "n"] {
            let wx = self.xavier(&[in_dim, hidden], in_dim, hidden);
            self.set.push(format!("{prefix}.wx{gate}"), wx);
            let wh = self.xavier(&[hidden, hidden], hidden, hidden);
            self.set.push(format!("{prefix}.wh{gate}"), wh);
            self.set.push(format!("{prefix}.b{gate}"), Tensor::zeros(&[hidden]));
        }
        self
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biases_are_exactly_zero() {
        let mut b = ParamBuilder::new(1);
        b.linear("fc", 8, 4).conv("cv", 3, 2, 5);
        let set = b.finish();
        assert!(set.get("fc.b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(set.get("cv.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_bit_identical() {
        let mk = |seed| {
            let mut b = ParamBuilder::new(seed);
            b.linear("fc", 16, 16).gru_layer("g", 4, 8);
            b.finish()
        };
        let a = mk(9);
        let b = mk(9);
        assert_eq!(a, b);
        let c = mk(10);
        assert_ne!(a, c);
    }

    #[test]
    fn weight_variance_matches_uniform_law() {
        // var(uniform(-a, a)) = a^2 / 3
        let (fan_in, fan_out) = (500, 200);
        let mut b = ParamBuilder::new(77);
        b.linear("fc", fan_in, fan_out);
        let set = b.finish();
        let w = set.get("fc.w").unwrap();
        assert_eq!(w.len(), 100_000);
        let mean = w.data().iter().sum::<f64>() / w.len() as f64;
        let var = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let expect = a * a / 3.0;
        assert!(
            (var - expect).abs() < 0.05 * expect,
            "var {var} vs expected {expect}"
        );
    }
}
