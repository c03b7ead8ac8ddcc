//! Solved-state classifier over flattened terminal latents.
//!
//! A small MLP (256 relu, 128 relu, 2 logits) trained with cross-entropy on
//! (latent, solved) pairs labelled by the simulator.

use serde::{Deserialize, Serialize};

use crate::diff::layers::linear;
use crate::diff::{AdamHyper, AdamState, ParamBuilder, ParamSet, Tape, Tensor};
use crate::error::{CwmError, Result};
use crate::model::LatentSlots;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            epochs: 200,
            seed: 0,
            hidden1: 256,
            hidden2: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub in_dim: usize,
    pub config: ClassifierConfig,
    pub params: ParamSet,
}

fn build_params(in_dim: usize, cfg: &ClassifierConfig, seed: u64) -> ParamSet {
    let mut b = ParamBuilder::new(seed);
    b.linear("cls.fc1", in_dim, cfg.hidden1);
    b.linear("cls.fc2", cfg.hidden1, cfg.hidden2);
    b.linear("cls.fc3", cfg.hidden2, 2);
    b.finish()
}

fn stable_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Train on labelled latents. Both classes must be present.
pub fn train_classifier(
    data: &[(LatentSlots, bool)],
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    if data.is_empty() {
        return Err(CwmError::Training("no labelled latents".into()));
    }
    let positives = data.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == data.len() {
        return Err(CwmError::Training(format!(
            "need both classes, got {positives} positives of {}",
            data.len()
        )));
    }
    let in_dim = data[0].0.flat().len();
    for (l, _) in data {
        if l.flat().len() != in_dim {
            return Err(CwmError::Training("mixed latent dimensions".into()));
        }
    }

    let n = data.len();
    let mut x = Vec::with_capacity(n * in_dim);
    // sign is +1 for solved, -1 for unsolved: ce = softplus(sign * (z0 - z1))
    let mut sign = Vec::with_capacity(n);
    for (l, y) in data {
        x.extend_from_slice(l.flat());
        sign.push(if *y { 1.0 } else { -1.0 });
    }
    let x = Tensor::new(vec![n, in_dim], x)?;
    let sign = Tensor::new(vec![n, 1], sign)?;
    let picker = Tensor::new(vec![2, 1], vec![1.0, -1.0])?;

    let mut params = build_params(in_dim, cfg, cfg.seed);
    let mut adam = AdamState::new(&params, AdamHyper::with_lr(cfg.lr));

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let vars: Vec<_> = (0..params.len())
            .map(|i| tape.leaf(params.tensor(i).clone()))
            .collect();
        let xv = tape.leaf(x.clone());
        let h1 = linear(&mut tape, xv, vars[0], vars[1])?;
        let h1 = tape.relu(h1)?;
        let h2 = linear(&mut tape, h1, vars[2], vars[3])?;
        let h2 = tape.relu(h2)?;
        let logits = linear(&mut tape, h2, vars[4], vars[5])?;

        let pick = tape.leaf(picker.clone());
        let diff = tape.matmul(logits, pick)?; // z0 - z1 per row
        let sv = tape.leaf(sign.clone());
        let margin = tape.mul(diff, sv)?;
        let ce = tape.softplus(margin)?;
        let loss = tape.mean_all(ce)?;

        let mut grads = tape.backward(loss).map_err(|e| match e {
            CwmError::Numerics(m) => CwmError::Numerics(format!("classifier epoch {epoch}: {m}")),
            other => other,
        })?;
        let grad_vec: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
        adam.apply(&mut params, &grad_vec)?;
    }

    Ok(Classifier {
        in_dim,
        config: cfg.clone(),
        params,
    })
}

impl Classifier {
    fn logits(&self, input: &[f64]) -> Result<[f64; 2]> {
        if input.len() != self.in_dim {
            return Err(CwmError::Schema(format!(
                "classifier input of dim {}, expected {}",
                input.len(),
                self.in_dim
            )));
        }
        let fwd = |x: &[f64], w: &Tensor, b: &Tensor, relu: bool| -> Vec<f64> {
            let (rows_in, cols) = (w.shape()[0], w.shape()[1]);
            debug_assert_eq!(x.len(), rows_in);
            let mut out = b.data().to_vec();
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &w.data()[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    out[j] += xi * wrow[j];
                }
            }
            if relu {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            out
        };
        let h1 = fwd(
            input,
            self.params.get("cls.fc1.w")?,
            self.params.get("cls.fc1.b")?,
            true,
        );
        let h2 = fwd(
            &h1,
            self.params.get("cls.fc2.w")?,
            self.params.get("cls.fc2.b")?,
            true,
        );
        let z = fwd(
            &h2,
            self.params.get("cls.fc3.w")?,
            self.params.get("cls.fc3.b")?,
            false,
        );
        Ok([z[0], z[1]])
    }

    /// Softmax over the two logits: [p(unsolved), p(solved)].
    pub fn probabilities(&self, latent: &LatentSlots) -> Result<[f64; 2]> {
        let [z0, z1] = self.logits(latent.flat())?;
        Ok([stable_sigmoid(z0 - z1), stable_sigmoid(z1 - z0)])
    }

    pub fn prob_solved(&self, latent: &LatentSlots) -> Result<f64> {
        Ok(self.probabilities(latent)?[1])
    }

    /// Training accuracy at the decision threshold 0.5.
    pub fn accuracy(&self, data: &[(LatentSlots, bool)]) -> Result<f64> {
        let mut correct = 0usize;
        for (l, y) in data {
            let p = self.prob_solved(l)?;
            if (p > 0.5) == *y {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn latent(data: Vec<f64>) -> LatentSlots {
        let d = data.len();
        LatentSlots::new(Tensor::new(vec![1, d], data).unwrap()).unwrap()
    }

    fn separable_data(n: usize, seed: u64) -> Vec<(LatentSlots, bool)> {
        // solved points cluster at +1, unsolved at -1, on a 4d diagonal
        let mut rng = Stream::new(seed);
        (0..n)
            .map(|i| {
                let solved = i % 2 == 0;
                let center = if solved { 1.0 } else { -1.0 };
                let v: Vec<f64> = (0..4).map(|_| center + rng.uniform(-0.3, 0.3)).collect();
                (latent(v), solved)
            })
            .collect()
    }

    #[test]
    fn separable_latents_reach_high_accuracy() {
        let data = separable_data(120, 3);
        let cfg = ClassifierConfig {
            epochs: 200,
            hidden1: 32,
            hidden2: 16,
            lr: 3e-3,
            ..ClassifierConfig::default()
        };
        let cls = train_classifier(&data, &cfg).unwrap();
        let acc = cls.accuracy(&data).unwrap();
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn same_seed_identical_weights() {
        let data = separable_data(40, 9);
        let cfg = ClassifierConfig {
            epochs: 20,
            hidden1: 16,
            hidden2: 8,
            ..ClassifierConfig::default()
        };
        let a = train_classifier(&data, &cfg).unwrap();
        let b = train_classifier(&data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn softmax_sums_to_one() {
        let data = separable_data(40, 5);
        let cfg = ClassifierConfig {
            epochs: 10,
            hidden1: 16,
            hidden2: 8,
            ..ClassifierConfig::default()
        };
        let cls = train_classifier(&data, &cfg).unwrap();
        let mut rng = Stream::new(2);
        for _ in 0..50 {
            let l = latent((0..4).map(|_| rng.uniform(-3.0, 3.0)).collect());
            let p = cls.probabilities(&l).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_class_data_is_a_training_error() {
        let data: Vec<(LatentSlots, bool)> =
            (0..10).map(|i| (latent(vec![i as f64]), true)).collect();
        assert!(matches!(
            train_classifier(&data, &ClassifierConfig::default()),
            Err(CwmError::Training(_))
        ));
    }
}
