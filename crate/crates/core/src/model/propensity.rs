//! Diagonal Gaussian density over flattened initial latent states, used as
//! the propensity score of the historical sampling policy.

use serde::{Deserialize, Serialize};

use super::latent::LatentSlots;
use crate::error::{CwmError, Result};

const VAR_FLOOR: f64 = 1e-6;
const LN_TAU: f64 = 1.837877066409345; // ln(2 pi)

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Maximum-likelihood diagonal Gaussian fit. Requires at least two samples;
/// variances are floored at 1e-6.
pub fn fit_propensity(initial_latents: &[LatentSlots]) -> Result<PropensityModel> {
    if initial_latents.len() < 2 {
        return Err(CwmError::Propensity(format!(
            "need at least 2 samples, got {}",
            initial_latents.len()
        )));
    }
    let dim = initial_latents[0].flat().len();
    for l in initial_latents {
        if l.flat().len() != dim {
            return Err(CwmError::Propensity("mixed latent dimensions".into()));
        }
    }
    let n = initial_latents.len() as f64;
    let mut mean = vec![0.0; dim];
    for l in initial_latents {
        for (m, &x) in mean.iter_mut().zip(l.flat()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for l in initial_latents {
        for (j, &x) in l.flat().iter().enumerate() {
            let d = x - mean[j];
            var[j] += d * d;
        }
    }
    for v in &mut var {
        *v = (*v / n).max(VAR_FLOOR);
    }
    Ok(PropensityModel { mean, var })
}

impl PropensityModel {
    pub fn from_moments(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(CwmError::Propensity("moment lengths disagree".into()));
        }
        if var.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(CwmError::Propensity("variances must be positive".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.var
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(CwmError::Propensity(format!(
                "density query of dimension {} against a {}-dim fit",
                x.len(),
                self.dim()
            )));
        }
        let mut acc = 0.0;
        for ((&xj, &mj), &vj) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xj - mj;
            acc += LN_TAU + vj.ln() + d * d / vj;
        }
        Ok(-0.5 * acc)
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn latent1(v: f64) -> LatentSlots {
        LatentSlots::new(Tensor::new(vec![1, 1], vec![v]).unwrap()).unwrap()
    }

    #[test]
    fn fitted_mean_is_sample_mean_exactly() {
        let samples = vec![latent1(0.25), latent1(0.5), latent1(1.25)];
        let p = fit_propensity(&samples).unwrap();
        assert_eq!(p.mean()[0], (0.25 + 0.5 + 1.25) / 3.0);
    }

    #[test]
    fn standard_normal_density_at_mean() {
        // Samples {-1, 1}: ML mean 0, ML variance 1.
        let p = fit_propensity(&[latent1(-1.0), latent1(1.0)]).unwrap();
        let d = p.density(&[0.0]).unwrap();
        assert!((d - 0.3989422804014327).abs() < 1e-12, "{d}");
        assert!((d - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn one_sample_is_rejected() {
        assert!(matches!(
            fit_propensity(&[latent1(0.0)]),
            Err(CwmError::Propensity(_))
        ));
    }

    #[test]
    fn identical_samples_hit_variance_floor() {
        let p = fit_propensity(&[latent1(0.7), latent1(0.7), latent1(0.7)]).unwrap();
        assert_eq!(p.variances()[0], 1e-6);
    }

    #[test]
    fn quadrature_integrates_to_one() {
        // Trapezoid integration of a fitted 1D density over +-8 sigma.
        let samples = vec![latent1(0.1), latent1(0.9), latent1(0.4), latent1(0.6)];
        let p = fit_propensity(&samples).unwrap();
        let sigma = p.variances()[0].sqrt();
        let (lo, hi) = (p.mean()[0] - 8.0 * sigma, p.mean()[0] + 8.0 * sigma);
        let n = 200_001;
        let h = (hi - lo) / (n - 1) as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            acc += w * p.density(&[x]).unwrap();
        }
        let integral = acc * h;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }
}
