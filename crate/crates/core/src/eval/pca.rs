//! Two-component PCA projection of latent trajectories.

use crate::error::{CwmError, Result};
use crate::model::LatentSlots;

#[derive(Clone, Debug)]
pub struct PcaProjection {
    pub points: Vec<[f64; 2]>,
    /// Variance carried by each kept component.
    pub explained: [f64; 2],
    /// Total variance (trace of the covariance).
    pub total_variance: f64,
    /// Set when fewer than two directions carry variance; missing components
    /// are zero-padded.
    pub rank_deficient: bool,
}

/// Jacobi eigendecomposition of a symmetric matrix. Returns (eigenvalues,
/// column eigenvectors), unsorted.
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(1.0_f64, f64::max);
    let tol = 1e-14 * scale;

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[p * n + i];
                    let aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| a[i * n + i]).collect();
    (eigvals, v)
}

/// Center the trajectory, take the top-2 principal directions of its sample
/// covariance, and project. Sign convention: each component's
/// largest-magnitude loading is positive.
pub fn pca_project(latent_traj: &[LatentSlots]) -> Result<PcaProjection> {
    if latent_traj.len() < 2 {
        return Err(CwmError::Schema(format!(
            "pca needs at least 2 points, got {}",
            latent_traj.len()
        )));
    }
    let dim = latent_traj[0].flat().len();
    for l in latent_traj {
        if l.flat().len() != dim {
            return Err(CwmError::Schema("pca over mixed dimensions".into()));
        }
    }
    let n = latent_traj.len();

    let mut mean = vec![0.0; dim];
    for l in latent_traj {
        for (m, &x) in mean.iter_mut().zip(l.flat()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let centered: Vec<Vec<f64>> = latent_traj
        .iter()
        .map(|l| l.flat().iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut cov = vec![0.0; dim * dim];
    for row in &centered {
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] += row[i] * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for c in &mut cov {
        *c /= denom;
    }
    let total_variance: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();

    let (eigvals, eigvecs) = jacobi_eigen(cov, dim);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigvals[b]
            .partial_cmp(&eigvals[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let tol = 1e-12 * total_variance.max(1e-300);
    let mut components = [vec![0.0; dim], vec![0.0; dim]];
    let mut explained = [0.0, 0.0];
    let mut kept = 0;
    for c in 0..2.min(dim) {
        let idx = order[c];
        if eigvals[idx] <= tol {
            break;
        }
        let mut comp: Vec<f64> = (0..dim).map(|i| eigvecs[i * dim + idx]).collect();
        // Largest-magnitude loading positive; first index wins ties.
        let lead = (0..dim)
            .max_by(|&a, &b| {
                comp[a]
                    .abs()
                    .partial_cmp(&comp[b].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .unwrap();
        if comp[lead] < 0.0 {
            for x in &mut comp {
                *x = -*x;
            }
        }
        explained[c] = eigvals[idx];
        components[c] = comp;
        kept += 1;
    }

    let points = centered
        .iter()
        .map(|row| {
            let x: f64 = row.iter().zip(&components[0]).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&components[1]).map(|(a, b)| a * b).sum();
            [x, y]
        })
        .collect();

    Ok(PcaProjection {
        points,
        explained,
        total_variance,
        rank_deficient: kept < 2,
    })
}
