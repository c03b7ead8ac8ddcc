//! Grid rasterization of world states.
//!
//! Each ball paints its own identity channel with the fraction of pixel area
//! it covers (4x4 supersampling); the final channel is the background. Pixel
//! row 0 is the top of the arena.

use serde::{Deserialize, Serialize};

use super::world::WorldState;
use crate::error::{CwmError, Result};

const SUPERSAMPLE: usize = 4;

/// A C x H x W observation grid with values in [0, 1], stored in f32 (the
/// on-disk precision).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub channels: usize,
    pub resolution: usize,
    pub grid: Vec<f32>,
}

impl Observation {
    pub fn channel(&self, c: usize) -> &[f32] {
        let px = self.resolution * self.resolution;
        &self.grid[c * px..(c + 1) * px]
    }

    /// Sum of one channel (coverage mass in pixel-area units).
    pub fn channel_mass(&self, c: usize) -> f64 {
        self.channel(c).iter().map(|&v| v as f64).sum()
    }

    /// Channel-wise concatenation of two same-resolution observations.
    pub fn concat_channels(&self, other: &Observation) -> Result<Observation> {
        if self.resolution != other.resolution {
            return Err(CwmError::Schema(format!(
                "cannot concatenate observations of resolution {} and {}",
                self.resolution, other.resolution
            )));
        }
        let mut grid = Vec::with_capacity(self.grid.len() + other.grid.len());
        grid.extend_from_slice(&self.grid);
        grid.extend_from_slice(&other.grid);
        Ok(Observation {
            channels: self.channels + other.channels,
            resolution: self.resolution,
            grid,
        })
    }
}

/// Rasterize a state into K ball channels plus one background channel.
///
/// Balls are painted independently; where their total coverage exceeds one,
/// the ball channels are rescaled so every pixel's channel vector sums to at
/// most one. A ball too small to catch any supersample point still paints its
/// analytic coverage onto the pixel containing its center.
pub fn render(state: &WorldState, resolution: usize) -> Result<Observation> {
    if resolution < 8 {
        return Err(CwmError::Schema(format!(
            "resolution must be >= 8, got {resolution}"
        )));
    }
    state.validate()?;

    let k = state.ball_count();
    let px = resolution * resolution;
    let mut grid = vec![0.0f32; (k + 1) * px];
    let inv_res = 1.0 / resolution as f64;
    let inv_ss = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;

    for ball in 0..k {
        if !state.alive[ball] {
            continue;
        }
        let [cx, cy] = state.positions[ball];
        let r = state.radii[ball];
        let r2 = r * r;
        let channel = &mut grid[ball * px..(ball + 1) * px];

        // Bounding box of the circle in pixel coordinates.
        let col_lo = (((cx - r) * resolution as f64).floor().max(0.0)) as usize;
        let col_hi = (((cx + r) * resolution as f64).ceil().min(resolution as f64)) as usize;
        let row_lo = ((((1.0 - cy) - r) * resolution as f64).floor().max(0.0)) as usize;
        let row_hi = ((((1.0 - cy) + r) * resolution as f64).ceil().min(resolution as f64)) as usize;

        let mut painted = 0.0f64;
        for row in row_lo..row_hi {
            for col in col_lo..col_hi {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = (col as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) * inv_res;
                        let y = 1.0 - (row as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) * inv_res;
                        let dx = x - cx;
                        let dy = y - cy;
                        if dx * dx + dy * dy <= r2 {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let v = hits as f64 * inv_ss;
                    channel[row * resolution + col] = v as f32;
                    painted += v;
                }
            }
        }

        if painted == 0.0 {
            // Sub-sample-point ball: paint the analytic coverage of its
            // center pixel.
            let col = ((cx * resolution as f64) as usize).min(resolution - 1);
            let row = (((1.0 - cy) * resolution as f64) as usize).min(resolution - 1);
            let coverage = (std::f64::consts::PI * r2 * (resolution * resolution) as f64).min(1.0);
            channel[row * resolution + col] = coverage as f32;
        }
    }

    // Background and per-pixel normalization.
    for p in 0..px {
        let mut total = 0.0f64;
        for ball in 0..k {
            total += grid[ball * px + p] as f64;
        }
        if total > 1.0 {
            let scale = 1.0 / total;
            for ball in 0..k {
                grid[ball * px + p] = (grid[ball * px + p] as f64 * scale) as f32;
            }
            total = 1.0;
        }
        grid[k * px + p] = (1.0 - total).max(0.0) as f32;
    }

    Ok(Observation {
        channels: k + 1,
        resolution,
        grid,
    })
}
