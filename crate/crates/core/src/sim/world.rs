//! World state, hidden confounders, and the deterministic physics step.
//!
//! Dynamics: semi-implicit Euler (velocity, then position) with per-ball
//! linear velocity damping as friction, impulse-based elastic ball-ball
//! collisions resolved in ball-index order, and mirror reflections at the
//! arena walls. Confounders (masses, frictions, gravity) influence the
//! transition but never appear in observations.

use serde::{Deserialize, Serialize};

use super::config::Arena;
use crate::error::{CwmError, Result};

/// Positions, velocities, radii, and liveness of K balls at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub radii: Vec<f64>,
    pub alive: Vec<bool>,
}

impl WorldState {
    pub fn ball_count(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.positions.len();
        if self.velocities.len() != k || self.radii.len() != k || self.alive.len() != k {
            return Err(CwmError::InvalidState(format!(
                "field lengths disagree: {} / {} / {} / {}",
                k,
                self.velocities.len(),
                self.radii.len(),
                self.alive.len()
            )));
        }
        for i in 0..k {
            let finite = self.positions[i].iter().all(|v| v.is_finite())
                && self.velocities[i].iter().all(|v| v.is_finite())
                && self.radii[i].is_finite();
            if !finite {
                return Err(CwmError::InvalidState(format!("non-finite ball {i}")));
            }
            if self.radii[i] <= 0.0 {
                return Err(CwmError::InvalidState(format!(
                    "radius of ball {i} must be positive"
                )));
            }
            if !self.alive[i] && self.velocities[i] != [0.0, 0.0] {
                return Err(CwmError::InvalidState(format!(
                    "removed ball {i} must have zero velocity"
                )));
            }
        }
        Ok(())
    }

    /// Total kinetic energy of alive balls.
    pub fn kinetic_energy(&self, u: &Confounders) -> f64 {
        let mut e = 0.0;
        for i in 0..self.ball_count() {
            if self.alive[i] {
                let v = self.velocities[i];
                e += 0.5 * u.masses[i] * (v[0] * v[0] + v[1] * v[1]);
            }
        }
        e
    }

    /// Total momentum of alive balls.
    pub fn momentum(&self, u: &Confounders) -> [f64; 2] {
        let mut p = [0.0, 0.0];
        for i in 0..self.ball_count() {
            if self.alive[i] {
                p[0] += u.masses[i] * self.velocities[i][0];
                p[1] += u.masses[i] * self.velocities[i][1];
            }
        }
        p
    }

    /// Round every scalar through f32. Generated episodes pass each state
    /// through this so on-disk 32-bit storage is lossless.
    pub fn quantize(&mut self) {
        for p in &mut self.positions {
            p[0] = p[0] as f32 as f64;
            p[1] = p[1] as f32 as f64;
        }
        for v in &mut self.velocities {
            v[0] = v[0] as f32 as f64;
            v[1] = v[1] as f32 as f64;
        }
        for r in &mut self.radii {
            *r = *r as f32 as f64;
        }
    }
}

/// Hidden, time-invariant quantities that shape the dynamics: per-ball masses
/// and friction coefficients plus a global gravity vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confounders {
    pub masses: Vec<f64>,
    pub frictions: Vec<f64>,
    pub gravity: [f64; 2],
}

impl Confounders {
    pub fn validate(&self) -> Result<()> {
        if self.masses.len() != self.frictions.len() {
            return Err(CwmError::InvalidState(
                "confounder lengths disagree".into(),
            ));
        }
        for (i, &m) in self.masses.iter().enumerate() {
            if !(m.is_finite() && m > 0.0) {
                return Err(CwmError::InvalidState(format!("mass {i} must be positive")));
            }
        }
        for (i, &f) in self.frictions.iter().enumerate() {
            if !(f.is_finite() && (0.0..1.0).contains(&f)) {
                return Err(CwmError::InvalidState(format!(
                    "friction {i} must be in [0, 1)"
                )));
            }
        }
        if !(self.gravity[0].is_finite() && self.gravity[1].is_finite()) {
            return Err(CwmError::InvalidState("gravity must be finite".into()));
        }
        Ok(())
    }

    pub fn quantize(&mut self) {
        for m in &mut self.masses {
            *m = *m as f32 as f64;
        }
        for f in &mut self.frictions {
            *f = *f as f32 as f64;
        }
        self.gravity[0] = self.gravity[0] as f32 as f64;
        self.gravity[1] = self.gravity[1] as f32 as f64;
    }
}

/// What happened during one step, for instrumentation and tests.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepEvents {
    /// Ball pairs that exchanged an impulse, in resolution order.
    pub collisions: Vec<(usize, usize)>,
    /// Number of wall reflections.
    pub wall_hits: usize,
}

/// One simulation step inside the unit-square arena.
pub fn step_world(state: &WorldState, u: &Confounders, dt: f64) -> Result<WorldState> {
    Ok(step_world_events(state, u, dt, &Arena::UNIT)?.0)
}

/// One simulation step with event reporting and an explicit arena.
pub fn step_world_events(
    state: &WorldState,
    u: &Confounders,
    dt: f64,
    arena: &Arena,
) -> Result<(WorldState, StepEvents)> {
    state.validate()?;
    u.validate()?;
    if state.ball_count() != u.masses.len() {
        return Err(CwmError::InvalidState(format!(
            "{} balls but {} confounder entries",
            state.ball_count(),
            u.masses.len()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(CwmError::InvalidState(format!("dt must be positive, got {dt}")));
    }

    let mut next = state.clone();
    let mut events = StepEvents::default();
    let k = next.ball_count();

    // Velocity then position, with friction as linear damping.
    for i in 0..k {
        if !next.alive[i] {
            continue;
        }
        let damp = 1.0 - u.frictions[i] * dt;
        next.velocities[i][0] = (next.velocities[i][0] + u.gravity[0] * dt) * damp;
        next.velocities[i][1] = (next.velocities[i][1] + u.gravity[1] * dt) * damp;
        next.positions[i][0] += next.velocities[i][0] * dt;
        next.positions[i][1] += next.velocities[i][1] * dt;
    }

    // Elastic impulses, fixed (i, j) order with i < j.
    for i in 0..k {
        if !next.alive[i] {
            continue;
        }
        for j in (i + 1)..k {
            if !next.alive[j] {
                continue;
            }
            let dx = next.positions[j][0] - next.positions[i][0];
            let dy = next.positions[j][1] - next.positions[i][1];
            let dist2 = dx * dx + dy * dy;
            let rsum = next.radii[i] + next.radii[j];
            if dist2 >= rsum * rsum || dist2 == 0.0 {
                continue;
            }
            let dist = dist2.sqrt();
            let nx = dx / dist;
            let ny = dy / dist;
            // Closing speed along the center line; only approaching pairs
            // exchange an impulse, so a resolved pair separates freely.
            let rel = (next.velocities[i][0] - next.velocities[j][0]) * nx
                + (next.velocities[i][1] - next.velocities[j][1]) * ny;
            if rel <= 0.0 {
                continue;
            }
            let (mi, mj) = (u.masses[i], u.masses[j]);
            let impulse = 2.0 * rel / (1.0 / mi + 1.0 / mj);
            next.velocities[i][0] -= impulse / mi * nx;
            next.velocities[i][1] -= impulse / mi * ny;
            next.velocities[j][0] += impulse / mj * nx;
            next.velocities[j][1] += impulse / mj * ny;
            events.collisions.push((i, j));
        }
    }

    // Mirror reflections keep the ball inside and preserve speed.
    let bounds = [arena.width, arena.height];
    for i in 0..k {
        if !next.alive[i] {
            continue;
        }
        let r = next.radii[i];
        for (axis, &bound) in bounds.iter().enumerate() {
            let (lo, hi) = (r, bound - r);
            if lo > hi {
                // Ball too large for the arena; pin it to the center line.
                next.positions[i][axis] = bounds[axis] / 2.0;
                next.velocities[i][axis] = 0.0;
                continue;
            }
            let mut guard = 0;
            while next.positions[i][axis] < lo || next.positions[i][axis] > hi {
                if next.positions[i][axis] < lo {
                    next.positions[i][axis] = 2.0 * lo - next.positions[i][axis];
                } else {
                    next.positions[i][axis] = 2.0 * hi - next.positions[i][axis];
                }
                next.velocities[i][axis] = -next.velocities[i][axis];
                events.wall_hits += 1;
                guard += 1;
                if guard > 16 {
                    next.positions[i][axis] = next.positions[i][axis].clamp(lo, hi);
                    next.velocities[i][axis] = 0.0;
                    break;
                }
            }
        }
    }

    next.validate()?;
    Ok((next, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_ball(pos: [f64; 2], vel: [f64; 2]) -> (WorldState, Confounders) {
        (
            WorldState {
                positions: vec![pos],
                velocities: vec![vel],
                radii: vec![0.05],
                alive: vec![true],
            },
            Confounders {
                masses: vec![1.0],
                frictions: vec![0.0],
                gravity: [0.0, 0.0],
            },
        )
    }

    #[test]
    fn resting_ball_is_a_fixed_point() {
        let (s, u) = single_ball([0.5, 0.5], [0.0, 0.0]);
        let next = step_world(&s, &u, 1.0).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn head_on_equal_masses_exchange_velocities() {
        // Closed-form 1D elastic collision: equal masses swap velocities.
        let v = 0.02;
        let s = WorldState {
            positions: vec![[0.45, 0.5], [0.55, 0.5]],
            velocities: vec![[v, 0.0], [-v, 0.0]],
            radii: vec![0.05, 0.05],
            alive: vec![true, true],
        };
        let u = Confounders {
            masses: vec![1.3, 1.3],
            frictions: vec![0.0, 0.0],
            gravity: [0.0, 0.0],
        };
        // After integrating one step they overlap and resolve.
        let next = step_world(&s, &u, 1.0).unwrap();
        assert!((next.velocities[0][0] - (-v)).abs() < 1e-9 * v.abs());
        assert!((next.velocities[1][0] - v).abs() < 1e-9 * v.abs());
    }

    #[test]
    fn gravity_closed_form_recurrence() {
        // Semi-implicit with zero friction: v_n = -g n dt,
        // y_n = y_0 - g dt^2 n(n+1)/2.
        let g = 0.001;
        let dt = 0.5;
        let y0 = 0.9;
        let (mut s, mut u) = single_ball([0.5, y0], [0.0, 0.0]);
        u.gravity = [0.0, -g];
        let n = 10;
        for _ in 0..n {
            s = step_world(&s, &u, dt).unwrap();
        }
        let nf = n as f64;
        let v_expect = -g * nf * dt;
        let y_expect = y0 - g * dt * dt * nf * (nf + 1.0) / 2.0;
        assert!((s.velocities[0][1] - v_expect).abs() <= 1e-9 * v_expect.abs());
        assert!((s.positions[0][1] - y_expect).abs() <= 1e-9 * y_expect.abs());
    }

    #[test]
    fn wall_reflection_preserves_speed() {
        let (mut s, u) = single_ball([0.08, 0.5], [-0.05, 0.0]);
        s.radii[0] = 0.05;
        let next = step_world(&s, &u, 1.0).unwrap();
        assert!(next.positions[0][0] >= 0.05);
        assert_eq!(next.velocities[0][0], 0.05);
    }

    #[test]
    fn dead_balls_do_not_collide() {
        let s = WorldState {
            positions: vec![[0.5, 0.5], [0.52, 0.5]],
            velocities: vec![[0.0, 0.0], [0.0, 0.0]],
            radii: vec![0.05, 0.05],
            alive: vec![true, false],
        };
        let u = Confounders {
            masses: vec![1.0, 1.0],
            frictions: vec![0.0, 0.0],
            gravity: [0.0, 0.0],
        };
        let (next, events) = step_world_events(&s, &u, 1.0, &Arena::UNIT).unwrap();
        assert!(events.collisions.is_empty());
        assert_eq!(next, s);
    }

    #[test]
    fn non_finite_input_is_invalid_state() {
        let (mut s, u) = single_ball([0.5, 0.5], [0.0, 0.0]);
        s.positions[0][0] = f64::NAN;
        assert!(matches!(
            step_world(&s, &u, 1.0),
            Err(CwmError::InvalidState(_))
        ));
    }

    #[test]
    fn momentum_conserved_in_collisions() {
        let s = WorldState {
            positions: vec![[0.40, 0.50], [0.54, 0.51]],
            velocities: vec![[0.05, 0.001], [-0.05, -0.002]],
            radii: vec![0.06, 0.07],
            alive: vec![true, true],
        };
        let u = Confounders {
            masses: vec![0.7, 1.9],
            frictions: vec![0.0, 0.0],
            gravity: [0.0, 0.0],
        };
        let before = s.momentum(&u);
        let (next, events) = step_world_events(&s, &u, 1.0, &Arena::UNIT).unwrap();
        assert!(!events.collisions.is_empty());
        assert_eq!(events.wall_hits, 0);
        let after = next.momentum(&u);
        for a in 0..2 {
            assert!((before[a] - after[a]).abs() < 1e-9 * before[a].abs().max(1.0));
        }
    }
}
