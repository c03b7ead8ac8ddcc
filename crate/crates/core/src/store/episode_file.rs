//! The `.cwmb` episode container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "CWM1"
//! u32     n_balls, t_factual, t_cf, channels, height, width
//! u64     seed
//! f32[]   confounders: masses[K], frictions[K], gravity[2]
//! f32[]   factual states:  T  x (pos[K][2], vel[K][2], radii[K], alive[K])
//! f32[]   factual obs:     T  x C*H*W
//! f32[4]  intervention: kind (0 removal, 1 displacement), ball, dx, dy
//! f32[]   counterfactual states: T' x state
//! f32[]   counterfactual obs:    T' x C*H*W
//! ```
//!
//! Every float written here was already rounded through f32 during episode
//! generation, so write -> read reproduces the in-memory pair bit-exactly.

use crate::error::{CwmError, Result};
use crate::sim::{Confounders, EpisodePair, Intervention, Observation, WorldState};

pub const MAGIC: [u8; 4] = *b"CWM1";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_as_f32(&mut self, v: f64) {
        self.f32(v as f32);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CwmError::CorruptData(format!(
                "{}: truncated at byte {} (need {n} more of {})",
                self.context,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(self.f32()? as f64)
    }
}

fn write_state(w: &mut Writer, s: &WorldState) {
    for p in &s.positions {
        w.f64_as_f32(p[0]);
        w.f64_as_f32(p[1]);
    }
    for v in &s.velocities {
        w.f64_as_f32(v[0]);
        w.f64_as_f32(v[1]);
    }
    for &r in &s.radii {
        w.f64_as_f32(r);
    }
    for &a in &s.alive {
        w.f32(if a { 1.0 } else { 0.0 });
    }
}

fn read_state(r: &mut Reader, k: usize) -> Result<WorldState> {
    let mut positions = Vec::with_capacity(k);
    for _ in 0..k {
        positions.push([r.f64()?, r.f64()?]);
    }
    let mut velocities = Vec::with_capacity(k);
    for _ in 0..k {
        velocities.push([r.f64()?, r.f64()?]);
    }
    let mut radii = Vec::with_capacity(k);
    for _ in 0..k {
        radii.push(r.f64()?);
    }
    let mut alive = Vec::with_capacity(k);
    for _ in 0..k {
        alive.push(r.f32()? != 0.0);
    }
    Ok(WorldState {
        positions,
        velocities,
        radii,
        alive,
    })
}

fn write_obs(w: &mut Writer, o: &Observation) {
    for &v in &o.grid {
        w.f32(v);
    }
}

fn read_obs(r: &mut Reader, channels: usize, resolution: usize) -> Result<Observation> {
    let n = channels * resolution * resolution;
    let mut grid = Vec::with_capacity(n);
    for _ in 0..n {
        grid.push(r.f32()?);
    }
    Ok(Observation {
        channels,
        resolution,
        grid,
    })
}

/// Serialize one episode pair to its on-disk byte form.
pub fn encode_episode(pair: &EpisodePair) -> Result<Vec<u8>> {
    let k = pair.ball_count();
    let (t, t_cf) = (pair.horizon_factual(), pair.horizon_cf());
    let channels = pair.obs_channels();
    let res = pair.resolution();
    if pair.factual_obs.len() != t || pair.cf_obs.len() != t_cf {
        return Err(CwmError::Schema(
            "state and observation trajectory lengths disagree".into(),
        ));
    }
    for s in pair.factual_states.iter().chain(&pair.cf_states) {
        if s.ball_count() != k {
            return Err(CwmError::Schema("inconsistent ball count in states".into()));
        }
    }
    for o in pair.factual_obs.iter().chain(&pair.cf_obs) {
        if o.channels != channels || o.resolution != res {
            return Err(CwmError::Schema("inconsistent observation shape".into()));
        }
    }

    let mut w = Writer::new();
    w.buf.extend_from_slice(&MAGIC);
    w.u32(k as u32);
    w.u32(t as u32);
    w.u32(t_cf as u32);
    w.u32(channels as u32);
    w.u32(res as u32);
    w.u32(res as u32);
    w.u64(pair.seed);

    for &m in &pair.confounders.masses {
        w.f64_as_f32(m);
    }
    for &f in &pair.confounders.frictions {
        w.f64_as_f32(f);
    }
    w.f64_as_f32(pair.confounders.gravity[0]);
    w.f64_as_f32(pair.confounders.gravity[1]);

    for s in &pair.factual_states {
        write_state(&mut w, s);
    }
    for o in &pair.factual_obs {
        write_obs(&mut w, o);
    }

    match &pair.intervention {
        Intervention::Removal { ball } => {
            w.f32(0.0);
            w.f32(*ball as f32);
            w.f32(0.0);
            w.f32(0.0);
        }
        Intervention::Displacement { ball, delta } => {
            w.f32(1.0);
            w.f32(*ball as f32);
            w.f64_as_f32(delta[0]);
            w.f64_as_f32(delta[1]);
        }
    }

    for s in &pair.cf_states {
        write_state(&mut w, s);
    }
    for o in &pair.cf_obs {
        write_obs(&mut w, o);
    }
    Ok(w.buf)
}

/// Parse one episode pair from bytes. `context` names the file for error
/// messages.
pub fn decode_episode(bytes: &[u8], context: &str) -> Result<EpisodePair> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        context,
    };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(CwmError::CorruptData(format!(
            "{context}: bad magic {magic:?}"
        )));
    }
    let k = r.u32()? as usize;
    let t = r.u32()? as usize;
    let t_cf = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w_dim = r.u32()? as usize;
    if h != w_dim {
        return Err(CwmError::CorruptData(format!(
            "{context}: non-square observations {h}x{w_dim}"
        )));
    }
    if k == 0 || t < 2 || t_cf < 2 || channels != k + 1 {
        return Err(CwmError::CorruptData(format!(
            "{context}: implausible header (k={k}, t={t}, t'={t_cf}, c={channels})"
        )));
    }
    let seed = r.u64()?;

    let mut masses = Vec::with_capacity(k);
    for _ in 0..k {
        masses.push(r.f64()?);
    }
    let mut frictions = Vec::with_capacity(k);
    for _ in 0..k {
        frictions.push(r.f64()?);
    }
    let gravity = [r.f64()?, r.f64()?];
    let confounders = Confounders {
        masses,
        frictions,
        gravity,
    };

    let mut factual_states = Vec::with_capacity(t);
    for _ in 0..t {
        factual_states.push(read_state(&mut r, k)?);
    }
    let mut factual_obs = Vec::with_capacity(t);
    for _ in 0..t {
        factual_obs.push(read_obs(&mut r, channels, h)?);
    }

    let kind = r.f32()?;
    let ball = r.f32()? as usize;
    let dx = r.f64()?;
    let dy = r.f64()?;
    let intervention = match kind as u32 {
        0 => Intervention::Removal { ball },
        1 => Intervention::Displacement {
            ball,
            delta: [dx, dy],
        },
        other => {
            return Err(CwmError::CorruptData(format!(
                "{context}: unknown intervention kind {other}"
            )))
        }
    };

    let mut cf_states = Vec::with_capacity(t_cf);
    for _ in 0..t_cf {
        cf_states.push(read_state(&mut r, k)?);
    }
    let mut cf_obs = Vec::with_capacity(t_cf);
    for _ in 0..t_cf {
        cf_obs.push(read_obs(&mut r, channels, h)?);
    }

    if r.pos != bytes.len() {
        return Err(CwmError::CorruptData(format!(
            "{context}: {} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    Ok(EpisodePair {
        seed,
        confounders,
        intervention,
        factual_states,
        factual_obs,
        cf_states,
        cf_obs,
    })
}
