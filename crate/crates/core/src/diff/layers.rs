//! Small layer compositions shared by the model and classifier code.

use super::tape::{Tape, Var};
use crate::error::Result;

/// y = x @ w + b for x[n, in], w[in, out], b[out].
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Parameter handles for one GRU layer.
#[derive(Clone, Copy)]
pub struct GruLayerVars {
    pub wxr: Var,
    pub whr: Var,
    pub br: Var,
    pub wxz: Var,
    pub whz: Var,
    pub bz: Var,
    pub wxn: Var,
    pub whn: Var,
    pub bn: Var,
}

/// One GRU step over a batch of sequences.
///
///   r = sigmoid(x Wxr + h Whr + br)
///   z = sigmoid(x Wxz + h Whz + bz)
///   n = tanh(x Wxn + r * (h Whn) + bn)
///   h' = (1 - z) * n + z * h
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, p: &GruLayerVars) -> Result<Var> {
    let xr = tape.matmul(x, p.wxr)?;
    let hr = tape.matmul(h, p.whr)?;
    let pre_r = tape.add(xr, hr)?;
    let pre_r = tape.add_row(pre_r, p.br)?;
    let r = tape.sigmoid(pre_r)?;

    let xz = tape.matmul(x, p.wxz)?;
    let hz = tape.matmul(h, p.whz)?;
    let pre_z = tape.add(xz, hz)?;
    let pre_z = tape.add_row(pre_z, p.bz)?;
    let z = tape.sigmoid(pre_z)?;

    let xn = tape.matmul(x, p.wxn)?;
    let hn = tape.matmul(h, p.whn)?;
    let gated = tape.mul(r, hn)?;
    let pre_n = tape.add(xn, gated)?;
    let pre_n = tape.add_row(pre_n, p.bn)?;
    let n = tape.tanh(pre_n)?;

    let one_minus_z = tape.affine(z, -1.0, 1.0)?;
    let a = tape.mul(one_minus_z, n)?;
    let b = tape.mul(z, h)?;
    tape.add(a, b)
}
