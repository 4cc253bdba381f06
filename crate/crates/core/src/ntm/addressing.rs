//! Head addressing and memory access, composed from tape operations.
//!
//! A head's weighting is produced in four stages: content focus by cosine
//! similarity, interpolation with the previous weighting, a circular shift,
//! and sharpening. Every stage maps a distribution to a distribution.

use crate::diff::{Tape, Var};
use crate::error::Result;

/// Guard added to the norm product in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Addressing and memory-update parameters for one head on one step.
#[derive(Clone, Copy, Debug)]
pub struct HeadControls {
    pub key: Var,
    pub strength: Var,
    pub gate: Var,
    pub shift: Var,
    pub sharpen: Var,
    pub erase: Option<Var>,
    pub add: Option<Var>,
}

/// Intermediate weightings of one addressing pass.
#[derive(Clone, Copy, Debug)]
pub struct AddressStages {
    pub content: Var,
    pub gated: Var,
    pub shifted: Var,
    pub sharpened: Var,
}

/// `softmax_i(strength * cos(key, memory[i]))`
pub fn content_address(tape: &mut Tape, memory: Var, key: Var, strength: Var) -> Result<Var> {
    let sims = tape.cosine_rows(memory, key, COSINE_EPS)?;
    let scaled = tape.mul_scalar(sims, strength)?;
    Ok(tape.softmax(scaled))
}

/// `gate * content + (1 - gate) * previous`
pub fn interpolate(tape: &mut Tape, content: Var, previous: Var, gate: Var) -> Result<Var> {
    let keep = tape.affine(gate, -1.0, 1.0);
    let a = tape.mul_scalar(content, gate)?;
    let b = tape.mul_scalar(previous, keep)?;
    tape.add(a, b)
}

/// Rotates the weighting by the offsets `-w/2..=w/2` of the shift kernel.
pub fn shift(tape: &mut Tape, weighting: Var, kernel: Var) -> Result<Var> {
    tape.circular_convolve(weighting, kernel)
}

/// `w^gamma / sum(w^gamma)`
pub fn sharpen(tape: &mut Tape, weighting: Var, gamma: Var) -> Result<Var> {
    let powered = tape.pow_scalar(weighting, gamma)?;
    tape.normalize(powered)
}

pub fn address_stages(
    tape: &mut Tape,
    memory: Var,
    previous: Var,
    head: &HeadControls,
) -> Result<AddressStages> {
    let content = content_address(tape, memory, head.key, head.strength)?;
    let gated = interpolate(tape, content, previous, head.gate)?;
    let shifted = shift(tape, gated, head.shift)?;
    let sharpened = sharpen(tape, shifted, head.sharpen)?;
    Ok(AddressStages {
        content,
        gated,
        shifted,
        sharpened,
    })
}

pub fn address(tape: &mut Tape, memory: Var, previous: Var, head: &HeadControls) -> Result<Var> {
    Ok(address_stages(tape, memory, previous, head)?.sharpened)
}

/// `sum_i w[i] * memory[i]`
pub fn read(tape: &mut Tape, memory: Var, weighting: Var) -> Result<Var> {
    tape.matmul(weighting, memory)
}

/// `memory[i] * (1 - w[i] * erase) + w[i] * add`, row by row.
pub fn write(tape: &mut Tape, memory: Var, weighting: Var, erase: Var, add: Var) -> Result<Var> {
    let erase_mask = tape.outer(weighting, erase)?;
    let retain = tape.affine(erase_mask, -1.0, 1.0);
    let kept = tape.mul(memory, retain)?;
    let added = tape.outer(weighting, add)?;
    tape.add(kept, added)
}
