//! Invertible layers. Each layer runs on a [`Tape`] in either direction and
//! returns its output together with its log-determinant contribution
//! (negated in the inverse direction).

use crate::error::{Error, Result};
use crate::numerics::{linalg, Bindings, Padding, Tape, Tensor, Var};

/// Pre-activation bound for log-scales.
pub const LOG_SCALE_CLAMP: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Squeeze,
    ActNorm,
    InvMix,
    NoiseInjector,
    Coupling,
}

/// One layer of the flattened model, addressed by its parameter prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// 1-based squeeze level this layer belongs to.
    pub level: usize,
    pub prefix: String,
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        &self.prefix
    }
}

fn hw(tape: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    match *tape.value(x).shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape("flow layer", format!("expected [H,W,C], got {s:?}"))),
    }
}

fn check_finite(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Same-padded 3x3 conv, tanh, same-padded 3x3 conv.
pub fn conditioner(tape: &mut Tape, p: &Bindings, prefix: &str, input: Var) -> Result<Var> {
    let w1 = p.get(&format!("{prefix}.conv1.weight"))?;
    let b1 = p.get(&format!("{prefix}.conv1.bias"))?;
    let w2 = p.get(&format!("{prefix}.conv2.weight"))?;
    let b2 = p.get(&format!("{prefix}.conv2.bias"))?;
    let h = tape.conv2d(input, w1, Padding::Same)?;
    let h = tape.add_bcast(h, b1)?;
    let h = tape.tanh(h);
    let out = tape.conv2d(h, w2, Padding::Same)?;
    tape.add_bcast(out, b2)
}

/// Splits conditioner output into `(log_scale, shift)` with the log-scale clamped.
fn scale_shift(tape: &mut Tape, raw: Var, c: usize) -> Result<(Var, Var)> {
    let raw_s = tape.slice_last(raw, 0, c)?;
    let shift = tape.slice_last(raw, c, 2 * c)?;
    let log_s = tape.clamp(raw_s, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP);
    Ok((log_s, shift))
}

/// `y = s * (x + b)` per channel; log-det `H W sum log|s|`.
pub fn actnorm(
    tape: &mut Tape,
    p: &Bindings,
    prefix: &str,
    x: Var,
    dir: Direction,
) -> Result<(Var, Var)> {
    let (h, w, _) = hw(tape, x)?;
    let s = p.get(&format!("{prefix}.scale"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    if tape.value(s).data().contains(&0.0) {
        return Err(Error::Singular(format!("{prefix}: zero actnorm scale")));
    }
    let log_abs = tape.log_abs(s);
    let sum = tape.sum(log_abs);
    let ld = tape.scale(sum, (h * w) as f64);
    match dir {
        Direction::Forward => {
            let shifted = tape.add_bcast(x, b)?;
            let y = tape.mul_bcast(shifted, s)?;
            Ok((y, ld))
        }
        Direction::Inverse => {
            let ones = tape.constant(Tensor::ones(tape.value(s).shape()));
            let inv_s = tape.div(ones, s)?;
            let unscaled = tape.mul_bcast(x, inv_s)?;
            let neg_b = tape.neg(b);
            let y = tape.add_bcast(unscaled, neg_b)?;
            Ok((y, tape.neg(ld)))
        }
    }
}

/// Per-pixel channel mixing `y = W x`; log-det `H W log|det W|`.
pub fn invmix(
    tape: &mut Tape,
    p: &Bindings,
    prefix: &str,
    x: Var,
    dir: Direction,
) -> Result<(Var, Var)> {
    let (h, w, c) = hw(tape, x)?;
    let weight = p.get(&format!("{prefix}.weight"))?;
    let lad = tape
        .log_abs_det(weight)
        .map_err(|_| Error::Singular(format!("{prefix}: mixing matrix")))?;
    let ld = tape.scale(lad, (h * w) as f64);
    let flat = tape.reshape(x, &[h * w, c])?;
    let (mixed, ld) = match dir {
        Direction::Forward => {
            let wt = tape.transpose(weight)?;
            (tape.matmul(flat, wt)?, ld)
        }
        Direction::Inverse => {
            let inv = linalg::inverse(tape.value(weight).data(), c)
                .map_err(|_| Error::Singular(format!("{prefix}: mixing matrix")))?;
            let inv_t = tape.constant(Tensor::new(vec![c, c], linalg::transpose(&inv, c, c))?);
            (tape.matmul(flat, inv_t)?, tape.neg(ld))
        }
    };
    let y = tape.reshape(mixed, &[h, w, c])?;
    Ok((y, ld))
}

/// Elementwise affine map whose scale and shift depend only on the condition.
pub fn noise_injector(
    tape: &mut Tape,
    p: &Bindings,
    prefix: &str,
    x: Var,
    cond: Var,
    dir: Direction,
) -> Result<(Var, Var)> {
    let (_, _, c) = hw(tape, x)?;
    let raw = conditioner(tape, p, prefix, cond)?;
    let (log_s, shift) = scale_shift(tape, raw, c)?;
    check_finite(tape, log_s, &format!("{prefix}: scale"))?;
    let ld = tape.sum(log_s);
    match dir {
        Direction::Forward => {
            let scale = tape.exp(log_s);
            let y = tape.mul(x, scale)?;
            Ok((tape.add(y, shift)?, ld))
        }
        Direction::Inverse => {
            let neg = tape.neg(log_s);
            let inv_scale = tape.exp(neg);
            let d = tape.sub(x, shift)?;
            Ok((tape.mul(d, inv_scale)?, tape.neg(ld)))
        }
    }
}

/// Affine coupling: the first half of the channels (plus the condition)
/// parameterizes an affine map of the second half.
pub fn affine_coupling(
    tape: &mut Tape,
    p: &Bindings,
    prefix: &str,
    x: Var,
    cond: Var,
    dir: Direction,
) -> Result<(Var, Var)> {
    let (_, _, c) = hw(tape, x)?;
    if c < 2 {
        return Err(Error::shape(
            "affine_coupling",
            format!("{prefix}: need at least 2 channels, got {c}"),
        ));
    }
    let ca = c / 2;
    let xa = tape.slice_last(x, 0, ca)?;
    let xb = tape.slice_last(x, ca, c)?;
    let input = tape.concat_last(&[xa, cond])?;
    let raw = conditioner(tape, p, prefix, input)?;
    let (log_s, shift) = scale_shift(tape, raw, c - ca)?;
    check_finite(tape, log_s, &format!("{prefix}: scale"))?;
    let ld = tape.sum(log_s);
    let (yb, ld) = match dir {
        Direction::Forward => {
            let scale = tape.exp(log_s);
            let t = tape.mul(xb, scale)?;
            (tape.add(t, shift)?, ld)
        }
        Direction::Inverse => {
            let neg = tape.neg(log_s);
            let inv_scale = tape.exp(neg);
            let d = tape.sub(xb, shift)?;
            (tape.mul(d, inv_scale)?, tape.neg(ld))
        }
    };
    Ok((tape.concat_last(&[xa, yb])?, ld))
}
