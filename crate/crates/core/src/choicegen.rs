//! Numeric-masked choice generation.
//!
//! Float values draw distractors from `[floor(v), floor(v) + 1]` at the
//! surface precision of `v`; integer values draw from `[-s|v|, s|v|]`.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decimal::{pow10, Decimal};
use crate::error::{ForgeError, Result};
use crate::extractor::{ceil_ratio, Instance, PipelineConfig};
use crate::numeric_lex::{NumericKind, NumericVariable};
use crate::rng::{sample_indices, uniform_below};

/// Rejection attempts per distractor before widening precision (floats) or
/// giving up (integers).
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSet {
    pub nv_ref: String,
    pub correct_value: Decimal,
    pub distractors: Vec<Decimal>,
    pub kind: NumericKind,
    /// The integer interval collapsed at zero and was widened to `[-s, s]`.
    pub zero_widened: bool,
    /// Float distractors needed more decimal places than the surface form.
    pub precision_escalated: bool,
}

/// Uniformly random `ceil(r_nv * M_t)` of the instance's variables, in span order.
pub fn select_variables<R: Rng + ?Sized>(inst: &Instance, cfg: &PipelineConfig, rng: &mut R) -> Vec<NumericVariable> {
    if inst.numerics.is_empty() {
        return Vec::new();
    }
    let k = ceil_ratio(cfg.r_nv, inst.numerics.len());
    sample_indices(inst.numerics.len(), k, rng)
        .into_iter()
        .map(|i| inst.numerics[i].clone())
        .collect()
}

/// A point of the `scale`-decimal grid over `[floor, floor + 1]`, distributed
/// as a uniform draw on the closed interval rounded half-up to the grid: the
/// two endpoints get half the mass of interior points.
fn draw_rounded<R: Rng + ?Sized>(floor: &BigInt, scale: u32, rng: &mut R) -> Decimal {
    let steps = pow10(scale);
    let twice: BigUint = (&steps * 2u8).to_biguint().expect("positive");
    let j = BigInt::from(uniform_below(&twice, rng));
    let k = (j + 1u8) / 2u8;
    Decimal::new(floor * &steps + k, scale)
}

pub fn gen_float_distractors<R: Rng + ?Sized>(v: &Decimal, n: usize, rng: &mut R) -> Vec<Decimal> {
    let floor = v.floor();
    let mut scale = v.scale().max(1);
    let mut out: Vec<Decimal> = Vec::with_capacity(n);
    while out.len() < n {
        let placed = (0..MAX_RETRIES).any(|_| {
            let candidate = draw_rounded(&floor, scale, rng);
            if candidate != *v && !out.contains(&candidate) {
                out.push(candidate);
                true
            } else {
                false
            }
        });
        if !placed {
            scale += 1;
        }
    }
    out
}

/// Largest integer `<= s * |v|`, with `v = 0` treated as `|v| = 1`.
fn integer_bound(v: &BigInt, s: &Decimal) -> (BigInt, bool) {
    let widened = v.is_zero();
    let magnitude = if widened { BigInt::one() } else { v.abs() };
    (s.mul(&Decimal::from_int(magnitude)).floor(), widened)
}

pub fn gen_int_distractors<R: Rng + ?Sized>(v: &BigInt, n: usize, s: f64, rng: &mut R) -> Result<Vec<BigInt>> {
    let s = Decimal::from_f64(s)
        .filter(|d| d > &Decimal::from_int(0))
        .ok_or_else(|| ForgeError::Config(format!("s must be positive (got {s})")))?;
    Ok(int_distractors(v, n, &s, rng)?.0)
}

fn int_distractors<R: Rng + ?Sized>(v: &BigInt, n: usize, s: &Decimal, rng: &mut R) -> Result<(Vec<BigInt>, bool)> {
    let (bound, widened) = integer_bound(v, s);
    if bound.is_negative() {
        return Err(insufficient(v, n, BigInt::zero()));
    }
    let width = &bound * 2u8 + 1u8;
    let available = if v.abs() <= bound { &width - 1u8 } else { width.clone() };
    if available < BigInt::from(n) {
        return Err(insufficient(v, n, available));
    }
    // Small ranges: sample without replacement from the explicit candidate list.
    if available <= BigInt::from(4 * n.max(1)) {
        let lo = -&bound;
        let candidates: Vec<BigInt> = (0..width.to_usize().expect("small range"))
            .map(|i| &lo + i)
            .filter(|c| c != v)
            .collect();
        let picks = shuffled_prefix(candidates.len(), n, rng);
        return Ok((picks.into_iter().map(|i| candidates[i].clone()).collect(), widened));
    }
    let width = width.to_biguint().expect("positive width");
    let mut out: Vec<BigInt> = Vec::with_capacity(n);
    while out.len() < n {
        let placed = (0..MAX_RETRIES).any(|_| {
            let candidate = BigInt::from(uniform_below(&width, rng)) - &bound;
            if candidate != *v && !out.contains(&candidate) {
                out.push(candidate);
                true
            } else {
                false
            }
        });
        if !placed {
            return Err(insufficient(v, n, available));
        }
    }
    Ok((out, widened))
}

/// First `k` entries of a random permutation of `0..n` (draw order kept).
fn shuffled_prefix<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn insufficient(v: &BigInt, needed: usize, available: BigInt) -> ForgeError {
    ForgeError::InsufficientRange {
        value: v.to_string(),
        needed,
        available: available.to_string(),
    }
}

pub fn make_choice_set<R: Rng + ?Sized>(nv: &NumericVariable, cfg: &PipelineConfig, rng: &mut R) -> Result<ChoiceSet> {
    if nv.structural {
        return Err(ForgeError::Input(format!(
            "structural variable `{}` cannot be masked",
            nv.nv_id
        )));
    }
    let n = cfg.n_cho - 1;
    let (distractors, zero_widened, precision_escalated) = match nv.kind {
        NumericKind::Float => {
            let values = gen_float_distractors(&nv.value, n, rng);
            let escalated = values.iter().any(|d| d.scale() > nv.value.scale());
            (values, false, escalated)
        }
        NumericKind::Integer => {
            let v = nv.value.to_integer().expect("integer kind has no fraction");
            let s = Decimal::from_f64(cfg.s).ok_or_else(|| ForgeError::Config(format!("bad s {}", cfg.s)))?;
            let (values, widened) = int_distractors(&v, n, &s, rng)?;
            (values.into_iter().map(Decimal::from_int).collect(), widened, false)
        }
    };
    Ok(ChoiceSet {
        nv_ref: nv.nv_id.clone(),
        correct_value: nv.value.clone(),
        distractors,
        kind: nv.kind,
        zero_widened,
        precision_escalated,
    })
}
