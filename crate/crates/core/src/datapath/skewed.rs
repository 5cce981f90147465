//! Skewed FMA pipeline.
//!
//! Stage 1 of PE `i` runs in the same cycle as stage 2 of PE `i-1`, so it only
//! sees the previous PE's *unnormalized* exponent `ê_{i-1}` (the exponent of
//! the adder's top bit). Its max/difference results are speculative.
//!
//! Stage 2 starts with the sign and exponent fix: the previous PE's LZA count
//! `L_{i-1}` arrives together with its unnormalized sum, giving the true
//! incoming exponent `e_{i-1} = ê_{i-1} - L_{i-1}` and the true alignment
//!
//! ```text
//! d_i = d'_i + L_{i-1}    if e_M >= ê_{i-1}
//! d_i = L_{i-1} - d'_i    otherwise
//! ```
//!
//! `d_i` is signed here: it equals `e_M - e_{i-1}`, so a negative value means
//! the incoming addend is the larger operand. The incoming addend is then
//! normalized and aligned by a single signed shift; the product only ever
//! shifts right. The PE forwards its own unnormalized sum with its LZA count,
//! leaving the last normalization to the rounding stage.

use super::{add, lza, multiply_sig, ChainValue, Diagnostics, Lza, Product, ZERO_EXP};
use crate::fp::{FpFormat, Sign, UnpackedFloat, WideSig, CARRY_BITS};

/// Pipeline register between the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage1Out {
    pub product: Product,
    /// `e_A + e_B`.
    pub e_m: i32,
    /// Speculative incoming exponent `ê_{i-1}`.
    pub e_hat_prev: i32,
    /// `|e_M - ê_{i-1}|`.
    pub d_spec: u32,
    /// `e_M >= ê_{i-1}`.
    pub m_ge_prev: bool,
    pub product_sign: Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixOut {
    /// `e_M - e_{i-1}`: non-negative when the product has the larger (or equal)
    /// exponent, negative when the incoming addend dominates.
    pub d_true: i64,
    /// `max(e_M, e_{i-1})`, the grid exponent of this PE's sum.
    pub e_hat: i32,
    /// Product and addend have opposite signs.
    pub effective_sub: bool,
}

impl FixOut {
    /// Exponent this PE forwards to the next one in the same cycle (`ê_i`).
    pub fn forwarded_exponent(&self) -> i32 {
        if self.e_hat == ZERO_EXP {
            ZERO_EXP
        } else {
            self.e_hat + CARRY_BITS as i32
        }
    }
}

/// Everything stage 2 produces in one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage2Out {
    /// Unnormalized sum, tagged with its LZA count.
    pub value: ChainValue,
    pub fix: FixOut,
    pub lza: Lza,
}

pub fn stage1(a: &UnpackedFloat, w: &UnpackedFloat, e_hat_prev: i32, fmt: FpFormat) -> Stage1Out {
    let product = multiply_sig(a, w, fmt);
    let e_m = product.exp;
    let d_spec = (i64::from(e_m) - i64::from(e_hat_prev)).unsigned_abs() as u32;
    Stage1Out {
        product,
        e_m,
        e_hat_prev,
        d_spec,
        m_ge_prev: e_m >= e_hat_prev,
        product_sign: product.sign,
    }
}

/// Correct the speculative exponent results with the previous PE's LZA count.
///
/// `addend_zero` is the zero flag that travels with `l_prev`; a zero addend
/// has no exponent, so the product wins the alignment outright.
pub fn fix_sign_exponent(s1: &Stage1Out, l_prev: u32, addend_zero: bool, addend_sign: Sign) -> FixOut {
    let effective_sub = s1.product_sign != addend_sign;
    if addend_zero {
        return FixOut {
            d_true: i64::from(s1.e_m) - i64::from(ZERO_EXP),
            e_hat: s1.e_m,
            effective_sub,
        };
    }
    let l = i64::from(l_prev);
    let d_spec = i64::from(s1.d_spec);
    let d_true = if s1.m_ge_prev { d_spec + l } else { l - d_spec };
    let e_prev = s1.e_hat_prev - l_prev as i32;
    FixOut { d_true, e_hat: s1.e_m.max(e_prev), effective_sub }
}

/// Normalize-and-align the incoming addend with one signed shift and align the
/// product with a right shift, both onto the `fix.e_hat` grid.
pub fn retimed_align(
    addend: &ChainValue,
    product: &Product,
    fix: &FixOut,
    diag: &mut Diagnostics,
) -> (WideSig, WideSig) {
    let product = product.to_wide();
    if addend.is_zero() {
        return (WideSig::new(addend.sig.sign, 0), product);
    }
    let norm_left = i64::from(addend.pending_norm) - i64::from(CARRY_BITS);
    let (addend_shift, product_right) = if fix.d_true >= 0 {
        (norm_left - fix.d_true, 0)
    } else {
        (norm_left, fix.d_true.unsigned_abs())
    };
    let a = WideSig::new(addend.sig.sign, diag.signed_shift(addend.sig.magnitude, addend_shift));
    let p = WideSig::new(
        product.sign,
        diag.right_jam(product.magnitude, u32::try_from(product_right).unwrap_or(u32::MAX)),
    );
    (a, p)
}

/// `addend` is the previous PE's registered output; its `pending_norm` is
/// `L_{i-1}`.
pub fn stage2(s1: &Stage1Out, addend: &ChainValue, diag: &mut Diagnostics) -> Stage2Out {
    debug_assert!(addend.is_zero() || addend.pending_norm == addend.lza().count);
    let fix = fix_sign_exponent(s1, addend.pending_norm, addend.is_zero(), addend.sig.sign);
    let (a, p) = retimed_align(addend, &s1.product, &fix, diag);
    let sum = add(p, a);
    let l = lza(&sum);
    let value = if l.zero {
        ChainValue::ZERO
    } else {
        ChainValue { sig: sum, exp: fix.e_hat, pending_norm: l.count }
    };
    Stage2Out { value, fix, lza: l }
}

/// One PE; `input` must be in pending form (see [`ChainValue::to_pending`]).
pub fn pe_step(
    a: &UnpackedFloat,
    w: &UnpackedFloat,
    input: &ChainValue,
    fmt: FpFormat,
    diag: &mut Diagnostics,
) -> ChainValue {
    let s1 = stage1(a, w, input.forwarded_exponent(), fmt);
    stage2(&s1, input, diag).value
}
