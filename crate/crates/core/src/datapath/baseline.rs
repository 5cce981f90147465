//! Reduced-precision two-stage FMA: stage 1 multiplies and compares exponents,
//! stage 2 aligns, adds, counts leading zeros and normalizes. The next PE's
//! stage 1 needs this PE's normalized exponent, so consecutive PEs serialize.

use super::{align_and_add, exponent_compute, lza, multiply_sig, normalize, ChainValue, Diagnostics, ExpCompare, Product};
use crate::fp::{FpFormat, UnpackedFloat};

/// Pipeline register between the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage1 {
    pub product: Product,
    pub addend: ChainValue,
    pub cmp: ExpCompare,
}

/// `addend` must be normalized (or zero), as every baseline PE emits.
pub fn stage1(a: &UnpackedFloat, w: &UnpackedFloat, addend: &ChainValue, fmt: FpFormat) -> Stage1 {
    debug_assert!(addend.is_zero() || addend.normalized_exponent() == addend.exp);
    let product = multiply_sig(a, w, fmt);
    let e_in = if addend.is_zero() { super::ZERO_EXP } else { addend.exp };
    Stage1 { product, addend: *addend, cmp: exponent_compute(product.exp, e_in) }
}

pub fn stage2(s1: &Stage1, diag: &mut Diagnostics) -> ChainValue {
    let sum = align_and_add(s1.product.to_wide(), s1.addend.sig, s1.cmp.d, s1.cmp.larger, diag);
    normalize(sum, lza(&sum), s1.cmp.e_max, diag)
}

pub fn pe_step(
    a: &UnpackedFloat,
    w: &UnpackedFloat,
    input: &ChainValue,
    fmt: FpFormat,
    diag: &mut Diagnostics,
) -> ChainValue {
    stage2(&stage1(a, w, input, fmt), diag)
}
