//! Align-first FMA: the exponent path computes the alignment in stage 1 in
//! parallel with the multiplier; stage 2 adds, counts leading zeros and
//! corrects the exponent. Numerically identical to [`super::baseline`].

use super::{add, align, exponent_compute, lza, multiply_sig, normalize, ChainValue, Diagnostics};
use crate::fp::{FpFormat, UnpackedFloat, WideSig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage1 {
    pub product: WideSig,
    pub addend: WideSig,
    pub e_max: i32,
}

pub fn stage1(
    a: &UnpackedFloat,
    w: &UnpackedFloat,
    addend: &ChainValue,
    fmt: FpFormat,
    diag: &mut Diagnostics,
) -> Stage1 {
    let product = multiply_sig(a, w, fmt);
    let e_in = if addend.is_zero() { super::ZERO_EXP } else { addend.exp };
    let cmp = exponent_compute(product.exp, e_in);
    let (product, addend) = align(product.to_wide(), addend.sig, cmp.d, cmp.larger, diag);
    Stage1 { product, addend, e_max: cmp.e_max }
}

pub fn stage2(s1: &Stage1, diag: &mut Diagnostics) -> ChainValue {
    let sum = add(s1.product, s1.addend);
    normalize(sum, lza(&sum), s1.e_max, diag)
}

pub fn pe_step(
    a: &UnpackedFloat,
    w: &UnpackedFloat,
    input: &ChainValue,
    fmt: FpFormat,
    diag: &mut Diagnostics,
) -> ChainValue {
    let s1 = stage1(a, w, input, fmt, diag);
    stage2(&s1, diag)
}
