//! Functional models of the PE multiply-add datapath.
//!
//! Three organizations share the primitives in this module:
//!
//! * [`align_first`]: alignment in stage 1 next to the multiplier, addition,
//!   LZA and normalization in stage 2.
//! * [`baseline`]: multiplier and exponent compare in stage 1; alignment,
//!   addition, LZA and normalization in stage 2.
//! * [`skewed`]: stage 1 works on a speculative (unnormalized) incoming
//!   exponent; stage 2 begins with the sign/exponent fix driven by the
//!   previous PE's LZA count, and normalization of the incoming addend is
//!   folded into its alignment shift.
//!
//! All three produce bit-identical sums. None of them rounds: the chain keeps
//! [`ACC_SIG_BITS`] of significand and rounding happens once at the South edge.
//!
//! A [`ChainValue`] is worth `sig * 2^(exp - ACC_FRAC_POINT)`.

pub mod align_first;
pub mod baseline;
pub mod skewed;

use std::fmt;
use std::str::FromStr;

use crate::fp::{
    shift_right_jam, FpFormat, Sign, UnpackedFloat, WideSig, ACC_FRAC_POINT, ACC_SIG_BITS,
    ADDER_TOP_BIT, CARRY_BITS,
};

/// Exponent carried by zero operands. Far below any reachable exponent so that
/// max/difference logic always selects the other operand.
pub const ZERO_EXP: i32 = -(1 << 24);

/// PE datapath organization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    AlignFirst,
    Baseline,
    Skewed,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::AlignFirst, Mode::Baseline, Mode::Skewed];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::AlignFirst => "align-first",
            Mode::Baseline => "baseline",
            Mode::Skewed => "skewed",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "align-first" | "align_first" | "alignfirst" => Ok(Mode::AlignFirst),
            "baseline" => Ok(Mode::Baseline),
            "skewed" => Ok(Mode::Skewed),
            other => Err(format!("unknown mode `{other}` (expected align-first, baseline or skewed)")),
        }
    }
}

/// Event counters for lossy or clamped operations. Plain data; merge freely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Diagnostics {
    /// Right shifts that dropped nonzero bits into the sticky LSB.
    pub sticky_collapses: u64,
    /// Alignment shifts of at least `ACC_SIG_BITS` on a nonzero operand.
    pub alignment_overflows: u64,
    /// Final roundings that saturated to the largest finite value.
    pub saturations: u64,
    /// Final roundings that flushed to zero.
    pub flushes: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.sticky_collapses += other.sticky_collapses;
        self.alignment_overflows += other.alignment_overflows;
        self.saturations += other.saturations;
        self.flushes += other.flushes;
    }

    pub fn is_exact(&self) -> bool {
        self.sticky_collapses == 0 && self.alignment_overflows == 0
    }

    fn right_jam(&mut self, x: u32, n: u32) -> u32 {
        let (v, lost) = shift_right_jam(x, n);
        if lost {
            self.sticky_collapses += 1;
            if n >= ACC_SIG_BITS {
                self.alignment_overflows += 1;
            }
        }
        v
    }

    /// Shift left for `amount > 0`, right with sticky collapse for `amount < 0`.
    fn signed_shift(&mut self, x: u32, amount: i64) -> u32 {
        if amount >= 0 {
            let n = amount as u32;
            debug_assert!(x == 0 || n <= x.leading_zeros(), "left shift overflows the chain width");
            if n >= 32 {
                0
            } else {
                x << n
            }
        } else {
            let n = u32::try_from(amount.unsigned_abs()).unwrap_or(u32::MAX);
            self.right_jam(x, n)
        }
    }
}

/// The partial sum flowing south between PEs.
///
/// `pending_norm` is the LZA count of `sig` (leading zeros below
/// [`ADDER_TOP_BIT`]) when the value was produced by the skewed pipeline and
/// has not been normalized yet; it is zero for normalized values, whose MSB
/// sits at [`ACC_FRAC_POINT`]. It never changes the numeric value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainValue {
    pub sig: WideSig,
    pub exp: i32,
    pub pending_norm: u32,
}

impl ChainValue {
    pub const ZERO: ChainValue = ChainValue { sig: WideSig::ZERO, exp: ZERO_EXP, pending_norm: 0 };

    pub fn zero_with_sign(sign: Sign) -> Self {
        ChainValue { sig: WideSig::new(sign, 0), ..Self::ZERO }
    }

    /// A normalized value: `sig` has its MSB at `ACC_FRAC_POINT` and `exp` is
    /// the exponent of that bit.
    pub fn normalized(sig: WideSig, exp: i32) -> Self {
        debug_assert!(sig.magnitude == 0 || 31 - sig.magnitude.leading_zeros() == ACC_FRAC_POINT);
        ChainValue { sig, exp, pending_norm: 0 }
    }

    pub fn is_zero(&self) -> bool {
        self.sig.is_zero()
    }

    /// LZA count of the stored magnitude.
    pub fn lza(&self) -> Lza {
        lza(&self.sig)
    }

    /// Exponent forwarded to the next PE's exponent-compute logic: the
    /// exponent of the adder's top bit on this value's grid (`ê`).
    pub fn forwarded_exponent(&self) -> i32 {
        if self.is_zero() {
            ZERO_EXP
        } else {
            self.exp + CARRY_BITS as i32
        }
    }

    /// Exponent of the MSB, i.e. the exponent the value has once normalized.
    pub fn normalized_exponent(&self) -> i32 {
        if self.is_zero() {
            return ZERO_EXP;
        }
        let msb = 31 - self.sig.magnitude.leading_zeros();
        self.exp + msb as i32 - ACC_FRAC_POINT as i32
    }

    /// Re-tag a value so that its normalization is deferred to the consumer
    /// (the form the skewed pipeline forwards).
    pub fn to_pending(&self) -> ChainValue {
        if self.is_zero() {
            return ChainValue { pending_norm: 0, ..*self };
        }
        ChainValue { pending_norm: self.lza().count, ..*self }
    }

    /// Apply normalization now. Carry-out values shift right through the
    /// sticky collapse, which `diag` records.
    pub fn to_normalized(&self, diag: &mut Diagnostics) -> ChainValue {
        normalize(self.sig, self.lza(), self.exp, diag)
    }

    /// Normalized magnitude, its exponent and whether bits were lost.
    pub(crate) fn normalize_in_place(&self) -> (u32, i32, bool) {
        let mut d = Diagnostics::default();
        let n = self.to_normalized(&mut d);
        (n.sig.magnitude, n.exp, d.sticky_collapses > 0)
    }

    /// Canonical `(sign, odd mantissa, exponent)` such that the value equals
    /// `±mantissa * 2^exponent`; `None` for zero.
    pub fn exact_parts(&self) -> Option<(Sign, u32, i32)> {
        if self.is_zero() {
            return None;
        }
        let tz = self.sig.magnitude.trailing_zeros();
        Some((
            self.sig.sign,
            self.sig.magnitude >> tz,
            self.exp - ACC_FRAC_POINT as i32 + tz as i32,
        ))
    }

    /// Numeric equality regardless of representation.
    pub fn same_value(&self, other: &ChainValue) -> bool {
        self.exact_parts() == other.exact_parts()
    }
}

impl Default for ChainValue {
    fn default() -> Self {
        ChainValue::ZERO
    }
}

/// Exact significand product of the multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Product {
    pub sign: Sign,
    /// `a.sig * b.sig` with its binary point at `2 * frac_bits`.
    pub sig: u32,
    /// `e_A + e_B`, or [`ZERO_EXP`] for a zero product.
    pub exp: i32,
    pub frac_bits: u32,
}

impl Product {
    pub fn is_zero(&self) -> bool {
        self.sig == 0
    }

    /// The product on its own exponent grid of the chain datapath.
    pub fn to_wide(&self) -> WideSig {
        let point = 2 * self.frac_bits;
        assert!(point <= ACC_FRAC_POINT, "product of this format does not fit the chain grid");
        WideSig::new(self.sign, self.sig << (ACC_FRAC_POINT - point))
    }
}

pub fn multiply_sig(a: &UnpackedFloat, b: &UnpackedFloat, fmt: FpFormat) -> Product {
    let sign = a.sign.xor(b.sign);
    if a.is_zero || b.is_zero {
        return Product { sign, sig: 0, exp: ZERO_EXP, frac_bits: fmt.frac_bits };
    }
    Product { sign, sig: a.sig * b.sig, exp: a.exp + b.exp, frac_bits: fmt.frac_bits }
}

/// Which addend has the larger exponent. Ties go to the multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Larger {
    Multiplier,
    Addend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpCompare {
    pub e_max: i32,
    pub d: u32,
    pub larger: Larger,
}

pub fn exponent_compute(e_m: i32, e_in: i32) -> ExpCompare {
    let d = (i64::from(e_m) - i64::from(e_in)).unsigned_abs() as u32;
    if e_m >= e_in {
        ExpCompare { e_max: e_m, d, larger: Larger::Multiplier }
    } else {
        ExpCompare { e_max: e_in, d, larger: Larger::Addend }
    }
}

/// Put both addends on the larger exponent's grid.
pub fn align(
    product: WideSig,
    addend: WideSig,
    d: u32,
    larger: Larger,
    diag: &mut Diagnostics,
) -> (WideSig, WideSig) {
    match larger {
        Larger::Multiplier => {
            (product, WideSig::new(addend.sign, diag.right_jam(addend.magnitude, d)))
        }
        Larger::Addend => {
            (WideSig::new(product.sign, diag.right_jam(product.magnitude, d)), addend)
        }
    }
}

/// Signed addition in two's complement; the result stays unnormalized.
pub fn add(x: WideSig, y: WideSig) -> WideSig {
    WideSig::from_signed(x.to_signed() + y.to_signed())
}

pub fn align_and_add(
    product: WideSig,
    addend: WideSig,
    d: u32,
    larger: Larger,
    diag: &mut Diagnostics,
) -> WideSig {
    let (p, a) = align(product, addend, d, larger, diag);
    add(p, a)
}

/// Leading-zero count of an adder result, measured from [`ADDER_TOP_BIT`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lza {
    pub count: u32,
    pub zero: bool,
}

impl Lza {
    /// Left shift that puts the MSB on [`ACC_FRAC_POINT`]; negative for a
    /// carry-out.
    pub fn normalization_shift(&self) -> i64 {
        if self.zero {
            0
        } else {
            i64::from(self.count) - i64::from(CARRY_BITS)
        }
    }
}

pub fn lza(result: &WideSig) -> Lza {
    if result.magnitude == 0 {
        return Lza { count: 0, zero: true };
    }
    let lz = result.magnitude.leading_zeros();
    let above_top = 31 - ADDER_TOP_BIT;
    assert!(lz >= above_top, "adder result {:#x} exceeds the adder width", result.magnitude);
    Lza { count: lz - above_top, zero: false }
}

/// Shift an adder result so its MSB sits at the hidden-bit position.
pub fn normalize(v: WideSig, l: Lza, e_max: i32, diag: &mut Diagnostics) -> ChainValue {
    if l.zero || v.magnitude == 0 {
        return ChainValue::ZERO;
    }
    let shift = l.normalization_shift();
    let magnitude = diag.signed_shift(v.magnitude, shift);
    ChainValue::normalized(WideSig::new(v.sign, magnitude), e_max - shift as i32)
}

/// Fold a column of `(activation, weight)` pairs through PE steps of `mode`;
/// returns the unrounded value leaving the last PE.
pub fn fold_column(
    mode: Mode,
    pairs: &[(UnpackedFloat, UnpackedFloat)],
    fmt: FpFormat,
    diag: &mut Diagnostics,
) -> ChainValue {
    pairs.iter().fold(ChainValue::ZERO, |acc, (a, w)| match mode {
        Mode::AlignFirst => align_first::pe_step(a, w, &acc, fmt, diag),
        Mode::Baseline => baseline::pe_step(a, w, &acc, fmt, diag),
        Mode::Skewed => skewed::pe_step(a, w, &acc, fmt, diag),
    })
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::fp::lift;
    use proptest::prelude::*;

    fn one() -> WideSig {
        WideSig::new(Sign::Pos, 1 << ACC_FRAC_POINT)
    }

    #[test]
    fn multiply_one_by_one() {
        let p = multiply_sig(&bf16(0x3F80), &bf16(0x3F80), FpFormat::BF16);
        assert_eq!((p.sig, p.exp), (1 << 14, 0));
    }

    #[test]
    fn multiply_one_and_a_half_squared() {
        let p = multiply_sig(&bf16(0x3FC0), &bf16(0x3FC0), FpFormat::BF16);
        assert_eq!(p.exp, 0);
        assert!((1 << 14..1 << 16).contains(&p.sig));
        assert_eq!(p.sig as f64 / (1 << 14) as f64, 2.25);
    }

    #[test]
    fn multiply_zero_uses_sentinel() {
        let p = multiply_sig(&bf16(0x0000), &bf16(0x4000), FpFormat::BF16);
        assert!(p.is_zero());
        assert_eq!(p.exp, ZERO_EXP);
    }

    #[test]
    fn exponent_compute_cases() {
        assert_eq!(exponent_compute(3, 1), ExpCompare { e_max: 3, d: 2, larger: Larger::Multiplier });
        assert_eq!(exponent_compute(-2, -2), ExpCompare { e_max: -2, d: 0, larger: Larger::Multiplier });
        assert_eq!(exponent_compute(0, 5), ExpCompare { e_max: 5, d: 5, larger: Larger::Addend });
    }

    #[test]
    fn add_one_plus_one_keeps_carry() {
        let mut d = Diagnostics::default();
        let r = align_and_add(one(), one(), 0, Larger::Multiplier, &mut d);
        assert_eq!(r.magnitude, 2 << ACC_FRAC_POINT);
        assert_eq!(lza(&r).count, CARRY_BITS - 1);
        assert!(d.is_exact());
    }

    #[test]
    fn add_cancellation_is_exact_zero() {
        let mut d = Diagnostics::default();
        let neg = WideSig::new(Sign::Neg, 1 << ACC_FRAC_POINT);
        let r = align_and_add(one(), neg, 0, Larger::Multiplier, &mut d);
        assert!(r.is_zero());
        assert_eq!(r.sign, Sign::Pos);
        assert_eq!(lza(&r), Lza { count: 0, zero: true });
    }

    #[test]
    fn lza_counts_from_adder_top() {
        // a normalized 1.0 needs no normalization shift
        let l = lza(&one());
        assert_eq!(l.count, CARRY_BITS);
        assert_eq!(l.normalization_shift(), 0);

        // 1.0 - 0.9375 = 0.0625 = 2^-4 * 1.0
        let mut d = Diagnostics::default();
        let a = lift(&bf16(0x3F80), FpFormat::BF16);
        let b = lift(&bf16(0xBF70), FpFormat::BF16);
        let r = align_and_add(a.sig, b.sig, 1, Larger::Multiplier, &mut d);
        let l = lza(&r);
        assert_eq!(l.normalization_shift(), 4);
        assert_eq!(l.count, CARRY_BITS + 4);
        assert!(d.is_exact());
    }

    #[test]
    fn normalize_cases() {
        let mut d = Diagnostics::default();
        let v = normalize(one(), lza(&one()), 0, &mut d);
        assert_eq!(v, ChainValue::normalized(one(), 0));

        // 1.5 + 1.5 = 3.0: right by one, exponent + 1
        let x = WideSig::new(Sign::Pos, 3 << (ACC_FRAC_POINT - 1));
        let s = add(x, x);
        let v = normalize(s, lza(&s), 0, &mut d);
        assert_eq!(v.exp, 1);
        assert_eq!(v.sig.magnitude, 3 << (ACC_FRAC_POINT - 1));
        assert!(d.is_exact());
    }

    #[test]
    fn sticky_counted_only_for_nonzero_loss() {
        let mut d = Diagnostics::default();
        let (_, a) = align(one(), WideSig::new(Sign::Pos, 0b1011), 2, Larger::Multiplier, &mut d);
        assert_eq!(a.magnitude, 0b11);
        assert_eq!(d.sticky_collapses, 1);
        let _ = align(one(), one(), 40, Larger::Multiplier, &mut d);
        assert_eq!((d.sticky_collapses, d.alignment_overflows), (2, 1));
        let _ = align(WideSig::ZERO, one(), 100, Larger::Addend, &mut d);
        assert_eq!(d.sticky_collapses, 2);
    }

    fn arb_chain_value() -> impl Strategy<Value = ChainValue> {
        (any::<bool>(), 1u32..(1 << (ADDER_TOP_BIT + 1)), -200i32..200).prop_map(|(neg, m, e)| {
            let sign = if neg { Sign::Neg } else { Sign::Pos };
            ChainValue { sig: WideSig::new(sign, m), exp: e, pending_norm: 0 }.to_pending()
        })
    }

    proptest! {
        #[test]
        fn normalization_deferral_preserves_value(v in arb_chain_value()) {
            let mut d = Diagnostics::default();
            let now = v.to_normalized(&mut d);
            if d.is_exact() {
                prop_assert!(now.same_value(&v));
            }
            prop_assert_eq!(now.exp, v.normalized_exponent());
            prop_assert_eq!(v.forwarded_exponent() - v.pending_norm as i32, v.normalized_exponent());
            prop_assert!(v.to_pending().same_value(&v));
        }

        #[test]
        fn lza_is_nonnegative_and_exact(m in 1u32..(1 << (ADDER_TOP_BIT + 1))) {
            let l = lza(&WideSig::new(Sign::Pos, m));
            prop_assert!(!l.zero);
            prop_assert_eq!(31 - m.leading_zeros(), ADDER_TOP_BIT - l.count);
        }

        #[test]
        fn align_and_add_matches_exact_sum(
            pa in 1u32..(1 << 16), ea in -20i32..20, na in any::<bool>(),
            ma in 1u32..(1 << 28), eb in -20i32..20, nb in any::<bool>(),
        ) {
            // a product-sized operand and an arbitrary addend below the carry region
            let s = |n: bool| if n { Sign::Neg } else { Sign::Pos };
            let p = WideSig::new(s(na), pa << (ACC_FRAC_POINT - 14));
            let a = WideSig::new(s(nb), ma);
            let cmp = exponent_compute(ea, eb);
            let mut d = Diagnostics::default();
            let r = align_and_add(p, a, cmp.d, cmp.larger, &mut d);
            if d.is_exact() {
                let got = exact(&ChainValue { sig: r, exp: cmp.e_max, pending_norm: 0 });
                let want = sum(
                    exact(&ChainValue { sig: p, exp: ea, pending_norm: 0 }),
                    exact(&ChainValue { sig: a, exp: eb, pending_norm: 0 }),
                );
                prop_assert_eq!(got, want);
            }
        }
    }
}
