//! Packed reduced-precision formats, their decoded form, and the single
//! round-to-nearest-even step applied at the South edge of each column.
//!
//! Exponents are kept unbiased everywhere inside the crate; the bias only
//! appears in [`decode`] and [`round_to_format`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::datapath::ChainValue;

/// Width of the significand that travels south between PEs.
pub const ACC_SIG_BITS: u32 = 32;

/// Bit position of the hidden bit of a normalized chain significand.
///
/// Bits `0..=ACC_FRAC_POINT` hold 24 FP32 significand bits plus 4 guard bits;
/// the remaining bits above are carry headroom for the adder.
pub const ACC_FRAC_POINT: u32 = 27;

/// Carry bits the adder can grow above the hidden bit (product in `[1, 4)`
/// plus a normalized addend in `[1, 2)` stays below `2^(ACC_FRAC_POINT + 3)`).
pub const CARRY_BITS: u32 = 2;

/// Highest bit an adder result can occupy. The LZA counts from here.
pub const ADDER_TOP_BIT: u32 = ACC_FRAC_POINT + CARRY_BITS;

const _: () = assert!(ADDER_TOP_BIT < ACC_SIG_BITS);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FpError {
    #[error("{fmt} code {bits:#x} is a NaN or infinity, which the datapath does not accept")]
    UnsupportedEncoding { bits: u32, fmt: FormatKind },
    #[error("{bits:#x} does not fit in the {width}-bit {fmt} encoding")]
    OutOfRange { bits: u32, fmt: FormatKind, width: u32 },
    #[error("unknown format name `{0}` (expected bf16, fp8-e4m3, fp8-e5m2 or fp32)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormatKind {
    Bf16,
    Fp8E4M3,
    Fp8E5M2,
    Fp32,
}

impl fmt::Display for FormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatKind::Bf16 => "bf16",
            FormatKind::Fp8E4M3 => "fp8-e4m3",
            FormatKind::Fp8E5M2 => "fp8-e5m2",
            FormatKind::Fp32 => "fp32",
        })
    }
}

/// How the all-ones exponent field is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SpecialCodes {
    /// All-ones exponent encodes Inf (zero fraction) and NaN.
    Ieee,
    /// No infinities; only the all-ones exponent with all-ones fraction is NaN
    /// (the E4M3 "FN" convention). The top binade carries finite values.
    NanOnly,
}

/// A binary floating-point layout: sign MSB, then exponent, then fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FpFormat {
    pub kind: FormatKind,
    pub exp_bits: u32,
    pub frac_bits: u32,
    pub bias: i32,
    specials: SpecialCodes,
}

impl FpFormat {
    pub const BF16: FpFormat = FpFormat::new(FormatKind::Bf16, 8, 7, 127, SpecialCodes::Ieee);
    pub const FP8_E4M3: FpFormat =
        FpFormat::new(FormatKind::Fp8E4M3, 4, 3, 7, SpecialCodes::NanOnly);
    pub const FP8_E5M2: FpFormat = FpFormat::new(FormatKind::Fp8E5M2, 5, 2, 15, SpecialCodes::Ieee);
    pub const FP32: FpFormat = FpFormat::new(FormatKind::Fp32, 8, 23, 127, SpecialCodes::Ieee);

    pub const ALL: [FpFormat; 4] = [Self::BF16, Self::FP8_E4M3, Self::FP8_E5M2, Self::FP32];

    const fn new(
        kind: FormatKind,
        exp_bits: u32,
        frac_bits: u32,
        bias: i32,
        specials: SpecialCodes,
    ) -> Self {
        FpFormat { kind, exp_bits, frac_bits, bias, specials }
    }

    pub fn from_kind(kind: FormatKind) -> Self {
        match kind {
            FormatKind::Bf16 => Self::BF16,
            FormatKind::Fp8E4M3 => Self::FP8_E4M3,
            FormatKind::Fp8E5M2 => Self::FP8_E5M2,
            FormatKind::Fp32 => Self::FP32,
        }
    }

    /// Packed width in bits.
    pub const fn width(&self) -> u32 {
        1 + self.exp_bits + self.frac_bits
    }

    /// Significand precision including the hidden bit.
    pub const fn precision(&self) -> u32 {
        self.frac_bits + 1
    }

    /// Hex digits needed to print one packed code.
    pub const fn hex_digits(&self) -> usize {
        self.width().div_ceil(4) as usize
    }

    const fn exp_field_max(&self) -> u32 {
        (1 << self.exp_bits) - 1
    }

    const fn frac_mask(&self) -> u32 {
        (1 << self.frac_bits) - 1
    }

    /// Largest biased exponent that still carries finite values.
    const fn max_finite_biased(&self) -> u32 {
        match self.specials {
            SpecialCodes::Ieee => self.exp_field_max() - 1,
            SpecialCodes::NanOnly => self.exp_field_max(),
        }
    }

    /// Largest fraction field allowed at [`Self::max_finite_biased`].
    const fn max_finite_frac(&self) -> u32 {
        match self.specials {
            SpecialCodes::Ieee => self.frac_mask(),
            SpecialCodes::NanOnly => self.frac_mask() - 1,
        }
    }

    /// Unbiased exponent of the smallest normal value.
    pub const fn min_exp(&self) -> i32 {
        1 - self.bias
    }

    /// Unbiased exponent of the largest finite value.
    pub const fn max_exp(&self) -> i32 {
        self.max_finite_biased() as i32 - self.bias
    }

    /// Packed code of the largest finite magnitude with the given sign.
    pub fn max_finite_bits(&self, sign: Sign) -> u32 {
        self.pack(sign, self.max_finite_biased(), self.max_finite_frac())
    }

    fn pack(&self, sign: Sign, biased: u32, frac: u32) -> u32 {
        let s = match sign {
            Sign::Pos => 0,
            Sign::Neg => 1,
        };
        (s << (self.width() - 1)) | (biased << self.frac_bits) | frac
    }

    /// True when `bits` is a finite, normal encoding (what the datapath consumes
    /// besides zeros).
    pub fn is_normal_code(&self, bits: u32) -> bool {
        if self.width() < 32 && bits >> self.width() != 0 {
            return false;
        }
        let biased = (bits >> self.frac_bits) & self.exp_field_max();
        let frac = bits & self.frac_mask();
        if biased == 0 {
            return false;
        }
        match self.specials {
            SpecialCodes::Ieee => biased != self.exp_field_max(),
            SpecialCodes::NanOnly => !(biased == self.exp_field_max() && frac == self.frac_mask()),
        }
    }

    /// Iterator over every packed code of the format.
    pub fn all_codes(&self) -> impl Iterator<Item = u32> {
        0..=(u32::MAX >> (32 - self.width()))
    }
}

impl fmt::Display for FpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

impl FromStr for FpFormat {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bf16" | "bfloat16" => Ok(Self::BF16),
            "fp8-e4m3" | "e4m3" | "fp8_e4m3" => Ok(Self::FP8_E4M3),
            "fp8-e5m2" | "e5m2" | "fp8_e5m2" => Ok(Self::FP8_E5M2),
            "fp32" | "f32" => Ok(Self::FP32),
            _ => Err(FpError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Sign {
    #[default]
    Pos,
    Neg,
}

impl Sign {
    pub fn flip(self) -> Sign {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }

    pub fn is_neg(self) -> bool {
        self == Sign::Neg
    }

    /// Sign of a product.
    pub fn xor(self, other: Sign) -> Sign {
        if self == other {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }
}

/// A decoded code: `(-1)^sign * sig * 2^(exp - frac_bits)` with the hidden bit
/// explicit in `sig`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnpackedFloat {
    pub sign: Sign,
    pub exp: i32,
    pub sig: u32,
    pub is_zero: bool,
}

impl UnpackedFloat {
    pub const fn zero(sign: Sign) -> Self {
        UnpackedFloat { sign, exp: 0, sig: 0, is_zero: true }
    }
}

/// Sign-magnitude significand of the inter-PE datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WideSig {
    pub sign: Sign,
    pub magnitude: u32,
}

impl WideSig {
    pub const ZERO: WideSig = WideSig { sign: Sign::Pos, magnitude: 0 };

    pub fn new(sign: Sign, magnitude: u32) -> Self {
        WideSig { sign, magnitude }
    }

    pub fn is_zero(&self) -> bool {
        self.magnitude == 0
    }

    /// Two's-complement view used inside the adder.
    pub fn to_signed(self) -> i64 {
        let m = i64::from(self.magnitude);
        if self.sign.is_neg() {
            -m
        } else {
            m
        }
    }

    /// Back to sign-magnitude. An exact zero is positive.
    pub fn from_signed(v: i64) -> Self {
        let sign = if v < 0 { Sign::Neg } else { Sign::Pos };
        let magnitude = u32::try_from(v.unsigned_abs()).expect("adder result exceeds ACC_SIG_BITS");
        WideSig { sign, magnitude }
    }
}

/// Decode a packed code. Subnormals flush to a signed zero; NaN and infinity
/// are rejected.
pub fn decode(bits: u32, fmt: FpFormat) -> Result<UnpackedFloat, FpError> {
    if fmt.width() < 32 && bits >> fmt.width() != 0 {
        return Err(FpError::OutOfRange { bits, fmt: fmt.kind, width: fmt.width() });
    }
    let sign = if (bits >> (fmt.width() - 1)) & 1 == 1 { Sign::Neg } else { Sign::Pos };
    let biased = (bits >> fmt.frac_bits) & fmt.exp_field_max();
    let frac = bits & fmt.frac_mask();

    let special = match fmt.specials {
        SpecialCodes::Ieee => biased == fmt.exp_field_max(),
        SpecialCodes::NanOnly => biased == fmt.exp_field_max() && frac == fmt.frac_mask(),
    };
    if special {
        return Err(FpError::UnsupportedEncoding { bits, fmt: fmt.kind });
    }
    if biased == 0 {
        return Ok(UnpackedFloat::zero(sign));
    }
    Ok(UnpackedFloat {
        sign,
        exp: biased as i32 - fmt.bias,
        sig: (1 << fmt.frac_bits) | frac,
        is_zero: false,
    })
}

/// Place a decoded value on the chain grid (hidden bit at `ACC_FRAC_POINT`).
pub fn lift(u: &UnpackedFloat, fmt: FpFormat) -> ChainValue {
    if u.is_zero {
        return ChainValue::zero_with_sign(u.sign);
    }
    assert!(fmt.frac_bits <= ACC_FRAC_POINT, "{fmt} is wider than the chain datapath");
    ChainValue::normalized(WideSig::new(u.sign, u.sig << (ACC_FRAC_POINT - fmt.frac_bits)), u.exp)
}

/// Shift right, OR-ing every shifted-out bit into the result LSB.
///
/// Returns the shifted value and whether any nonzero bit was lost.
pub fn shift_right_jam(x: u32, n: u32) -> (u32, bool) {
    if n == 0 {
        (x, false)
    } else if n >= 32 {
        (u32::from(x != 0), x != 0)
    } else {
        let lost = x & ((1u32 << n) - 1) != 0;
        ((x >> n) | u32::from(lost), lost)
    }
}

/// A packed result plus what happened on the way there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rounded {
    pub bits: u32,
    /// Exponent overflowed; the result is the largest finite magnitude.
    pub saturated: bool,
    /// Result fell below the smallest normal and was flushed to zero.
    pub flushed: bool,
    /// Normalizing a carried-out value dropped nonzero bits into the sticky LSB.
    pub sticky: bool,
}

/// Normalize a (possibly unnormalized) chain value, apply the pending exponent
/// correction, round to nearest-even at `fmt` precision and pack.
pub fn round_to_format(v: &ChainValue, fmt: FpFormat) -> Rounded {
    let sign = v.sig.sign;
    if v.is_zero() {
        return Rounded { bits: fmt.pack(sign, 0, 0), saturated: false, flushed: false, sticky: false };
    }
    let precision = fmt.precision();
    assert!(
        precision + 2 <= ACC_FRAC_POINT + 1,
        "{fmt} needs guard and sticky positions below its LSB on the chain grid"
    );
    let (mag, exp, sticky) = v.normalize_in_place();

    // `mag` has its hidden bit at ACC_FRAC_POINT; drop the low `k` bits.
    let k = ACC_FRAC_POINT + 1 - precision;
    let half = 1u32 << (k - 1);
    let rem = mag & ((1u32 << k) - 1);
    let mut q = mag >> k;
    if rem > half || (rem == half && q & 1 == 1) {
        q += 1;
    }
    let mut exp = exp;
    if q == 1 << precision {
        q >>= 1;
        exp += 1;
    }

    if exp < fmt.min_exp() {
        return Rounded { bits: fmt.pack(sign, 0, 0), saturated: false, flushed: true, sticky };
    }
    let biased = (exp + fmt.bias) as u32;
    let frac = q & fmt.frac_mask();
    if exp > fmt.max_exp() || (biased == fmt.max_finite_biased() && frac > fmt.max_finite_frac()) {
        return Rounded { bits: fmt.max_finite_bits(sign), saturated: true, flushed: false, sticky };
    }
    Rounded { bits: fmt.pack(sign, biased, frac), saturated: false, flushed: false, sticky }
}
