//! Exact reference for column reductions.
//!
//! Sums every product with unbounded-precision integers and rounds the exact
//! result once to nearest-even. Shares nothing with the datapath models except
//! the input decoder and the format constants, so it can check them.

use num_bigint::{BigInt, Sign as BigSign};
use num_traits::{One, Signed, Zero};

use crate::fp::{FpFormat, UnpackedFloat};

/// An exact dyadic rational `mantissa * 2^exp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactSum {
    pub mantissa: BigInt,
    pub exp: i64,
}

impl ExactSum {
    pub fn zero() -> Self {
        ExactSum { mantissa: BigInt::zero(), exp: 0 }
    }

    fn add_term(&mut self, mantissa: BigInt, exp: i64) {
        if mantissa.is_zero() {
            return;
        }
        if self.mantissa.is_zero() {
            self.mantissa = mantissa;
            self.exp = exp;
            return;
        }
        let e = self.exp.min(exp);
        let lhs = std::mem::take(&mut self.mantissa) << (self.exp - e) as usize;
        self.mantissa = lhs + (mantissa << (exp - e) as usize);
        self.exp = e;
    }
}

/// `sum(a_i * w_i)` exactly, in column order.
pub fn exact_dot(pairs: &[(UnpackedFloat, UnpackedFloat)], fmt: FpFormat) -> ExactSum {
    let mut acc = ExactSum::zero();
    for (a, w) in pairs {
        if a.is_zero || w.is_zero {
            continue;
        }
        let mut m = BigInt::from(a.sig) * BigInt::from(w.sig);
        if a.sign != w.sign {
            m = -m;
        }
        acc.add_term(m, i64::from(a.exp) + i64::from(w.exp) - 2 * i64::from(fmt.frac_bits));
    }
    acc
}

/// Round an exact value once to `fmt`: nearest-even, saturating overflow,
/// flushing results below the smallest normal. An exact zero is `+0`.
pub fn round_exact(v: &ExactSum, fmt: FpFormat) -> u32 {
    let width = fmt.width();
    let sign_bit = 1u32 << (width - 1);
    if v.mantissa.is_zero() {
        return 0;
    }
    let neg = v.mantissa.sign() == BigSign::Minus;
    let sign = if neg { sign_bit } else { 0 };
    let mag = v.mantissa.abs();
    let p = u64::from(fmt.precision());
    let bits = mag.bits();

    let (mut q, mut e_lsb) = if bits > p {
        let shift = bits - p;
        let q = &mag >> shift as usize;
        let rem = &mag - (&q << shift as usize);
        let half = BigInt::one() << (shift - 1) as usize;
        let odd = (&q & BigInt::one()).is_one();
        let up = rem > half || (rem == half && odd);
        (if up { q + 1 } else { q }, v.exp + shift as i64)
    } else {
        (mag << (p - bits) as usize, v.exp - (p - bits) as i64)
    };
    if q.bits() > p {
        q >>= 1;
        e_lsb += 1;
    }
    let q: u64 = q.try_into().expect("rounded significand fits in u64");
    let exp = e_lsb + p as i64 - 1;

    if exp < i64::from(fmt.min_exp()) {
        return sign;
    }
    let frac = (q as u32) & ((1 << fmt.frac_bits) - 1);
    let max = fmt.max_finite_bits(crate::fp::Sign::Pos);
    let code = if exp > i64::from(fmt.max_exp()) {
        max
    } else {
        (((exp + i64::from(fmt.bias)) as u32) << fmt.frac_bits) | frac
    };
    sign | code.min(max)
}
