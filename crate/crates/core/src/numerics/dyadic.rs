//! Exact dyadic helpers shared by the binary backends.
//!
//! Every finite `f64` and every [`BigFloat`](super::BigFloat) is a dyadic
//! rational `m * 2^e`. Sums of dyadics are computed exactly on big integers
//! and rounded once, so window means are correctly rounded and independent
//! of summation order.

use alloc::vec::Vec;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{float::FloatCore, One, Signed, ToPrimitive, Zero};

/// Round `num / den` to `bits` significant bits, ties to even.
///
/// Returns `(m, e)` with `num / den ≈ m * 2^e` and `|m| < 2^bits`.
/// `den` must be nonzero.
pub(crate) fn round_ratio(num: &BigInt, den: &BigInt, bits: u32) -> (BigInt, i64) {
    assert!(!den.is_zero(), "division by zero");
    if num.is_zero() {
        return (BigInt::zero(), 0);
    }
    let negative = (num.sign() == Sign::Minus) != (den.sign() == Sign::Minus);
    let a = num.magnitude();
    let d = den.magnitude();
    // a * 2^s / d lands in [2^(bits+1), 2^(bits+3))
    let s = bits as i64 + 2 - (a.bits() as i64 - d.bits() as i64);
    let (q, r) = if s >= 0 { (a << (s as usize)).div_rem(d) } else { a.div_rem(&(d << ((-s) as usize))) };
    let (mant, shift) = round_magnitude(q, !r.is_zero(), bits);
    let m = BigInt::from_biguint(if negative { Sign::Minus } else { Sign::Plus }, mant);
    (m, shift as i64 - s)
}

/// Round an integer magnitude (with a sticky flag for discarded lower bits)
/// to at most `bits` bits. Returns the rounded magnitude and how many bits
/// were shifted out.
pub(crate) fn round_magnitude(q: BigUint, sticky: bool, bits: u32) -> (BigUint, u64) {
    let len = q.bits();
    if len <= bits as u64 {
        // Exact unless the sticky flag says otherwise; callers always provide
        // at least two guard bits when sticky can be set.
        return (q, 0);
    }
    let excess = len - bits as u64;
    let mut kept = &q >> (excess as usize);
    let dropped = &q - (&kept << (excess as usize));
    let half = BigUint::one() << ((excess - 1) as usize);
    let round_up = match dropped.cmp(&half) {
        core::cmp::Ordering::Greater => true,
        core::cmp::Ordering::Less => false,
        core::cmp::Ordering::Equal => sticky || kept.is_odd(),
    };
    let mut shift = excess;
    if round_up {
        kept += 1u32;
        if kept.bits() > bits as u64 {
            kept >>= 1;
            shift += 1;
        }
    }
    (kept, shift)
}

/// Exact decomposition of a finite double into `m * 2^e`.
pub(crate) fn f64_to_dyadic(v: f64) -> (BigInt, i64) {
    assert!(v.is_finite(), "non-finite value {v}");
    if v == 0.0 {
        return (BigInt::zero(), 0);
    }
    let (mant, exp, sign) = FloatCore::integer_decode(v);
    let m = BigInt::from(mant) * BigInt::from(sign);
    (m, exp as i64)
}

/// Correctly rounded conversion of `m * 2^e` to a double (subnormals included).
pub(crate) fn dyadic_to_f64(m: &BigInt, e: i64) -> f64 {
    if m.is_zero() {
        return 0.0;
    }
    let sign = if m.is_negative() { -1.0 } else { 1.0 };
    let (mant, exp) = round_dyadic(m, e, 53);
    if exp >= -1074 {
        let mf = mant.to_f64().expect("53-bit mantissa fits a double");
        return libm::ldexp(mf, exp.min(i32::MAX as i64) as i32);
    }
    // Subnormal range: round the original value to a multiple of 2^-1074.
    let shift = (-1074 - e) as u64;
    let q = shift_right_rounded(m.magnitude(), shift);
    let qf = q.to_f64().expect("subnormal mantissa fits a double");
    sign * libm::ldexp(qf, -1074)
}

fn shift_right_rounded(mag: &BigUint, shift: u64) -> BigUint {
    if shift == 0 {
        return mag.clone();
    }
    if shift > mag.bits() {
        return BigUint::zero();
    }
    let kept = mag >> (shift as usize);
    let dropped = mag - (&kept << (shift as usize));
    let half = BigUint::one() << ((shift - 1) as usize);
    match dropped.cmp(&half) {
        core::cmp::Ordering::Greater => kept + 1u32,
        core::cmp::Ordering::Less => kept,
        core::cmp::Ordering::Equal if kept.is_odd() => kept + 1u32,
        core::cmp::Ordering::Equal => kept,
    }
}

/// Round `m * 2^e` to `bits` significant bits.
pub(crate) fn round_dyadic(m: &BigInt, e: i64, bits: u32) -> (BigInt, i64) {
    if m.is_zero() {
        return (BigInt::zero(), 0);
    }
    let (mag, shift) = round_magnitude(m.magnitude().clone(), false, bits);
    (BigInt::from_biguint(m.sign(), mag), e + shift as i64)
}

/// Exact prefix sums of dyadics aligned to the smallest exponent.
///
/// Returns the prefix sums (length `values.len() + 1`) in units of
/// `2^emin` together with `emin`.
pub(crate) fn aligned_prefix_sums(values: &[(BigInt, i64)]) -> (Vec<BigInt>, i64) {
    let emin = values.iter().filter(|(m, _)| !m.is_zero()).map(|&(_, e)| e).min().unwrap_or(0);
    let mut sums = Vec::with_capacity(values.len() + 1);
    let mut acc = BigInt::zero();
    sums.push(acc.clone());
    for (m, e) in values {
        if !m.is_zero() {
            acc += m << ((e - emin) as usize);
        }
        sums.push(acc.clone());
    }
    (sums, emin)
}

/// Exact window means over dyadic values, each rounded once by `round`.
///
/// `round(num, den, emin)` must return the correctly rounded value of
/// `num * 2^emin / den`.
pub(crate) fn dyadic_window_means<T>(
    values: &[(BigInt, i64)],
    windows: &[(usize, usize)],
    mut round: impl FnMut(&BigInt, &BigInt, i64) -> T,
) -> Vec<T> {
    let (sums, emin) = aligned_prefix_sums(values);
    windows
        .iter()
        .map(|&(lo, hi)| {
            let total = &sums[hi + 1] - &sums[lo];
            let count = BigInt::from(hi - lo + 1);
            round(&total, &count, emin)
        })
        .collect()
}
