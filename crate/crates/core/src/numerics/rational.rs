//! Exact-rational text formats.

use alloc::format;
use alloc::string::{String, ToString};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, Zero};

use super::NumericsError;

/// `p/q` in lowest terms, or just `p` for integers.
pub fn to_fraction_string(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Scientific notation `d.ddd…e±k` with `digits` significant digits,
/// rounded half away from zero.
pub fn to_scientific(r: &BigRational, digits: usize) -> String {
    let digits = digits.max(1);
    if r.is_zero() {
        return "0".into();
    }
    let negative = r.is_negative();
    let a = r.abs();
    // initial guess for floor(log10 |r|) from the bit lengths
    let bits = a.numer().bits() as i64 - a.denom().bits() as i64;
    let mut k = ((bits as f64) * core::f64::consts::LOG10_2) as i64;
    let ten = BigInt::from(10);
    let (mantissa, exp10) = loop {
        // scaled = |r| * 10^(digits-1-k)
        let shift = digits as i64 - 1 - k;
        let scaled = if shift >= 0 {
            &a * BigRational::from_integer(Pow::pow(&ten, shift as u64))
        } else {
            &a / BigRational::from_integer(Pow::pow(&ten, (-shift) as u64))
        };
        let (q, rem) = scaled.numer().div_rem(scaled.denom());
        let q = if &rem * 2 >= *scaled.denom() { q + 1 } else { q };
        let lower = Pow::pow(&ten, (digits - 1) as u64);
        let upper = &lower * &ten;
        if q < lower {
            k -= 1;
        } else if q >= upper {
            k += 1;
        } else {
            break (q, k);
        }
    };
    let text = mantissa.to_string();
    let mut out = String::with_capacity(text.len() + 8);
    if negative {
        out.push('-');
    }
    out.push_str(&text[..1]);
    let tail = text[1..].trim_end_matches('0');
    if !tail.is_empty() {
        out.push('.');
        out.push_str(tail);
    }
    out.push('e');
    out.push_str(&exp10.to_string());
    out
}

/// Parses `p/q`, an integer, or a decimal literal (`-1.25`, `3e-4`) exactly.
pub fn parse_rational(text: &str) -> Result<BigRational, NumericsError> {
    let s = text.trim();
    let bad = || NumericsError::Parse(s.into());
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i64 = s[i + 1..].parse().map_err(|_| bad())?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    let (negative, body) = match mantissa.as_bytes().first() {
        Some(b'-') => (true, &mantissa[1..]),
        Some(b'+') => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let mut digits = String::with_capacity(int_part.len() + frac_part.len());
    digits.push_str(int_part);
    digits.push_str(frac_part);
    let numer: BigInt = digits.parse().map_err(|_| bad())?;
    let scale = exponent - frac_part.len() as i64;
    let ten = BigInt::from(10);
    let mut value = if scale >= 0 {
        BigRational::from_integer(numer * Pow::pow(&ten, scale as u64))
    } else {
        BigRational::new(numer, Pow::pow(&ten, (-scale) as u64))
    };
    if negative {
        value = -value;
    }
    Ok(value)
}
