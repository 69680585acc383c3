//! Binary floating point with a runtime mantissa width.
//!
//! A [`BigFloat`] is `mant * 2^exp` with `|mant| < 2^prec`, kept with the
//! trailing zero bits stripped so equal values have equal representations.
//! Every operation computes the exact result and rounds once (ties to even);
//! binary operations round to the larger of the two operand precisions.

use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::dyadic::{dyadic_to_f64, f64_to_dyadic, round_dyadic, round_ratio};

/// Smallest mantissa width accepted by [`BigFloat`].
pub const MIN_PRECISION: u32 = 2;

#[derive(Clone)]
pub struct BigFloat {
    mant: BigInt,
    exp: i64,
    prec: u32,
}

impl BigFloat {
    pub fn zero(prec: u32) -> Self {
        Self { mant: BigInt::zero(), exp: 0, prec: prec.max(MIN_PRECISION) }
    }

    /// Rounds `mant * 2^exp` to `prec` bits.
    pub fn from_dyadic(mant: BigInt, exp: i64, prec: u32) -> Self {
        let prec = prec.max(MIN_PRECISION);
        let (m, e) = round_dyadic(&mant, exp, prec);
        Self::normalized(m, e, prec)
    }

    pub fn from_i64(v: i64, prec: u32) -> Self {
        Self::from_dyadic(BigInt::from(v), 0, prec)
    }

    pub fn from_f64(v: f64, prec: u32) -> Self {
        let (m, e) = f64_to_dyadic(v);
        Self::from_dyadic(m, e, prec)
    }

    /// Correctly rounded conversion of an exact rational.
    pub fn from_rational(r: &BigRational, prec: u32) -> Self {
        let prec = prec.max(MIN_PRECISION);
        let (m, e) = round_ratio(r.numer(), r.denom(), prec);
        Self::normalized(m, e, prec)
    }

    fn normalized(mut mant: BigInt, mut exp: i64, prec: u32) -> Self {
        if mant.is_zero() {
            return Self::zero(prec);
        }
        let tz = mant.trailing_zeros().unwrap_or(0);
        if tz > 0 {
            mant >>= tz as usize;
            exp += tz as i64;
        }
        Self { mant, exp, prec }
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    /// Same value rounded to a new precision.
    pub fn with_precision(&self, prec: u32) -> Self {
        Self::from_dyadic(self.mant.clone(), self.exp, prec)
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.mant.is_negative()
    }

    /// Exact `(mantissa, exponent)` pair.
    pub fn to_dyadic(&self) -> (BigInt, i64) {
        (self.mant.clone(), self.exp)
    }

    pub fn to_rational(&self) -> BigRational {
        if self.exp >= 0 {
            BigRational::from_integer(&self.mant << (self.exp as usize))
        } else {
            BigRational::new(self.mant.clone(), BigInt::one() << ((-self.exp) as usize))
        }
    }

    pub fn to_f64(&self) -> f64 {
        dyadic_to_f64(&self.mant, self.exp)
    }

    pub fn abs(&self) -> Self {
        Self { mant: self.mant.abs(), exp: self.exp, prec: self.prec }
    }

    /// Exponent of the leading bit plus one: `|self| < 2^top`.
    fn top(&self) -> i64 {
        self.exp + self.mant.bits() as i64
    }

    fn add_impl(&self, other: &Self) -> Self {
        let prec = self.prec.max(other.prec);
        if other.is_zero() {
            return self.with_precision(prec);
        }
        if self.is_zero() {
            return other.with_precision(prec);
        }
        let (big, small) = if self.top() >= other.top() { (self, other) } else { (other, self) };
        // A summand below a quarter ulp of the result cannot move the
        // rounded sum away from the larger operand.
        if big.top() - small.top() > prec as i64 + 3 {
            return big.with_precision(prec);
        }
        let emin = self.exp.min(other.exp);
        let a = &self.mant << ((self.exp - emin) as usize);
        let b = &other.mant << ((other.exp - emin) as usize);
        Self::from_dyadic(a + b, emin, prec)
    }

    fn mul_impl(&self, other: &Self) -> Self {
        let prec = self.prec.max(other.prec);
        Self::from_dyadic(&self.mant * &other.mant, self.exp + other.exp, prec)
    }

    fn div_impl(&self, other: &Self) -> Self {
        assert!(!other.is_zero(), "BigFloat division by zero");
        let prec = self.prec.max(other.prec);
        let (m, e) = round_ratio(&self.mant, &other.mant, prec);
        Self::normalized(m, e + self.exp - other.exp, prec)
    }

    fn cmp_value(&self, other: &Self) -> Ordering {
        let sa = self.mant.sign();
        let sb = other.mant.sign();
        if sa != sb {
            return sign_rank(sa).cmp(&sign_rank(sb));
        }
        if sa == Sign::NoSign {
            return Ordering::Equal;
        }
        let magnitude = match self.top().cmp(&other.top()) {
            Ordering::Equal => {
                let emin = self.exp.min(other.exp);
                let a = self.mant.magnitude() << ((self.exp - emin) as usize);
                let b = other.mant.magnitude() << ((other.exp - emin) as usize);
                a.cmp(&b)
            }
            ord => ord,
        };
        if sa == Sign::Minus {
            magnitude.reverse()
        } else {
            magnitude
        }
    }

    /// Scientific decimal with `digits` significant digits.
    pub fn to_decimal(&self, digits: usize) -> alloc::string::String {
        super::rational::to_scientific(&self.to_rational(), digits)
    }

    /// Digits needed for a lossless decimal round trip at this precision.
    pub fn default_digits(prec: u32) -> usize {
        (prec as f64 * core::f64::consts::LOG10_2) as usize + 2
    }
}

fn sign_rank(s: Sign) -> i8 {
    match s {
        Sign::Minus => -1,
        Sign::NoSign => 0,
        Sign::Plus => 1,
    }
}

impl PartialEq for BigFloat {
    fn eq(&self, other: &Self) -> bool {
        self.mant == other.mant && (self.mant.is_zero() || self.exp == other.exp)
    }
}

impl PartialOrd for BigFloat {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp_value(other))
    }
}

impl fmt::Debug for BigFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BigFloat({}, p={})", self.to_decimal(20), self.prec)
    }
}

impl fmt::Display for BigFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = f.precision().unwrap_or_else(|| Self::default_digits(self.prec));
        f.write_str(&self.to_decimal(digits))
    }
}

impl Neg for BigFloat {
    type Output = BigFloat;
    fn neg(self) -> BigFloat {
        BigFloat { mant: -self.mant, exp: self.exp, prec: self.prec }
    }
}

impl Neg for &BigFloat {
    type Output = BigFloat;
    fn neg(self) -> BigFloat {
        -(self.clone())
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $imp:ident) => {
        impl $tr<BigFloat> for BigFloat {
            type Output = BigFloat;
            fn $method(self, rhs: BigFloat) -> BigFloat {
                self.$imp(&rhs)
            }
        }
        impl<'a> $tr<&'a BigFloat> for BigFloat {
            type Output = BigFloat;
            fn $method(self, rhs: &'a BigFloat) -> BigFloat {
                self.$imp(rhs)
            }
        }
        impl<'a, 'b> $tr<&'b BigFloat> for &'a BigFloat {
            type Output = BigFloat;
            fn $method(self, rhs: &'b BigFloat) -> BigFloat {
                self.$imp(rhs)
            }
        }
    };
}

impl BigFloat {
    fn sub_impl(&self, other: &Self) -> Self {
        self.add_impl(&-other)
    }
}

forward_binop!(Add, add, add_impl);
forward_binop!(Sub, sub, sub_impl);
forward_binop!(Mul, mul, mul_impl);
forward_binop!(Div, div, div_impl);
