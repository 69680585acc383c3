//! Scalar backends and the precision policy.
//!
//! All algorithms in this crate are generic over [`Real`], which is
//! implemented by three backends:
//!
//! * [`BigRational`]: exact rationals, always in lowest terms.
//! * `f64`: hardware doubles.
//! * [`BigFloat`]: binary floating point with a runtime mantissa width.
//!
//! Means over windows of values ([`Real::window_means`]) are computed exactly
//! and rounded once in every backend, so a window mean never depends on the
//! order in which the window was summed.

mod bigfloat;
pub(crate) mod dyadic;
pub mod rational;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub use bigfloat::BigFloat;
pub use rational::{parse_rational, to_fraction_string, to_scientific};

use dyadic::{dyadic_to_f64, dyadic_window_means, f64_to_dyadic, round_ratio};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NumericsError {
    #[error("empty mean")]
    EmptyMean,
    #[error("mixed backends: {0:?} vs {1:?}")]
    MixedBackends(Backend, Backend),
    #[error("invalid precision policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("cannot parse number {0:?}")]
    Parse(String),
}

/// Which arithmetic a computation runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Exact,
    Double,
    BigFloat,
}

impl Backend {
    /// Name used on the command line and in metadata.
    pub fn name(self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Double => "f64",
            Backend::BigFloat => "bigfloat",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_BIGFLOAT_BITS: u32 = 256;
pub const DEFAULT_DOUBLE_TOL: f64 = 1e-12;

/// Backend selection, bigfloat mantissa width and comparison tolerance.
///
/// Invariants: `tolerance >= 0`, `tolerance == 0` exactly in exact mode,
/// `precision_bits >= 64` in bigfloat mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionPolicy {
    pub backend: Backend,
    pub precision_bits: u32,
    pub tolerance: f64,
}

impl PrecisionPolicy {
    pub fn exact() -> Self {
        Self { backend: Backend::Exact, precision_bits: 0, tolerance: 0.0 }
    }

    pub fn double() -> Self {
        Self { backend: Backend::Double, precision_bits: 53, tolerance: DEFAULT_DOUBLE_TOL }
    }

    /// Bigfloat policy with tolerance `2^(-bits/2)`.
    pub fn bigfloat(bits: u32) -> Self {
        Self { backend: Backend::BigFloat, precision_bits: bits, tolerance: libm::exp2(-(bits as f64) / 2.0) }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        if !self.tolerance.is_finite() || self.tolerance < 0.0 {
            return Err(NumericsError::InvalidPolicy("tolerance must be finite and >= 0"));
        }
        match self.backend {
            Backend::Exact if self.tolerance != 0.0 => {
                Err(NumericsError::InvalidPolicy("exact mode requires zero tolerance"))
            }
            Backend::Double | Backend::BigFloat if self.tolerance == 0.0 => {
                Err(NumericsError::InvalidPolicy("floating modes require a positive tolerance"))
            }
            Backend::BigFloat if self.precision_bits < 64 => {
                Err(NumericsError::InvalidPolicy("bigfloat precision must be >= 64 bits"))
            }
            _ => Ok(()),
        }
    }
}

/// Number type the dynamics are generic over.
pub trait Real:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + for<'a> Add<&'a Self, Output = Self>
    + for<'a> Sub<&'a Self, Output = Self>
    + for<'a> Mul<&'a Self, Output = Self>
    + for<'a> Div<&'a Self, Output = Self>
{
    /// Whatever is needed to construct constants (the bigfloat width).
    type Context: Clone + fmt::Debug + PartialEq + Send + Sync;

    const BACKEND: Backend;

    fn context(&self) -> Self::Context;
    fn context_for(policy: &PrecisionPolicy) -> Self::Context;

    /// Correctly rounded (exact in rational mode).
    fn from_rational(r: &BigRational, ctx: &Self::Context) -> Self;
    /// Correctly rounded conversion of the double's exact value.
    fn from_f64(v: f64, ctx: &Self::Context) -> Self;
    /// Exact value as a rational.
    fn to_rational(&self) -> BigRational;
    fn to_f64(&self) -> f64;

    fn abs(&self) -> Self;
    fn is_zero(&self) -> bool;

    /// Unit roundoff scale of the backend (zero in exact mode).
    fn machine_epsilon(ctx: &Self::Context) -> Self;

    /// Mean of `values[lo..=hi]` for every window, each exact then rounded once.
    fn window_means(values: &[Self], windows: &[(usize, usize)]) -> Vec<Self>;

    fn to_decimal(&self, digits: usize) -> String;
    /// Significant digits for a lossless decimal rendering.
    fn default_digits(ctx: &Self::Context) -> usize;

    fn from_int(v: i64, ctx: &Self::Context) -> Self {
        Self::from_rational(&BigRational::from_integer(v.into()), ctx)
    }

    fn from_ratio(n: i64, d: i64, ctx: &Self::Context) -> Self {
        Self::from_rational(&BigRational::new(n.into(), d.into()), ctx)
    }

    /// A constant in the same context as `self`.
    fn lit(&self, n: i64, d: i64) -> Self {
        Self::from_ratio(n, d, &self.context())
    }

    fn zero_like(&self) -> Self {
        Self::from_int(0, &self.context())
    }

    fn cmp_total(&self, other: &Self) -> Ordering {
        self.partial_cmp(other).expect("values must be comparable (no NaN)")
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn is_negative(&self) -> bool {
        *self < self.zero_like()
    }

    fn half(&self) -> Self {
        self.clone() / self.lit(2, 1)
    }
}

impl Real for f64 {
    type Context = ();
    const BACKEND: Backend = Backend::Double;

    fn context(&self) {}
    fn context_for(_: &PrecisionPolicy) {}

    fn from_rational(r: &BigRational, _: &()) -> f64 {
        let (m, e) = round_ratio(r.numer(), r.denom(), 53);
        if e < -1074 && !m.is_zero() {
            // subnormal: fewer mantissa bits are available
            let available = 53 - (-1074 - e);
            if available >= 1 {
                let (m, e) = round_ratio(r.numer(), r.denom(), available as u32);
                return dyadic_to_f64(&m, e);
            }
        }
        dyadic_to_f64(&m, e)
    }

    fn from_f64(v: f64, _: &()) -> f64 {
        v
    }

    fn to_rational(&self) -> BigRational {
        let (m, e) = f64_to_dyadic(*self);
        dyadic_rational(m, e)
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn abs(&self) -> f64 {
        libm::fabs(*self)
    }

    fn is_zero(&self) -> bool {
        *self == 0.0
    }

    fn machine_epsilon(_: &()) -> f64 {
        f64::EPSILON
    }

    fn window_means(values: &[f64], windows: &[(usize, usize)]) -> Vec<f64> {
        let dy: Vec<_> = values.iter().map(|&v| f64_to_dyadic(v)).collect();
        dyadic_window_means(&dy, windows, |num, den, emin| {
            let (m, e) = round_ratio(num, den, 53);
            if m.is_zero() || e + emin >= -1074 {
                dyadic_to_f64(&m, e + emin)
            } else {
                f64::from_rational(&(BigRational::new(num.clone(), den.clone()) * pow2(emin)), &())
            }
        })
    }

    fn to_decimal(&self, digits: usize) -> String {
        format!("{:.*e}", digits.max(1) - 1, self)
    }

    fn default_digits(_: &()) -> usize {
        17
    }

    fn from_int(v: i64, _: &()) -> f64 {
        v as f64
    }

    fn lit(&self, n: i64, d: i64) -> f64 {
        if d == 1 {
            n as f64
        } else {
            f64::from_ratio(n, d, &())
        }
    }

    fn zero_like(&self) -> f64 {
        0.0
    }
}

impl Real for BigRational {
    type Context = ();
    const BACKEND: Backend = Backend::Exact;

    fn context(&self) {}
    fn context_for(_: &PrecisionPolicy) {}

    fn from_rational(r: &BigRational, _: &()) -> Self {
        r.clone()
    }

    fn from_f64(v: f64, _: &()) -> Self {
        let (m, e) = f64_to_dyadic(v);
        dyadic_rational(m, e)
    }

    fn to_rational(&self) -> BigRational {
        self.clone()
    }

    fn to_f64(&self) -> f64 {
        f64::from_rational(self, &())
    }

    fn abs(&self) -> Self {
        Signed::abs(self)
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn machine_epsilon(_: &()) -> Self {
        BigRational::zero()
    }

    fn window_means(values: &[Self], windows: &[(usize, usize)]) -> Vec<Self> {
        // Prefix sums over one common denominator keep every partial sum an
        // integer, so the window totals cost one subtraction each.
        let common = values.iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
        let mut sums = Vec::with_capacity(values.len() + 1);
        let mut acc = BigInt::zero();
        sums.push(acc.clone());
        for v in values {
            acc += v.numer() * (&common / v.denom());
            sums.push(acc.clone());
        }
        windows
            .iter()
            .map(|&(lo, hi)| {
                let total = &sums[hi + 1] - &sums[lo];
                let count = BigInt::from(hi - lo + 1);
                BigRational::new(total, &common * count)
            })
            .collect()
    }

    fn to_decimal(&self, digits: usize) -> String {
        to_scientific(self, digits)
    }

    fn default_digits(_: &()) -> usize {
        20
    }
}

impl Real for BigFloat {
    type Context = u32;
    const BACKEND: Backend = Backend::BigFloat;

    fn context(&self) -> u32 {
        self.precision()
    }

    fn context_for(policy: &PrecisionPolicy) -> u32 {
        policy.precision_bits
    }

    fn from_rational(r: &BigRational, ctx: &u32) -> Self {
        BigFloat::from_rational(r, *ctx)
    }

    fn from_f64(v: f64, ctx: &u32) -> Self {
        BigFloat::from_f64(v, *ctx)
    }

    fn to_rational(&self) -> BigRational {
        BigFloat::to_rational(self)
    }

    fn to_f64(&self) -> f64 {
        BigFloat::to_f64(self)
    }

    fn abs(&self) -> Self {
        BigFloat::abs(self)
    }

    fn is_zero(&self) -> bool {
        BigFloat::is_zero(self)
    }

    fn machine_epsilon(ctx: &u32) -> Self {
        BigFloat::from_dyadic(BigInt::one(), 1 - *ctx as i64, *ctx)
    }

    fn window_means(values: &[Self], windows: &[(usize, usize)]) -> Vec<Self> {
        let prec = values.iter().map(|v| v.precision()).max().unwrap_or(64);
        let dy: Vec<_> = values.iter().map(|v| v.to_dyadic()).collect();
        dyadic_window_means(&dy, windows, |num, den, emin| {
            let (m, e) = round_ratio(num, den, prec);
            BigFloat::from_dyadic(m, e + emin, prec)
        })
    }

    fn to_decimal(&self, digits: usize) -> String {
        BigFloat::to_decimal(self, digits)
    }

    fn default_digits(ctx: &u32) -> usize {
        BigFloat::default_digits(*ctx)
    }

    fn from_int(v: i64, ctx: &u32) -> Self {
        BigFloat::from_i64(v, *ctx)
    }

    fn is_negative(&self) -> bool {
        BigFloat::is_negative(self)
    }
}

fn pow2(e: i64) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(BigInt::one() << (e as usize))
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << ((-e) as usize))
    }
}

fn dyadic_rational(m: BigInt, e: i64) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(m << (e as usize))
    } else {
        BigRational::new(m, BigInt::one() << ((-e) as usize))
    }
}

/// Arithmetic mean, exact in rational mode and correctly rounded otherwise.
pub fn mean<T: Real>(values: &[T]) -> Result<T, NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::EmptyMean);
    }
    Ok(T::window_means(values, &[(0, values.len() - 1)]).pop().expect("one window"))
}

/// Mantissa width of a context, `None` in exact mode.
pub fn mantissa_bits<T: Real>(ctx: &T::Context) -> Option<u32> {
    if T::BACKEND == Backend::Exact {
        return None;
    }
    // machine epsilon is 2^(1-P)
    Some(T::machine_epsilon(ctx).to_rational().denom().bits() as u32)
}

/// `2^e` in the given context.
pub fn power_of_two<T: Real>(e: i64, ctx: &T::Context) -> T {
    T::from_rational(&pow2(e), ctx)
}

/// `2^-(P/2)` for `P`-bit mantissas (zero in exact mode): the relative slack
/// used when a floating comparison must absorb accumulated rounding.
pub fn half_precision_unit<T: Real>(ctx: &T::Context) -> T {
    match mantissa_bits::<T>(ctx) {
        Some(p) => power_of_two(-(p as i64 / 2), ctx),
        None => T::from_int(0, ctx),
    }
}

/// `|a - b| <= tol`, where exact mode always compares with equality.
pub fn within<T: Real>(a: &T, b: &T, tol: f64) -> bool {
    if T::BACKEND == Backend::Exact {
        return a == b;
    }
    let diff = (a.clone() - b).abs();
    diff <= T::from_f64(tol, &a.context())
}

/// A value tagged with its backend, for interfaces that pick the backend at
/// run time.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Exact(BigRational),
    Double(f64),
    Big(BigFloat),
}

impl Scalar {
    pub fn backend(&self) -> Backend {
        match self {
            Scalar::Exact(_) => Backend::Exact,
            Scalar::Double(_) => Backend::Double,
            Scalar::Big(_) => Backend::BigFloat,
        }
    }

    /// Parses a decimal or `p/q` literal into the policy's backend.
    pub fn parse(text: &str, policy: &PrecisionPolicy) -> Result<Self, NumericsError> {
        let r = parse_rational(text)?;
        Ok(Self::from_rational(&r, policy))
    }

    pub fn from_rational(r: &BigRational, policy: &PrecisionPolicy) -> Self {
        match policy.backend {
            Backend::Exact => Scalar::Exact(r.clone()),
            Backend::Double => Scalar::Double(f64::from_rational(r, &())),
            Backend::BigFloat => Scalar::Big(BigFloat::from_rational(r, policy.precision_bits)),
        }
    }

    pub fn to_rational(&self) -> BigRational {
        match self {
            Scalar::Exact(r) => r.clone(),
            Scalar::Double(v) => v.to_rational(),
            Scalar::Big(b) => b.to_rational(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Exact(r) => r.to_f64(),
            Scalar::Double(v) => *v,
            Scalar::Big(b) => b.to_f64(),
        }
    }

    /// Decimal rendering; exact values use the `p/q` form.
    pub fn to_decimal_string(&self) -> String {
        match self {
            Scalar::Exact(r) => to_fraction_string(r),
            Scalar::Double(v) => v.to_decimal(17),
            Scalar::Big(b) => b.to_decimal(BigFloat::default_digits(b.precision())),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string())
    }
}

/// Equality in exact mode, `|a - b| <= tolerance` otherwise.
pub fn approx_eq(a: &Scalar, b: &Scalar, policy: &PrecisionPolicy) -> Result<bool, NumericsError> {
    if a.backend() != b.backend() {
        return Err(NumericsError::MixedBackends(a.backend(), b.backend()));
    }
    if a.backend() != policy.backend {
        return Err(NumericsError::MixedBackends(a.backend(), policy.backend));
    }
    Ok(match (a, b) {
        (Scalar::Exact(x), Scalar::Exact(y)) => x == y,
        (Scalar::Double(x), Scalar::Double(y)) => within(x, y, policy.tolerance),
        (Scalar::Big(x), Scalar::Big(y)) => within(x, y, policy.tolerance),
        _ => unreachable!("backends checked above"),
    })
}
