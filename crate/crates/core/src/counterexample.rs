//! A continuum profile whose opinion range never drops to two.
//!
//! The initial profile is a "double S" on `[0, 2 + ε² + 2ε⁴]`: a long shallow
//! tail `A = [0, 1]` with opinions `[0, ε]`, a very steep strip `B` of
//! length `ε⁴` climbing to `d + ε`, a short central piece `C` of length `ε²`,
//! and the mirror images `D`, `E` of `B`, `A` under the antisymmetry about the
//! centre. The agents of the tail never get pulled above `ε`, and by symmetry
//! neither do the ones of the far tail, so the range stays near `2d > 2`.
//!
//! [`run_counterexample`] evolves the profile and records, step by step, a
//! [`Certificate`] of six invariants together with the propagated slope
//! bounds that keep them true:
//!
//! | | invariant |
//! |-|-|
//! | I | `A ⊆ A_t`, where `A_t = x_t⁻¹([0, 2ε])` |
//! | II | `B_t ⊆ B`, where `B_t = x_t⁻¹([2ε, ε + d])` |
//! | III | `x_t(A) ⊆ [0, ε]` |
//! | IV | slopes on `A` are at most `e_t` |
//! | V | slopes on `B_t` are at least `s_t` |
//! | VI | the mean opinion on `A_t` stays below `ε − 2ε²` |
//!
//! Checks are made on the computed piecewise-linear profiles with a
//! relative slack of `2^-(P/2)`; they are numerical evidence, not interval
//! arithmetic.

use alloc::vec;
use alloc::vec::Vec;

use num_rational::BigRational;

use crate::continuum::{
    continuum_step_with, update_at_unchecked, ContinuumError, Profile, StepOptions, DEFAULT_BUDGET,
};
use crate::numerics::{half_precision_unit, mantissa_bits, power_of_two, Backend, Real};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CounterexampleError {
    #[error("epsilon must lie in (0, 1/4]")]
    InvalidEpsilon,
    #[error("d must lie in (1, 2)")]
    InvalidD,
    #[error("inputs must be positive")]
    NonPositive,
    #[error("a measure cannot be negative")]
    NegativeMeasure,
    #[error("increment series diverges: 4ε⁵/d >= 1")]
    Divergent,
    #[error("need at least one step")]
    NoSteps,
    #[error("precision exhausted at step {step}")]
    PrecisionExhausted { step: usize },
    #[error(transparent)]
    Continuum(#[from] ContinuumError),
}

/// Shape parameters; the tail `A` has length one.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleSParams<T> {
    pub epsilon: T,
    pub d: T,
}

impl<T: Real> DoubleSParams<T> {
    pub fn new(epsilon: T, d: T) -> Result<Self, CounterexampleError> {
        if epsilon <= epsilon.zero_like() || epsilon > epsilon.lit(1, 4) {
            return Err(CounterexampleError::InvalidEpsilon);
        }
        if d <= d.lit(1, 1) || d >= d.lit(2, 1) {
            return Err(CounterexampleError::InvalidD);
        }
        Ok(Self { epsilon, d })
    }

    pub fn from_rationals(
        epsilon: &BigRational,
        d: &BigRational,
        ctx: &T::Context,
    ) -> Result<Self, CounterexampleError> {
        Self::new(T::from_rational(epsilon, ctx), T::from_rational(d, ctx))
    }

    /// Small enough for the bound chain (`ε <= 1/100`).
    pub fn certifiable(&self) -> bool {
        self.epsilon <= self.epsilon.lit(1, 100)
    }

    fn pow(&self, k: u32) -> T {
        let mut out = self.epsilon.lit(1, 1);
        for _ in 0..k {
            out = out * &self.epsilon;
        }
        out
    }

    /// Right end of the tail `A`.
    pub fn tail_end(&self) -> T {
        self.epsilon.lit(1, 1)
    }

    /// `B = [1, 1 + ε⁴]`.
    pub fn steep_strip(&self) -> (T, T) {
        (self.tail_end(), self.tail_end() + self.pow(4))
    }

    /// Centre of the domain, `1 + ε⁴ + ε²/2`.
    pub fn center(&self) -> T {
        self.steep_strip().1 + self.pow(2).half()
    }

    /// Opinion at the centre, `d + 3ε/2`.
    pub fn center_value(&self) -> T {
        self.d.clone() + self.epsilon.lit(3, 2) * &self.epsilon
    }

    /// `2 · centre`, computed once so reflections land on it exactly.
    pub fn domain_end(&self) -> T {
        self.center() * self.epsilon.lit(2, 1)
    }
}

/// Reflects a left half-profile ending at `center` through
/// `(center, center_value)`; the last node's value is replaced by
/// `center_value`.
fn mirror_half<T: Real>(half: &Profile<T>, center: &T, center_value: &T) -> Profile<T> {
    let two = center.lit(2, 1);
    let far = center.clone() * &two;
    let top = center_value.clone() * &two;
    let n = half.len();
    let mut alphas: Vec<T> = half.breakpoints().to_vec();
    let mut values: Vec<T> = half.values().iter().map(|v| v.clone().min_of(center_value.clone())).collect();
    alphas[n - 1] = center.clone();
    values[n - 1] = center_value.clone();
    for i in (0..n - 1).rev() {
        let a = far.clone() - &half.breakpoints()[i];
        let v = top.clone() - &values[i];
        if a > alphas[alphas.len() - 1] {
            alphas.push(a);
            values.push(v);
        }
    }
    let last = alphas.len() - 1;
    alphas[last] = far;
    Profile::new(alphas, values).expect("reflection keeps the profile monotone")
}

/// The initial double-S profile.
pub fn build_double_s<T: Real>(params: &DoubleSParams<T>) -> Profile<T> {
    let e = &params.epsilon;
    let zero = e.zero_like();
    let (b0, b1) = params.steep_strip();
    let half = Profile::new(
        vec![zero.clone(), b0, b1, params.center()],
        vec![zero, e.clone(), e.clone() + &params.d, params.center_value()],
    )
    .expect("valid parameters give a monotone profile");
    mirror_half(&half, &params.center(), &params.center_value())
}

/// Closed agent intervals attached to a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSets<T> {
    /// Agents with opinions in `[0, 2ε]`.
    pub a_t: Option<(T, T)>,
    /// Agents with opinions in `[2ε, ε + d]`.
    pub b_t: Option<(T, T)>,
    /// Opinions of the tail `A = [start, start + 1]`.
    pub tail_image: (T, T),
}

fn preimage_interval<T: Real>(profile: &Profile<T>, lo: &T, hi: &T) -> Option<(T, T)> {
    let a = profile.preimage_inf(lo)?;
    let b = profile.preimage_sup(hi)?;
    (a <= b).then_some((a, b))
}

/// Preimages of `[0, 2ε]` and `[2ε, ε + d]`, and the image of the tail.
pub fn agent_sets<T: Real>(profile: &Profile<T>, epsilon: &T, d: &T) -> AgentSets<T> {
    let zero = epsilon.zero_like();
    let two_eps = epsilon.lit(2, 1) * epsilon;
    let tail_end = profile.start().clone() + epsilon.lit(1, 1);
    let tail_end = tail_end.min_of(profile.end().clone());
    AgentSets {
        a_t: preimage_interval(profile, &zero, &two_eps),
        b_t: preimage_interval(profile, &two_eps, &(epsilon.clone() + d)),
        tail_image: (profile.first_value().clone(), profile.eval(&tail_end).expect("tail end lies in the domain")),
    }
}

/// Checks derived from the step-to-step lemmas; only available from `t = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaChecks {
    /// `A_t ⊇ A_{t-1}` and `B_t ⊆ B_{t-1}`.
    pub containment: bool,
    /// Measured slopes respect the recursion applied to the previous
    /// measured slopes; `None` when `B_t` is too thin for the backend to
    /// resolve its slope.
    pub measured_chain: Option<bool>,
    /// The tail mean is nondecreasing and grew by at most `4|B_{t-1}|`.
    pub mean_increment: bool,
}

impl LemmaChecks {
    pub fn all(&self) -> bool {
        self.containment && self.measured_chain != Some(false) && self.mean_increment
    }
}

/// Per-step record of the six invariants and the slope bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate<T> {
    pub t: usize,
    pub range: T,
    /// Invariants I to VI, in order.
    pub assumptions: [bool; 6],
    /// Largest segment slope on the tail.
    pub e_meas: T,
    /// Smallest slope of a segment overlapping `B_t` (none if `B_t` is empty).
    pub s_meas: Option<T>,
    pub e_bound: T,
    pub s_bound: T,
    pub a_t_measure: T,
    pub b_t_measure: T,
    /// Mean opinion over `A_t`.
    pub a_mean: T,
    pub sets: AgentSets<T>,
    pub lemma: Option<LemmaChecks>,
    /// `|B_t| <= d / s_t`.
    pub b_size_ok: bool,
    pub pass: bool,
    /// Set when `|B_t|` is below what the backend resolves reliably.
    pub advisory: bool,
    /// `|B_t|` spans at least a thousand units in the last place of the
    /// domain, so measured slopes on it are meaningful.
    pub resolved: bool,
    /// Breakpoints of the profile.
    pub breakpoints: usize,
    /// Largest deviation from antisymmetry before it was enforced.
    pub symmetry_defect: Option<T>,
}

/// One application of the slope recursion: `(2e/s, εs/(2e), d/(εs/(2e)))`.
pub fn lemma_recursion<T: Real>(e: &T, s: &T, epsilon: &T, d: &T) -> Result<(T, T, T), CounterexampleError> {
    let zero = e.zero_like();
    if *e <= zero || *s <= zero || *epsilon <= zero || *d <= zero {
        return Err(CounterexampleError::NonPositive);
    }
    let two = e.lit(2, 1);
    let e_next = two.clone() * e / s;
    let s_next = epsilon.clone() * s / (two * e);
    let b_next = d.clone() / &s_next;
    Ok((e_next, s_next, b_next))
}

/// Largest possible growth of the tail mean in one step: `4|B_t|`.
pub fn mean_increment_bound<T: Real>(b_measure: &T) -> Result<T, CounterexampleError> {
    if b_measure.is_negative() {
        return Err(CounterexampleError::NegativeMeasure);
    }
    Ok(b_measure.lit(4, 1) * b_measure)
}

/// Sum of all tail-mean increments, `ε/2 + 4ε⁴ + 8ε⁴/(1 − 4ε⁵/d)`, and
/// whether it stays below `ε − 2ε²`.
pub fn limit_mean_bound<T: Real>(epsilon: &T, d: &T) -> Result<(T, bool), CounterexampleError> {
    let one = epsilon.lit(1, 1);
    let e2 = epsilon.clone() * epsilon;
    let e4 = e2.clone() * &e2;
    let ratio = epsilon.lit(4, 1) * &e4 * epsilon / d;
    if ratio >= one {
        return Err(CounterexampleError::Divergent);
    }
    let bound = epsilon.half() + epsilon.lit(4, 1) * &e4 + epsilon.lit(8, 1) * &e4 / (one - ratio);
    let limit = epsilon.clone() - epsilon.lit(2, 1) * &e2;
    let ok = bound < limit;
    Ok((bound, ok))
}

/// The explicit smallness conditions on `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpsilonGuards {
    /// `ε <= (√13 − 3)/4`, checked as `(4ε + 3)² <= 13`; derived for `d = 3/2`.
    pub root_thirteen: bool,
    /// `ε <= 1/10`.
    pub tenth: bool,
    /// `ε <= 1/4`.
    pub quarter: bool,
}

impl EpsilonGuards {
    pub fn all(&self) -> bool {
        self.root_thirteen && self.tenth && self.quarter
    }
}

pub fn epsilon_guards<T: Real>(epsilon: &T) -> EpsilonGuards {
    let t = epsilon.lit(4, 1) * epsilon + epsilon.lit(3, 1);
    EpsilonGuards {
        root_thirteen: t.clone() * &t <= epsilon.lit(13, 1),
        tenth: *epsilon <= epsilon.lit(1, 10),
        quarter: *epsilon <= epsilon.lit(1, 4),
    }
}

fn sup_slope_on<T: Real>(profile: &Profile<T>, lo: &T, hi: &T) -> Option<T> {
    slopes_overlapping(profile, lo, hi).reduce(|a, b| a.max_of(b))
}

fn inf_slope_on<T: Real>(profile: &Profile<T>, lo: &T, hi: &T) -> Option<T> {
    slopes_overlapping(profile, lo, hi).reduce(|a, b| a.min_of(b))
}

/// Slopes of the segments meeting `(lo, hi)` in a set of positive length.
fn slopes_overlapping<'a, T: Real>(profile: &'a Profile<T>, lo: &'a T, hi: &'a T) -> impl Iterator<Item = T> + 'a {
    let a = profile.breakpoints();
    let first = a.partition_point(|x| x <= lo).saturating_sub(1);
    (first..a.len() - 1)
        .take_while(move |&k| a[k] < *hi)
        .filter(move |&k| a[k + 1] > *lo)
        .map(move |k| profile.slope(k))
}

/// Measures the six invariants on `profile` and propagates the slope bounds
/// from `prev`.
pub fn verify_assumptions<T: Real>(
    profile: &Profile<T>,
    params: &DoubleSParams<T>,
    prev: Option<&Certificate<T>>,
) -> Result<Certificate<T>, CounterexampleError> {
    let ctx = profile.context();
    let slack = half_precision_unit::<T>(&ctx);
    let one = params.epsilon.lit(1, 1);
    let below = |a: &T, b: &T| *a <= b.clone() * (one.clone() + &slack);
    let above = |a: &T, b: &T| *a >= b.clone() * (one.clone() - &slack);
    let eps = &params.epsilon;
    let d = &params.d;
    let zero = eps.zero_like();

    let sets = agent_sets(profile, eps, d);
    let tail = (profile.start().clone(), params.tail_end());
    let strip = params.steep_strip();

    let (e_bound, s_bound) = match prev {
        None => (eps.clone(), d.clone() / (strip.1.clone() - &strip.0)),
        Some(c) => {
            let (e, s, _) = lemma_recursion(&c.e_bound, &c.s_bound, eps, d)?;
            (e, s)
        }
    };

    let (a_t_measure, a_mean) = match &sets.a_t {
        Some((lo, hi)) if hi > lo => {
            let len = hi.clone() - lo;
            (len.clone(), profile.integral(lo, hi)? / len)
        }
        Some((lo, _)) => (zero.clone(), profile.eval(lo)?),
        None => (zero.clone(), zero.clone()),
    };
    let b_t_measure = match &sets.b_t {
        Some((lo, hi)) => hi.clone() - lo,
        None => zero.clone(),
    };

    let e_meas = sup_slope_on(profile, &tail.0, &tail.1).expect("the tail has positive length");
    let s_meas = match &sets.b_t {
        Some((lo, hi)) if hi > lo => inf_slope_on(profile, lo, hi),
        _ => None,
    };

    let i = matches!(&sets.a_t, Some((lo, hi)) if *lo <= tail.0 && *hi >= tail.1);
    let ii = match &sets.b_t {
        Some((lo, hi)) => *lo >= strip.0 && *hi <= strip.1,
        None => true,
    };
    let iii = sets.tail_image.0 >= zero && sets.tail_image.1 <= *eps;
    let iv = below(&e_meas, &e_bound);
    let v = s_meas.as_ref().is_none_or(|s| above(s, &s_bound));
    let vi = eps.clone() - &a_mean > eps.lit(2, 1) * eps * eps;
    let assumptions = [i, ii, iii, iv, v, vi];

    let resolved = match mantissa_bits::<T>(&profile.context()) {
        Some(bits) => {
            let ulp = power_of_two::<T>(-(bits as i64), &profile.context()) * profile.domain_length();
            b_t_measure >= ulp * eps.lit(1000, 1)
        }
        None => true,
    };
    let range = profile.range();
    let b_size_ok = below(&b_t_measure, &(d.clone() / &s_bound));
    let pass = assumptions.iter().all(|&b| b) && range > eps.lit(2, 1);

    let lemma = prev.map(|p| {
        let containment = match (&sets.a_t, &p.sets.a_t) {
            (Some((lo, hi)), Some((plo, phi))) => lo <= plo && hi >= phi,
            (_, None) => true,
            (None, Some(_)) => false,
        } && match (&sets.b_t, &p.sets.b_t) {
            (Some((lo, hi)), Some((plo, phi))) => lo >= plo && hi <= phi,
            (None, _) => true,
            (Some(_), None) => false,
        };
        let measured_chain = match (&p.s_meas, &s_meas) {
            _ if !resolved || !p.resolved => None,
            (Some(ps), now) => {
                let two = eps.lit(2, 1);
                let e_ok = below(&e_meas, &(two.clone() * &p.e_meas / ps));
                let s_ok = now.as_ref().is_none_or(|s| above(s, &(eps.clone() * ps / (two * &p.e_meas))));
                Some(e_ok && s_ok)
            }
            (None, _) => Some(true),
        };
        let growth = a_mean.clone() - &p.a_mean;
        let mean_increment = above(&a_mean, &p.a_mean)
            && below(&growth, &mean_increment_bound(&p.b_t_measure).expect("measures are nonnegative"));
        LemmaChecks { containment, measured_chain, mean_increment }
    });

    Ok(Certificate {
        t: prev.map_or(0, |p| p.t + 1),
        range,
        assumptions,
        e_meas,
        s_meas,
        e_bound,
        s_bound,
        a_t_measure,
        b_t_measure,
        a_mean,
        sets,
        lemma,
        b_size_ok,
        pass,
        advisory: false,
        resolved,
        breakpoints: profile.len(),
        symmetry_defect: None,
    })
}

/// Controls for [`run_counterexample`].
#[derive(Debug, Clone)]
pub struct CounterexampleOptions<T> {
    /// Per-step tolerance; defaults to `1e-9 · range`.
    pub tol: Option<T>,
    pub budget: usize,
    pub keep_profiles: bool,
}

impl<T> Default for CounterexampleOptions<T> {
    fn default() -> Self {
        Self { tol: None, budget: DEFAULT_BUDGET, keep_profiles: false }
    }
}

/// Relative per-step tolerance used when none is given.
pub const DEFAULT_TOL_SCALE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleRun<T> {
    /// Certificates for `t = 0, …, T`.
    pub certificates: Vec<Certificate<T>>,
    /// Profiles for `t = 0, …, T` when requested.
    pub profiles: Option<Vec<Profile<T>>>,
    pub limit_mean: (T, bool),
    pub guards: EpsilonGuards,
    pub tol: T,
}

impl<T: Real> CounterexampleRun<T> {
    /// Every certificate passes.
    pub fn passed(&self) -> bool {
        self.certificates.iter().all(|c| c.pass)
    }

    /// Every certificate passes with the lemma checks, bound checks and
    /// symmetry defect within tolerance, none is advisory, and the
    /// parameters are small enough for the bound chain.
    pub fn certified(&self) -> bool {
        self.passed()
            && self.limit_mean.1
            && self.guards.all()
            && self.certificates.iter().all(|c| {
                !c.advisory
                    && c.b_size_ok
                    && c.lemma.as_ref().is_none_or(LemmaChecks::all)
                    && c.symmetry_defect.as_ref().is_none_or(|s| *s <= self.tol)
            })
    }
}

/// Base-2 logarithms of the predicted `|B_t|` bounds for `t = 0..=steps`.
fn predicted_strip_log2(epsilon: f64, d: f64, steps: usize) -> Vec<f64> {
    let le = libm::log2(epsilon);
    let ld = libm::log2(d);
    let mut out = vec![4.0 * le];
    let (mut e, mut s) = (le, ld - 4.0 * le);
    for _ in 0..steps {
        let e_next = 1.0 + e - s;
        let s_next = le + s - 1.0 - e;
        e = e_next;
        s = s_next;
        out.push(ld - s);
    }
    out
}

/// First step whose predicted `|B_t|` falls below `1000 · 2^-P`.
pub fn precision_shortfall(epsilon: f64, d: f64, steps: usize, bits: u32) -> Option<usize> {
    let margin = libm::log2(1e3);
    predicted_strip_log2(epsilon, d, steps).iter().position(|&lb| -(bits as f64) > lb - margin)
}

/// Evolves the double-S profile for `steps` updates, certifying every state.
///
/// Each update is computed on the left half of the domain and reflected;
/// the deviation from antisymmetry of the raw update is sampled and
/// recorded. The level sets `x = 2ε` and `x = ε + d` are located by
/// bisection and inserted as breakpoints so segment slopes can be attributed
/// to `A_t` and `B_t` cleanly. Binary-float backends refuse to start when
/// their mantissa cannot resolve the predicted strip widths; in double
/// precision certificates are instead marked advisory once `|B_t|` drops
/// below `2^-40` of the domain.
pub fn run_counterexample<T: Real>(
    params: &DoubleSParams<T>,
    steps: usize,
    opts: &CounterexampleOptions<T>,
) -> Result<CounterexampleRun<T>, CounterexampleError> {
    if steps == 0 {
        return Err(CounterexampleError::NoSteps);
    }
    let ctx = params.epsilon.context();
    if T::BACKEND == Backend::BigFloat {
        let bits = mantissa_bits::<T>(&ctx).expect("floating backend");
        if let Some(step) = precision_shortfall(params.epsilon.to_f64(), params.d.to_f64(), steps, bits) {
            return Err(CounterexampleError::PrecisionExhausted { step });
        }
    }
    let limit_mean = limit_mean_bound(&params.epsilon, &params.d)?;
    let guards = epsilon_guards(&params.epsilon);

    let mut profile = build_double_s(params);
    let tol = opts.tol.clone().unwrap_or_else(|| profile.range() * T::from_f64(DEFAULT_TOL_SCALE, &ctx));
    let resolution = power_of_two::<T>(-40, &ctx) * profile.domain_length();
    let advisory = |c: &Certificate<T>| T::BACKEND == Backend::Double && c.b_t_measure < resolution;

    let mut cert = verify_assumptions(&profile, params, None)?;
    cert.advisory = advisory(&cert);
    let mut certificates = vec![cert];
    let mut profiles = opts.keep_profiles.then(|| vec![profile.clone()]);

    let center = params.center();
    let center_value = params.center_value();
    let two_eps = params.epsilon.lit(2, 1) * &params.epsilon;
    let upper_level = params.epsilon.clone() + &params.d;
    // Earlier level-set endpoints stay breakpoints: the update is nearly
    // constant between them, and a chord across one of these boundaries
    // would blur the tail mean at the scale of |B_t|.
    let mut pins = vec![params.tail_end(), center.clone()];
    for _ in 0..steps {
        pins.extend(level_endpoints(certificates.last().expect("t = 0 certificate")));
        let step_opts = StepOptions {
            tol: tol.clone(),
            budget: opts.budget,
            coarsen: true,
            pinned: pins.clone(),
            span: Some((profile.start().clone(), center.clone())),
        };
        let half = continuum_step_with(&profile, &step_opts)?;
        let half = pin_level(&profile, half, &two_eps, true);
        let half = pin_level(&profile, half, &upper_level, false);
        let defect = symmetry_defect(&profile, &half, &center, &center_value);
        let next = mirror_half(&half, &center, &center_value);

        let prev = certificates.last().expect("t = 0 certificate");
        let mut cert = verify_assumptions(&next, params, Some(prev))?;
        cert.advisory = advisory(&cert) || prev.advisory;
        cert.symmetry_defect = Some(defect);
        certificates.push(cert);
        if let Some(ps) = profiles.as_mut() {
            ps.push(next.clone());
        }
        profile = next;
    }

    Ok(CounterexampleRun { certificates, profiles, limit_mean, guards, tol })
}

fn level_endpoints<T: Real>(c: &Certificate<T>) -> Vec<T> {
    let mut out = Vec::new();
    if let Some((_, hi)) = &c.sets.a_t {
        out.push(hi.clone());
    }
    if let Some((lo, hi)) = &c.sets.b_t {
        out.push(lo.clone());
        out.push(hi.clone());
    }
    out
}

/// Inserts a breakpoint where the update of `prev` crosses `level`, with
/// value exactly `level`. `lower` picks the left end of the level set (the
/// start of `x⁻¹([level, ∞))`), otherwise the right end.
fn pin_level<T: Real>(prev: &Profile<T>, half: Profile<T>, level: &T, lower: bool) -> Profile<T> {
    let vals = half.values();
    if *level <= vals[0] || *level >= vals[vals.len() - 1] {
        return half;
    }
    let k = if lower { vals.partition_point(|v| v < level) } else { vals.partition_point(|v| v <= level) - 1 };
    if vals[k] == *level {
        return half;
    }
    let mut alphas = half.breakpoints().to_vec();
    let mut values = vals.to_vec();
    let (mut lo, mut hi) =
        if lower { (alphas[k - 1].clone(), alphas[k].clone()) } else { (alphas[k].clone(), alphas[k + 1].clone()) };
    // invariant: f(lo) < level <= f(hi) when lower, f(lo) <= level < f(hi) otherwise
    loop {
        let mid = (lo.clone() + &hi).half();
        if mid <= lo || mid >= hi {
            break;
        }
        let f = update_at_unchecked(prev, &mid);
        let go_right = if lower { f < *level } else { f <= *level };
        if go_right {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (at, index) = if lower { (hi, k) } else { (lo, k + 1) };
    if at == alphas[k] {
        values[k] = level.clone();
    } else {
        alphas.insert(index, at);
        values.insert(index, level.clone());
    }
    Profile::new(alphas, values).expect("level lies between its neighbours")
}

/// Largest `|f(α) + f(2c − α) − 2x_c|` over up to 257 breakpoints of the
/// left half, where `f` is the exact update of `prev`, together with the
/// deviation of the centre value.
fn symmetry_defect<T: Real>(prev: &Profile<T>, half: &Profile<T>, center: &T, center_value: &T) -> T {
    let far = center.lit(2, 1) * center;
    let top = center_value.lit(2, 1) * center_value;
    let n = half.len();
    let stride = (n / 256).max(1);
    let mut worst = (update_at_unchecked(prev, center) - center_value).abs();
    for i in (0..n).step_by(stride) {
        let a = &half.breakpoints()[i];
        let mirrored = (far.clone() - a).min_of(prev.end().clone());
        let left = update_at_unchecked(prev, a);
        let right = update_at_unchecked(prev, &mirrored);
        worst = worst.max_of((left + right - &top).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::regularity_check;
    use crate::numerics::BigFloat;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n.into(), d.into())
    }

    fn exact_params() -> DoubleSParams<Q> {
        DoubleSParams::new(q(1, 100), q(3, 2)).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert_eq!(DoubleSParams::new(q(3, 10), q(3, 2)), Err(CounterexampleError::InvalidEpsilon));
        assert_eq!(DoubleSParams::new(q(0, 1), q(3, 2)), Err(CounterexampleError::InvalidEpsilon));
        assert_eq!(DoubleSParams::new(q(1, 100), q(2, 1)), Err(CounterexampleError::InvalidD));
        assert!(DoubleSParams::new(q(1, 4), q(3, 2)).is_ok());
        assert!(exact_params().certifiable());
        assert!(!DoubleSParams::new(q(1, 20), q(3, 2)).unwrap().certifiable());
    }

    #[test]
    fn double_s_shape() {
        let p = exact_params();
        let x = build_double_s(&p);
        let e = q(1, 100);
        let e2 = &e * &e;
        let e4 = &e2 * &e2;
        assert_eq!(
            x.breakpoints(),
            &[
                q(0, 1),
                q(1, 1),
                q(1, 1) + &e4,
                q(1, 1) + &e4 + &e2 / q(2, 1),
                q(1, 1) + &e4 + &e2,
                q(1, 1) + &e4 * q(2, 1) + &e2,
                q(2, 1) + &e4 * q(2, 1) + &e2,
            ]
        );
        assert_eq!(x.range(), q(3, 1) + q(3, 100));
        assert_eq!(x.eval(&p.center()).unwrap(), q(3, 2) + q(3, 200));
        let (lo, hi) = regularity_check(&x).unwrap();
        assert_eq!(lo, e.clone());
        assert_eq!(hi, q(3, 2) / &e4);
        assert_eq!(x.slope(2), q(100, 1));
    }

    #[test]
    fn agent_sets_at_start() {
        let p = exact_params();
        let x = build_double_s(&p);
        let sets = agent_sets(&x, &p.epsilon, &p.d);
        let (lo, hi) = sets.a_t.unwrap();
        let e5 = q(1, 10_000_000_000);
        assert_eq!(lo, q(0, 1));
        assert_eq!(hi - lo, q(1, 1) + e5 / q(3, 2));
        let (blo, bhi) = sets.b_t.unwrap();
        assert!(blo > q(1, 1) && bhi == p.steep_strip().1);
        assert_eq!(sets.tail_image, (q(0, 1), q(1, 100)));

        let flat = Profile::constant(q(0, 1), q(2, 1), q(0, 1)).unwrap();
        let sets = agent_sets(&flat, &p.epsilon, &p.d);
        assert_eq!(sets.a_t, Some((q(0, 1), q(2, 1))));
        assert_eq!(sets.b_t, None);
    }

    #[test]
    fn initial_certificate() {
        let p = exact_params();
        let c = verify_assumptions(&build_double_s(&p), &p, None).unwrap();
        assert_eq!(c.assumptions, [true; 6]);
        assert!(c.pass);
        assert_eq!(c.e_meas, q(1, 100));
        assert_eq!(c.s_meas, Some(q(3, 2) * q(100_000_000, 1)));
        // mean over A_0 is about ε/2
        let margin = q(1, 100) - &c.a_mean;
        assert!(margin > q(1, 250) && margin < q(1, 150));
    }

    #[test]
    fn broken_tail_image_fails() {
        let p = exact_params();
        let x = Profile::new(vec![q(0, 1), q(1, 1), q(2, 1)], vec![q(1, 1000), q(2, 100), q(3, 1)]).unwrap();
        let c = verify_assumptions(&x, &p, None).unwrap();
        assert!(!c.assumptions[2]);
        assert!(!c.pass);
    }

    #[test]
    fn recursion_examples() {
        let e = q(1, 100);
        let d = q(3, 2);
        let e4 = q(1, 100_000_000);
        let (e1, s1, b1) = lemma_recursion(&e, &(d.clone() / &e4), &e, &d).unwrap();
        assert_eq!(e1, q(2, 1) * &e4 * &e / &d);
        assert_eq!(s1, d.clone() / (q(2, 1) * &e4));
        assert_eq!(b1, q(2, 1) * &e4);
        let (e2, s2, b2) = lemma_recursion(&q(5, 1), &q(5, 1), &e, &d).unwrap();
        assert_eq!((e2, s2, b2), (q(2, 1), q(1, 200), q(300, 1)));
        assert_eq!(lemma_recursion(&q(0, 1), &q(1, 1), &e, &d), Err(CounterexampleError::NonPositive));
        // with e = e_1 the steep slope grows by exactly d/(4ε⁴)
        let (_, s2, _) = lemma_recursion(&e1, &s1, &e, &d).unwrap();
        assert_eq!(s2, s1.clone() * &d / (q(4, 1) * &e4));
    }

    #[test]
    fn increment_bounds() {
        let e4 = q(1, 100_000_000);
        assert_eq!(mean_increment_bound(&e4).unwrap(), q(4, 1) * &e4);
        assert_eq!(mean_increment_bound(&q(0, 1)).unwrap(), q(0, 1));
        assert_eq!(mean_increment_bound(&(q(2, 1) * &e4)).unwrap(), q(8, 1) * &e4);
        assert_eq!(mean_increment_bound(&q(-1, 1)), Err(CounterexampleError::NegativeMeasure));
    }

    #[test]
    fn limit_mean_examples() {
        let (bound, ok) = limit_mean_bound(&q(1, 100), &q(3, 2)).unwrap();
        assert!(ok);
        assert!(bound < q(98, 10_000));
        let (bound, ok) = limit_mean_bound(&q(1, 4), &q(3, 2)).unwrap();
        assert!(!ok);
        assert_eq!(bound, q(4215, 24512));
        let (bound, ok) = limit_mean_bound(&q(1, 100_000), &q(3, 2)).unwrap();
        assert!(ok);
        assert!((bound * q(100_000, 1) - q(1, 2)).abs() < q(1, 1_000_000));
    }

    #[test]
    fn guard_examples() {
        assert!(epsilon_guards(&q(1, 100)).all());
        let g = epsilon_guards(&q(1, 5));
        assert!(!g.root_thirteen);
        let g = epsilon_guards(&q(1, 10));
        assert!(g.tenth && g.quarter);
        // boundary of the radical guard sits between 0.1513 and 0.1515
        assert!(epsilon_guards(&q(1513, 10_000)).root_thirteen);
        assert!(!epsilon_guards(&q(1515, 10_000)).root_thirteen);
    }

    #[test]
    fn precision_sizing() {
        assert_eq!(precision_shortfall(0.01, 1.5, 5, 512), None);
        assert!(precision_shortfall(0.01, 1.5, 5, 256).is_some());
        assert_eq!(precision_shortfall(0.01, 1.5, 5, 53), Some(2));
    }

    #[test]
    fn mirror_is_antisymmetric() {
        let p = DoubleSParams::new(BigFloat::from_f64(0.01, 128), BigFloat::from_f64(1.5, 128)).unwrap();
        let x = build_double_s(&p);
        let far = p.domain_end();
        let top = p.center_value() * BigFloat::from_i64(2, 128);
        let n = x.len();
        for i in 0..n {
            let a = &x.breakpoints()[i];
            let b = &x.breakpoints()[n - 1 - i];
            assert_eq!(a.clone() + b, far);
            assert_eq!(x.values()[i].clone() + &x.values()[n - 1 - i], top);
        }
    }

    #[test]
    fn one_step_in_double() {
        let p = DoubleSParams::new(0.05, 1.5).unwrap();
        let run = run_counterexample(&p, 1, &CounterexampleOptions::default()).unwrap();
        let c = &run.certificates[1];
        assert!(c.range > 2.0);
        assert!(c.lemma.as_ref().unwrap().containment);
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn zero_steps_rejected() {
        let p = DoubleSParams::new(0.01, 1.5).unwrap();
        assert_eq!(run_counterexample(&p, 0, &CounterexampleOptions::default()), Err(CounterexampleError::NoSteps));
    }
}
