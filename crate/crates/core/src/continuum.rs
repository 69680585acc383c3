//! Agents indexed by an interval, with monotone piecewise-linear opinions.
//!
//! A [`Profile`] interpolates linearly between breakpoints. For a monotone
//! profile the confidence neighbourhood of an agent `α` is the interval
//! `[u(α), v(α)]` between the extreme preimages of `x(α) ∓ 1`, so the update
//! is an average of a piecewise-linear function over an interval and has a
//! closed form. [`continuum_step`] samples that update at every abscissa
//! where its formula changes and bisects in between until the linear
//! interpolant is within the requested tolerance.

use alloc::vec;
use alloc::vec::Vec;

use crate::discrete::OpinionConfig;
use crate::numerics::{half_precision_unit, power_of_two, Backend, Real};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContinuumError {
    #[error("a profile needs at least two breakpoints")]
    TooFewBreakpoints,
    #[error("{0} abscissae but {1} values")]
    LengthMismatch(usize, usize),
    #[error("abscissae must be strictly increasing (violated at index {0})")]
    NotIncreasing(usize),
    #[error("values must be nondecreasing (violated at index {0})")]
    NotMonotone(usize),
    #[error("abscissa outside the domain")]
    OutsideDomain,
    #[error("kink")]
    Kink,
    #[error("refinement overflow: more than {0} breakpoints")]
    RefinementOverflow(usize),
    #[error("tolerance must be positive")]
    NonPositiveTolerance,
    #[error("segment {0} is flat")]
    FlatSegment(usize),
    #[error("need at least one agent")]
    NoAgents,
}

/// Monotone piecewise-linear function on `[α₀, α_m]`.
#[derive(Debug, Clone)]
pub struct Profile<T> {
    alphas: Vec<T>,
    values: Vec<T>,
    // cum[k] = integral of the profile from α₀ to α_k
    cum: Vec<T>,
}

impl<T: PartialEq> PartialEq for Profile<T> {
    fn eq(&self, other: &Self) -> bool {
        self.alphas == other.alphas && self.values == other.values
    }
}

impl<T: Real> Profile<T> {
    pub fn new(alphas: Vec<T>, values: Vec<T>) -> Result<Self, ContinuumError> {
        if alphas.len() != values.len() {
            return Err(ContinuumError::LengthMismatch(alphas.len(), values.len()));
        }
        if alphas.len() < 2 {
            return Err(ContinuumError::TooFewBreakpoints);
        }
        if let Some(i) = alphas.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ContinuumError::NotIncreasing(i + 1));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(ContinuumError::NotMonotone(i + 1));
        }
        Ok(Self::from_parts(alphas, values))
    }

    fn from_parts(alphas: Vec<T>, values: Vec<T>) -> Self {
        let mut cum = Vec::with_capacity(alphas.len());
        let mut acc = alphas[0].zero_like();
        cum.push(acc.clone());
        for k in 0..alphas.len() - 1 {
            let piece = (alphas[k + 1].clone() - &alphas[k]) * (values[k].clone() + &values[k + 1]);
            acc = acc + piece.half();
            cum.push(acc.clone());
        }
        Self { alphas, values, cum }
    }

    /// Straight line from `(start, v0)` to `(end, v1)`.
    pub fn linear(start: T, end: T, v0: T, v1: T) -> Result<Self, ContinuumError> {
        Self::new(vec![start, end], vec![v0, v1])
    }

    pub fn constant(start: T, end: T, c: T) -> Result<Self, ContinuumError> {
        Self::new(vec![start, end], vec![c.clone(), c])
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.alphas
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Number of breakpoints.
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> &T {
        &self.alphas[0]
    }

    pub fn end(&self) -> &T {
        &self.alphas[self.alphas.len() - 1]
    }

    pub fn first_value(&self) -> &T {
        &self.values[0]
    }

    pub fn last_value(&self) -> &T {
        &self.values[self.values.len() - 1]
    }

    pub fn domain_length(&self) -> T {
        self.end().clone() - self.start()
    }

    pub fn context(&self) -> T::Context {
        self.alphas[0].context()
    }

    /// Slope of segment `k`, between breakpoints `k` and `k + 1`.
    pub fn slope(&self, k: usize) -> T {
        (self.values[k + 1].clone() - &self.values[k]) / (self.alphas[k + 1].clone() - &self.alphas[k])
    }

    fn contains(&self, alpha: &T) -> bool {
        *alpha >= *self.start() && *alpha <= *self.end()
    }

    /// Segment `k` with `α_k <= α <= α_{k+1}`.
    fn segment_of(&self, alpha: &T) -> usize {
        let k = self.alphas.partition_point(|a| a <= alpha);
        k.clamp(1, self.alphas.len() - 1) - 1
    }

    fn eval_in(&self, k: usize, alpha: &T) -> T {
        if *alpha == self.alphas[k] {
            return self.values[k].clone();
        }
        if *alpha == self.alphas[k + 1] {
            return self.values[k + 1].clone();
        }
        let t = (alpha.clone() - &self.alphas[k]) / (self.alphas[k + 1].clone() - &self.alphas[k]);
        self.values[k].clone() + (self.values[k + 1].clone() - &self.values[k]) * t
    }

    /// Value at `α` by linear interpolation.
    pub fn eval(&self, alpha: &T) -> Result<T, ContinuumError> {
        if !self.contains(alpha) {
            return Err(ContinuumError::OutsideDomain);
        }
        Ok(self.eval_in(self.segment_of(alpha), alpha))
    }

    /// Integral from the domain start to `α` (which must lie in the domain).
    fn integral_to(&self, alpha: &T) -> T {
        let k = self.segment_of(alpha);
        let x = self.eval_in(k, alpha);
        let piece = (alpha.clone() - &self.alphas[k]) * (self.values[k].clone() + x);
        self.cum[k].clone() + piece.half()
    }

    /// Integral over `[a, b]`.
    pub fn integral(&self, a: &T, b: &T) -> Result<T, ContinuumError> {
        if !self.contains(a) || !self.contains(b) {
            return Err(ContinuumError::OutsideDomain);
        }
        Ok(self.integral_to(b) - self.integral_to(a))
    }

    /// Mean value over the whole domain.
    pub fn mean(&self) -> T {
        self.cum[self.cum.len() - 1].clone() / self.domain_length()
    }

    /// `inf{β : x(β) >= y}`, or `None` when `y` exceeds every value.
    pub fn preimage_inf(&self, y: &T) -> Option<T> {
        if *y <= self.values[0] {
            return Some(self.start().clone());
        }
        let k = self.values.partition_point(|v| v < y);
        if k == self.values.len() {
            return None;
        }
        if self.values[k] == *y {
            return Some(self.alphas[k].clone());
        }
        Some(self.solve_in(k - 1, y))
    }

    /// `sup{β : x(β) <= y}`, or `None` when `y` is below every value.
    pub fn preimage_sup(&self, y: &T) -> Option<T> {
        if *y >= *self.last_value() {
            return Some(self.end().clone());
        }
        let k = self.values.partition_point(|v| v <= y);
        if k == 0 {
            return None;
        }
        let k = k - 1;
        if self.values[k] == *y {
            return Some(self.alphas[k].clone());
        }
        Some(self.solve_in(k, y))
    }

    /// The `β` in segment `k` with `x(β) = y`, for `x_k < y < x_{k+1}`.
    fn solve_in(&self, k: usize, y: &T) -> T {
        let (a0, a1) = (&self.alphas[k], &self.alphas[k + 1]);
        let (v0, v1) = (&self.values[k], &self.values[k + 1]);
        let beta = a0.clone() + (y.clone() - v0) * (a1.clone() - a0) / (v1.clone() - v0);
        beta.max_of(a0.clone()).min_of(a1.clone())
    }

    /// `x(end) - x(start)`.
    pub fn range(&self) -> T {
        self.last_value().clone() - self.first_value()
    }
}

/// Endpoints and length of an agent's confidence neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct NbhdBounds<T> {
    pub u: T,
    pub v: T,
    pub w: T,
}

pub fn eval<T: Real>(profile: &Profile<T>, alpha: &T) -> Result<T, ContinuumError> {
    profile.eval(alpha)
}

/// Neighbourhood `[u, v]` of agent `α`: the extreme abscissae whose opinions
/// lie within one of `x(α)`, clamped to the domain.
pub fn bounds_uvw<T: Real>(profile: &Profile<T>, alpha: &T) -> Result<NbhdBounds<T>, ContinuumError> {
    let x = profile.eval(alpha)?;
    Ok(bounds_at(profile, alpha, &x))
}

fn bounds_at<T: Real>(profile: &Profile<T>, alpha: &T, x: &T) -> NbhdBounds<T> {
    let one = x.lit(1, 1);
    // x - 1 <= x(α) <= x(end) and x + 1 >= x(start), so both preimages exist
    let u = profile.preimage_inf(&(x.clone() - &one)).expect("preimage below an attained value").min_of(alpha.clone());
    let v = profile.preimage_sup(&(x.clone() + &one)).expect("preimage above an attained value").max_of(alpha.clone());
    let w = v.clone() - &u;
    NbhdBounds { u, v, w }
}

/// The updated opinion of agent `α`: the mean of the profile over its
/// neighbourhood.
pub fn update_at<T: Real>(profile: &Profile<T>, alpha: &T) -> Result<T, ContinuumError> {
    let x = profile.eval(alpha)?;
    Ok(update_from(profile, alpha, &x))
}

fn update_from<T: Real>(profile: &Profile<T>, alpha: &T, x: &T) -> T {
    let b = bounds_at(profile, alpha, x);
    (profile.integral_to(&b.v) - profile.integral_to(&b.u)) / b.w
}

/// `x(end) - x(start)`.
pub fn profile_range<T: Real>(profile: &Profile<T>) -> T {
    profile.range()
}

/// Minimum and maximum segment slope, or the first flat segment.
pub fn regularity_check<T: Real>(profile: &Profile<T>) -> Result<(T, T), ContinuumError> {
    let mut lo: Option<T> = None;
    let mut hi: Option<T> = None;
    for k in 0..profile.len() - 1 {
        let s = profile.slope(k);
        if s.is_zero() {
            return Err(ContinuumError::FlatSegment(k));
        }
        lo = Some(match lo {
            Some(m) => m.min_of(s.clone()),
            None => s.clone(),
        });
        hi = Some(match hi {
            Some(m) => m.max_of(s),
            None => s,
        });
    }
    Ok((lo.expect("at least one segment"), hi.expect("at least one segment")))
}

/// Opinion levels at which the update changes formula: where a
/// neighbourhood endpoint leaves the domain boundary, and where it crosses a
/// breakpoint.
fn event_levels<T: Real>(profile: &Profile<T>) -> Vec<T> {
    let one = profile.first_value().lit(1, 1);
    let lo = profile.first_value();
    let hi = profile.last_value();
    let mut levels = Vec::with_capacity(2 * profile.len() + 2);
    levels.push(lo.clone() + &one);
    levels.push(hi.clone() - &one);
    for y in profile.values() {
        levels.push(y.clone() + &one);
        levels.push(y.clone() - &one);
    }
    levels.retain(|y| y >= lo && y <= hi);
    levels
}

/// Abscissae where the update may fail to be smooth, sorted and deduplicated.
pub fn event_abscissae<T: Real>(profile: &Profile<T>) -> Vec<T> {
    let mut out = Vec::new();
    for y in event_levels(profile) {
        out.extend(profile.preimage_inf(&y));
        out.extend(profile.preimage_sup(&y));
    }
    sort_dedup(&mut out);
    out
}

fn sort_dedup<T: Real>(xs: &mut Vec<T>) {
    xs.sort_by(|a, b| a.cmp_total(b));
    xs.dedup();
}

/// Derivative of the updated profile at `α` from the slopes of the current
/// profile at `α` and at the neighbourhood endpoints. `x_next` must be
/// [`update_at`]`(profile, α)`.
pub fn derivative_next<T: Real>(profile: &Profile<T>, alpha: &T, x_next: &T) -> Result<T, ContinuumError> {
    if !profile.contains(alpha) {
        return Err(ContinuumError::OutsideDomain);
    }
    let interior_segment = |beta: &T| -> Result<usize, ContinuumError> {
        let k = profile.segment_of(beta);
        if *beta == profile.alphas[k] || *beta == profile.alphas[k + 1] {
            Err(ContinuumError::Kink)
        } else {
            Ok(k)
        }
    };
    let k = interior_segment(alpha)?;
    let x = profile.eval_in(k, alpha);
    let one = x.lit(1, 1);
    if x == profile.first_value().clone() + &one || x == profile.last_value().clone() - &one {
        return Err(ContinuumError::Kink);
    }
    let slope = profile.slope(k);
    let b = bounds_at(profile, alpha, &x);
    let zero = x.zero_like();
    let du = if x > profile.first_value().clone() + &one {
        slope.clone() / profile.slope(interior_segment(&b.u)?)
    } else {
        zero.clone()
    };
    let dv =
        if x < profile.last_value().clone() - &one { slope / profile.slope(interior_segment(&b.v)?) } else { zero };
    let left = du * (one.clone() + x_next - &x);
    let right = dv * (one + &x - x_next);
    Ok((left + right) / b.w)
}

pub const DEFAULT_BUDGET: usize = 1_000_000;

/// Controls for [`continuum_step_with`].
#[derive(Debug, Clone)]
pub struct StepOptions<T> {
    /// Sup-norm tolerance between the returned profile and the exact update.
    pub tol: T,
    /// Maximum number of breakpoints.
    pub budget: usize,
    /// Drop breakpoints the interpolant does not need (the tolerance is
    /// split evenly between refinement and coarsening).
    pub coarsen: bool,
    /// Abscissae that are always kept as breakpoints.
    pub pinned: Vec<T>,
    /// Compute the update only on this sub-interval of the domain.
    pub span: Option<(T, T)>,
}

impl<T: Real> StepOptions<T> {
    pub fn new(tol: T) -> Self {
        Self { tol, budget: DEFAULT_BUDGET, coarsen: true, pinned: Vec::new(), span: None }
    }
}

/// Per-step tolerance by backend: `1e-12 * range` for doubles,
/// `2^(-P/2) * range` for `P`-bit floats and `2^-40 * range` for rationals.
pub fn default_tolerance<T: Real>(profile: &Profile<T>) -> T {
    let ctx = profile.context();
    let scale = match T::BACKEND {
        Backend::Double => T::from_f64(1e-12, &ctx),
        Backend::BigFloat => half_precision_unit::<T>(&ctx),
        Backend::Exact => power_of_two(-40, &ctx),
    };
    profile.range() * scale
}

/// One update of the whole profile with default options.
pub fn continuum_step<T: Real>(profile: &Profile<T>, tol: &T) -> Result<Profile<T>, ContinuumError> {
    continuum_step_with(profile, &StepOptions::new(tol.clone()))
}

/// One update of the profile, approximated by a piecewise-linear function
/// whose breakpoint values are the updated opinions themselves.
pub fn continuum_step_with<T: Real>(profile: &Profile<T>, opts: &StepOptions<T>) -> Result<Profile<T>, ContinuumError> {
    let zero = profile.start().zero_like();
    if opts.tol <= zero {
        return Err(ContinuumError::NonPositiveTolerance);
    }
    let (lo, hi) = match &opts.span {
        Some((a, b)) => {
            if !profile.contains(a) || !profile.contains(b) || b <= a {
                return Err(ContinuumError::OutsideDomain);
            }
            (a.clone(), b.clone())
        }
        None => (profile.start().clone(), profile.end().clone()),
    };
    let one = zero.lit(1, 1);
    if profile.range() <= one {
        // everyone sees everyone
        return Ok(Profile::from_parts(vec![lo, hi], vec![profile.mean(), profile.mean()]));
    }

    let inside = |a: &T| *a >= lo && *a <= hi;
    let mut nodes: Vec<T> = profile.breakpoints().iter().filter(|a| inside(a)).cloned().collect();
    nodes.extend(event_abscissae(profile).into_iter().filter(|a| inside(a)));
    nodes.extend(opts.pinned.iter().filter(|a| inside(a)).cloned());
    nodes.push(lo.clone());
    nodes.push(hi.clone());
    sort_dedup(&mut nodes);
    if nodes.len() > opts.budget {
        return Err(ContinuumError::RefinementOverflow(opts.budget));
    }
    let vals: Vec<T> = nodes.iter().map(|a| update_at_unchecked(profile, a)).collect();

    let threshold = if opts.coarsen { opts.tol.half() } else { opts.tol.clone() };
    let (mut alphas, mut values) = refine(profile, &nodes, &vals, &threshold, opts.budget)?;

    // the exact update is monotone; repair rounding-level inversions
    for i in 1..values.len() {
        if values[i] < values[i - 1] {
            values[i] = values[i - 1].clone();
        }
    }

    if opts.coarsen {
        let mut keep = vec![false; alphas.len()];
        let mut pins = opts.pinned.clone();
        sort_dedup(&mut pins);
        let mut p = 0;
        for (i, a) in alphas.iter().enumerate() {
            while p < pins.len() && pins[p] < *a {
                p += 1;
            }
            keep[i] = p < pins.len() && pins[p] == *a;
        }
        let (a2, v2) = coarsen(&alphas, &values, &keep, &opts.tol.half());
        alphas = a2;
        values = v2;
    }
    Ok(Profile::from_parts(alphas, values))
}

pub(crate) fn update_at_unchecked<T: Real>(profile: &Profile<T>, alpha: &T) -> T {
    let x = profile.eval_in(profile.segment_of(alpha), alpha);
    update_from(profile, alpha, &x)
}

/// Bisects every interval whose midpoint value is further than `threshold`
/// from the chord.
fn refine<T: Real>(
    profile: &Profile<T>,
    nodes: &[T],
    vals: &[T],
    threshold: &T,
    budget: usize,
) -> Result<(Vec<T>, Vec<T>), ContinuumError> {
    let mut alphas = Vec::with_capacity(nodes.len());
    let mut values = Vec::with_capacity(nodes.len());
    let mut stack: Vec<(T, T, T, T)> = Vec::new();
    for i in 0..nodes.len() - 1 {
        stack.push((nodes[i].clone(), vals[i].clone(), nodes[i + 1].clone(), vals[i + 1].clone()));
        while let Some((a, fa, b, fb)) = stack.pop() {
            if alphas.len() + stack.len() + 2 > budget {
                return Err(ContinuumError::RefinementOverflow(budget));
            }
            let mid = (a.clone() + &b).half();
            if mid > a && mid < b {
                let fm = update_at_unchecked(profile, &mid);
                let chord = (fa.clone() + &fb).half();
                if (fm.clone() - chord).abs() > *threshold {
                    stack.push((mid.clone(), fm.clone(), b, fb));
                    stack.push((a, fa, mid, fm));
                    continue;
                }
            }
            alphas.push(a);
            values.push(fa);
        }
    }
    alphas.push(nodes[nodes.len() - 1].clone());
    values.push(vals[vals.len() - 1].clone());
    Ok((alphas, values))
}

/// Greedy removal of breakpoints: from each kept breakpoint, extend the
/// chord as far as every skipped breakpoint stays within `h` of it. The
/// admissible chord slopes form a cone that only narrows, so one pass
/// suffices. Endpoints and flagged breakpoints are always kept.
fn coarsen<T: Real>(alphas: &[T], values: &[T], keep: &[bool], h: &T) -> (Vec<T>, Vec<T>) {
    let n = alphas.len();
    let mut out_a = vec![alphas[0].clone()];
    let mut out_v = vec![values[0].clone()];
    let mut anchor = 0usize;
    let mut cone: Option<(T, T)> = None;
    let mut k = 1usize;
    while k < n {
        let da = alphas[k].clone() - &alphas[anchor];
        let dv = values[k].clone() - &values[anchor];
        let slope = dv.clone() / &da;
        let reachable = match &cone {
            Some((lo, hi)) => slope >= *lo && slope <= *hi,
            None => true,
        };
        if !reachable {
            // k - 1 was reachable; it becomes the next anchor
            anchor = k - 1;
            out_a.push(alphas[anchor].clone());
            out_v.push(values[anchor].clone());
            cone = None;
            continue;
        }
        if k == n - 1 || keep[k] {
            anchor = k;
            out_a.push(alphas[k].clone());
            out_v.push(values[k].clone());
            cone = None;
            k += 1;
            continue;
        }
        let lo = (dv.clone() - h) / &da;
        let hi = (dv + h) / &da;
        cone = Some(match cone {
            Some((l, u)) => (l.max_of(lo), u.min_of(hi)),
            None => (lo, hi),
        });
        k += 1;
    }
    (out_a, out_v)
}

/// Agents at the midpoints of `n` equal cells of the domain, as a discrete
/// configuration.
pub fn sample_agents<T: Real>(profile: &Profile<T>, n: usize) -> Result<OpinionConfig<T>, ContinuumError> {
    if n == 0 {
        return Err(ContinuumError::NoAgents);
    }
    let ctx = profile.context();
    let len = profile.domain_length();
    let denom = T::from_int(2 * n as i64, &ctx);
    let opinions = (0..n)
        .map(|i| {
            let alpha = profile.start().clone() + len.clone() * T::from_int(2 * i as i64 + 1, &ctx) / &denom;
            update_free_eval(profile, &alpha)
        })
        .collect();
    Ok(OpinionConfig::new(opinions).expect("monotone profile gives sorted samples"))
}

fn update_free_eval<T: Real>(profile: &Profile<T>, alpha: &T) -> T {
    let a = alpha.clone().max_of(profile.start().clone()).min_of(profile.end().clone());
    profile.eval_in(profile.segment_of(&a), &a)
}
