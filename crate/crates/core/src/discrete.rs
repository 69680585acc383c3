//! Finitely many agents with confidence bound one.
//!
//! Opinions are kept sorted, so every agent's confidence neighbourhood is a
//! contiguous index window. [`hk_step`] finds all windows with two pointers
//! and averages them from exact prefix sums, O(N) per step plus the cost of
//! the arithmetic. [`hk_step_reference`] is the O(N²) double loop kept as an
//! oracle.

use alloc::vec;
use alloc::vec::Vec;

use num_rational::BigRational;
use num_traits::Zero;

use crate::numerics::{Backend, Real};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiscreteError {
    #[error("a configuration needs at least one agent")]
    Empty,
    #[error("opinions must be nondecreasing (violated at index {0})")]
    NotSorted(usize),
    #[error("agent index {index} out of range for {len} agents")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Nondecreasing opinions of `N >= 1` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionConfig<T> {
    opinions: Vec<T>,
}

impl<T: Real> OpinionConfig<T> {
    pub fn new(opinions: Vec<T>) -> Result<Self, DiscreteError> {
        if opinions.is_empty() {
            return Err(DiscreteError::Empty);
        }
        if let Some(i) = opinions.windows(2).position(|w| w[1] < w[0]) {
            return Err(DiscreteError::NotSorted(i + 1));
        }
        Ok(Self { opinions })
    }

    /// Sorts the opinions first.
    pub fn from_unsorted(mut opinions: Vec<T>) -> Result<Self, DiscreteError> {
        opinions.sort_by(|a, b| a.cmp_total(b));
        Self::new(opinions)
    }

    pub fn opinions(&self) -> &[T] {
        &self.opinions
    }

    pub fn into_opinions(self) -> Vec<T> {
        self.opinions
    }

    pub fn len(&self) -> usize {
        self.opinions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &T {
        &self.opinions[0]
    }

    pub fn last(&self) -> &T {
        &self.opinions[self.opinions.len() - 1]
    }

    /// `x(N) - x(1)`.
    pub fn range(&self) -> T {
        self.last().clone() - self.first()
    }

    pub fn context(&self) -> T::Context {
        self.opinions[0].context()
    }
}

/// Whether `a` and `b` see each other. Computed as `|b - a| <= 1` in the
/// backend's own arithmetic; for sorted opinions the predicate is monotone in
/// the partner's index, which is what makes neighbourhoods contiguous.
#[inline]
pub fn within_confidence<T: Real>(a: &T, b: &T, one: &T) -> bool {
    (b.clone() - a).abs() <= *one
}

/// Closed index range `[lo, hi]` of agents within distance one of agent `i`.
pub fn neighborhood_window<T: Real>(config: &OpinionConfig<T>, i: usize) -> Result<(usize, usize), DiscreteError> {
    let x = config.opinions();
    if i >= x.len() {
        return Err(DiscreteError::IndexOutOfRange { index: i, len: x.len() });
    }
    let one = x[i].lit(1, 1);
    let lo = x[..i].partition_point(|y| !within_confidence(y, &x[i], &one));
    let hi = i + x[i..].partition_point(|y| within_confidence(&x[i], y, &one)) - 1;
    Ok((lo, hi))
}

/// All neighbourhood windows, found with two monotone pointers.
pub fn windows<T: Real>(config: &OpinionConfig<T>) -> Vec<(usize, usize)> {
    let x = config.opinions();
    let n = x.len();
    let one = x[0].lit(1, 1);
    let mut out = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        while !within_confidence(&x[lo], &x[i], &one) {
            lo += 1;
        }
        if hi < i {
            hi = i;
        }
        while hi + 1 < n && within_confidence(&x[i], &x[hi + 1], &one) {
            hi += 1;
        }
        out.push((lo, hi));
    }
    out
}

/// One synchronous update: every agent moves to the mean of its window.
pub fn hk_step<T: Real>(config: &OpinionConfig<T>) -> OpinionConfig<T> {
    let next = T::window_means(config.opinions(), &windows(config));
    assert!(next.windows(2).all(|w| w[0] <= w[1]), "update broke the opinion order");
    OpinionConfig { opinions: next }
}

/// Quadratic reference update: scans all pairs and averages each
/// neighbourhood in exact rational arithmetic before rounding to the backend.
pub fn hk_step_reference<T: Real>(config: &OpinionConfig<T>) -> OpinionConfig<T> {
    let x = config.opinions();
    let one = x[0].lit(1, 1);
    let ctx = config.context();
    let next = x
        .iter()
        .map(|xi| {
            let mut sum = BigRational::zero();
            let mut count = 0i64;
            for xj in x {
                if within_confidence(xi, xj, &one) {
                    sum += xj.to_rational();
                    count += 1;
                }
            }
            T::from_rational(&(sum / BigRational::from_integer(count.into())), &ctx)
        })
        .collect();
    OpinionConfig { opinions: next }
}

/// Distinct opinions are more than one apart (strict).
pub fn is_equilibrium<T: Real>(config: &OpinionConfig<T>) -> bool {
    let one = config.first().lit(1, 1);
    config.opinions().windows(2).all(|w| w[0] == w[1] || !within_confidence(&w[0], &w[1], &one))
}

/// A cluster centre and the number of agents in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T> {
    pub center: T,
    pub weight: usize,
}

/// Clusters with strictly increasing centres.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet<T> {
    pub clusters: Vec<Cluster<T>>,
}

impl<T> ClusterSet<T> {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_weight(&self) -> usize {
        self.clusters.iter().map(|c| c.weight).sum()
    }

    pub fn is_consensus(&self) -> bool {
        self.clusters.len() == 1
    }
}

/// Groups agents whose consecutive opinions differ by at most `merge_tol`;
/// each centre is the group mean.
pub fn extract_clusters<T: Real>(config: &OpinionConfig<T>, merge_tol: &T) -> ClusterSet<T> {
    let x = config.opinions();
    let mut bounds = vec![0usize];
    for i in 1..x.len() {
        if x[i].clone() - &x[i - 1] > *merge_tol {
            bounds.push(i);
        }
    }
    bounds.push(x.len());
    let groups: Vec<(usize, usize)> = bounds.windows(2).map(|w| (w[0], w[1] - 1)).collect();
    let centers = T::window_means(x, &groups);
    let clusters =
        groups.iter().zip(centers).map(|(&(lo, hi), center)| Cluster { center, weight: hi - lo + 1 }).collect();
    ClusterSet { clusters }
}

/// Default grouping tolerance: zero in exact mode, `1e-9 * range` otherwise.
pub fn default_merge_tol<T: Real>(config: &OpinionConfig<T>) -> T {
    let ctx = config.context();
    if T::BACKEND == Backend::Exact {
        return T::from_int(0, &ctx);
    }
    config.range() * T::from_f64(1e-9, &ctx)
}

/// Tolerance for the floating-point stop rule: `1e6 * eps * max|x|`.
pub fn equilibrium_merge_tol<T: Real>(config: &OpinionConfig<T>) -> T {
    let ctx = config.context();
    let scale = config.first().abs().max_of(config.last().abs());
    T::machine_epsilon(&ctx) * T::from_int(1_000_000, &ctx) * scale
}

/// Every pair of clusters satisfies `|b - a| >= 1 + min(w) / max(w)`.
pub fn is_stable<T: Real>(clusters: &ClusterSet<T>) -> bool {
    let cs = &clusters.clusters;
    for (i, a) in cs.iter().enumerate() {
        for b in &cs[i + 1..] {
            let (lo, hi) = if a.weight <= b.weight { (a.weight, b.weight) } else { (b.weight, a.weight) };
            let one = a.center.lit(1, 1);
            let gap = (b.center.clone() - &a.center).abs() - one;
            // gap >= lo / hi, cross-multiplied to stay exact
            let lhs = gap * a.center.lit(hi as i64, 1);
            if lhs < a.center.lit(lo as i64, 1) {
                return false;
            }
        }
    }
    true
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Distinct opinions are pointwise more than one apart.
    Equilibrium,
    /// Floating-point stop rule: cluster centres are more than one apart.
    ClusteredEquilibrium,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult<T> {
    pub final_config: OpinionConfig<T>,
    pub steps: usize,
    /// States at `t = 0, 1, …, steps` when requested.
    pub trajectory: Option<Vec<OpinionConfig<T>>>,
    pub reached_equilibrium: bool,
    pub stop: StopReason,
}

pub fn default_max_steps(n: usize) -> usize {
    10 * n + 100
}

/// Floating-point stop rule: group with [`equilibrium_merge_tol`], then
/// require the centres to be more than one apart.
pub fn is_clustered_equilibrium<T: Real>(config: &OpinionConfig<T>) -> bool {
    let clusters = extract_clusters(config, &equilibrium_merge_tol(config));
    let one = config.first().lit(1, 1);
    clusters.clusters.windows(2).all(|w| !within_confidence(&w[0].center, &w[1].center, &one))
}

/// Iterates [`hk_step`] until equilibrium or `max_steps` updates.
///
/// In floating modes the clustered stop rule also ends the run. When it
/// fires, one more update is applied if the step budget allows: agents of a
/// well separated cluster share one window and therefore land on one value.
pub fn run_to_equilibrium<T: Real>(config: OpinionConfig<T>, max_steps: usize, keep_trajectory: bool) -> RunResult<T> {
    let floating = T::BACKEND != Backend::Exact;
    let mut trajectory = keep_trajectory.then(|| vec![config.clone()]);
    let mut current = config;
    let mut steps = 0usize;
    let stop = loop {
        if is_equilibrium(&current) {
            break StopReason::Equilibrium;
        }
        if floating && is_clustered_equilibrium(&current) {
            if steps < max_steps {
                current = hk_step(&current);
                steps += 1;
                if let Some(t) = trajectory.as_mut() {
                    t.push(current.clone());
                }
            }
            break StopReason::ClusteredEquilibrium;
        }
        if steps >= max_steps {
            break StopReason::StepLimit;
        }
        current = hk_step(&current);
        steps += 1;
        if let Some(t) = trajectory.as_mut() {
            t.push(current.clone());
        }
    };
    RunResult { final_config: current, steps, trajectory, reached_equilibrium: stop != StopReason::StepLimit, stop }
}

/// The equally spaced state `(1, 2, …, N)`.
pub fn make_equidistant<T: Real>(n: usize, ctx: &T::Context) -> Result<OpinionConfig<T>, DiscreteError> {
    if n == 0 {
        return Err(DiscreteError::Empty);
    }
    Ok(OpinionConfig { opinions: (1..=n as i64).map(|i| T::from_int(i, ctx)).collect() })
}

/// Edges `(i, j)`, `i < j`, of the receptivity graph.
pub fn receptivity_edges<T: Real>(config: &OpinionConfig<T>) -> Vec<(usize, usize)> {
    windows(config).into_iter().enumerate().flat_map(|(i, (_, hi))| (i + 1..=hi).map(move |j| (i, j))).collect()
}

/// Number of receptivity edges without listing them.
pub fn receptivity_edge_count<T: Real>(config: &OpinionConfig<T>) -> usize {
    windows(config).into_iter().enumerate().map(|(i, (_, hi))| hi - i).sum()
}

/// Connected components of the receptivity graph as index ranges. Because
/// opinions are sorted, components break exactly at gaps wider than one.
pub fn receptivity_components<T: Real>(config: &OpinionConfig<T>) -> Vec<(usize, usize)> {
    let x = config.opinions();
    let one = x[0].lit(1, 1);
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..x.len() {
        if !within_confidence(&x[i - 1], &x[i], &one) {
            out.push((start, i - 1));
            start = i;
        }
    }
    out.push((start, x.len() - 1));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n.into(), d.into())
    }

    fn qs(xs: &[i64]) -> OpinionConfig<Q> {
        OpinionConfig::new(xs.iter().map(|&v| q(v, 1)).collect()).unwrap()
    }

    fn uneven() -> OpinionConfig<Q> {
        let mut xs = vec![q(-1, 1); 98];
        xs.push(q(0, 1));
        xs.push(q(1, 1));
        OpinionConfig::new(xs).unwrap()
    }

    #[test]
    fn config_validation() {
        assert_eq!(OpinionConfig::<f64>::new(vec![]), Err(DiscreteError::Empty));
        assert_eq!(OpinionConfig::new(vec![1.0, 0.5]), Err(DiscreteError::NotSorted(1)));
        let c = OpinionConfig::from_unsorted(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(c.opinions(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn windows_examples() {
        let e6 = make_equidistant::<Q>(6, &()).unwrap();
        assert_eq!(neighborhood_window(&e6, 2).unwrap(), (1, 3));
        let constant = OpinionConfig::new(vec![2.5f64; 5]).unwrap();
        assert_eq!(neighborhood_window(&constant, 3).unwrap(), (0, 4));
        let c = OpinionConfig::new(vec![0.0, 1.0, 2.5]).unwrap();
        assert_eq!(neighborhood_window(&c, 0).unwrap(), (0, 1));
        assert_eq!(neighborhood_window(&c, 3), Err(DiscreteError::IndexOutOfRange { index: 3, len: 3 }));
        let all: Vec<_> = (0..6).map(|i| neighborhood_window(&e6, i).unwrap()).collect();
        assert_eq!(windows(&e6), all);
    }

    #[test]
    fn step_examples() {
        let next = hk_step(&qs(&[1, 2, 3]));
        assert_eq!(next.opinions(), &[q(3, 2), q(2, 1), q(5, 2)]);

        let next = hk_step(&uneven());
        let x = next.opinions();
        assert!(x[..98].iter().all(|v| *v == q(-98, 99)));
        assert_eq!(x[98], q(-97, 100));
        assert_eq!(x[99], q(1, 2));

        let eq = qs(&[0, 0, 3, 5]);
        assert_eq!(hk_step(&eq), eq);
    }

    #[test]
    fn step_matches_reference() {
        let cfgs = [qs(&[1, 2, 3, 4, 5, 6]), uneven(), qs(&[0, 0, 1, 2, 2, 3, 7])];
        for c in cfgs {
            assert_eq!(hk_step(&c), hk_step_reference(&c));
        }
        let f = OpinionConfig::new(vec![0.1, 0.35, 1.1, 1.35, 2.0, 2.9]).unwrap();
        assert_eq!(hk_step(&f), hk_step_reference(&f));
    }

    #[test]
    fn equilibrium_examples() {
        assert!(is_equilibrium(&OpinionConfig::new(vec![0.0, 1.5]).unwrap()));
        assert!(!is_equilibrium(&OpinionConfig::new(vec![0.0, 1.0]).unwrap()));
        assert!(is_equilibrium(&OpinionConfig::new(vec![4.0; 7]).unwrap()));
    }

    #[test]
    fn cluster_examples() {
        let c = extract_clusters(&qs(&[2, 2, 2, 5, 5]), &q(0, 1));
        assert_eq!(c.clusters, vec![Cluster { center: q(2, 1), weight: 3 }, Cluster { center: q(5, 1), weight: 2 }]);
        let c = extract_clusters(&qs(&[7, 7, 7, 7]), &q(0, 1));
        assert_eq!(c.len(), 1);
        assert_eq!(c.total_weight(), 4);
    }

    #[test]
    fn stability_examples() {
        let set = |v: &[(Q, usize)]| ClusterSet {
            clusters: v.iter().map(|(c, w)| Cluster { center: c.clone(), weight: *w }).collect(),
        };
        assert!(is_stable(&set(&[(q(0, 1), 3), (q(2, 1), 3)])));
        assert!(!is_stable(&set(&[(q(4613, 1728), 3), (q(7483, 1728), 3)])));
        assert!(is_stable(&set(&[(q(0, 1), 1), (q(3, 2), 3)])));
        // the gap requirement is inclusive
        assert!(is_stable(&set(&[(q(0, 1), 1), (q(4, 3), 3)])));
    }

    #[test]
    fn run_examples() {
        let r = run_to_equilibrium(qs(&[1, 2]), 10, false);
        assert_eq!(r.steps, 1);
        assert_eq!(r.final_config.opinions(), &[q(3, 2), q(3, 2)]);
        assert!(r.reached_equilibrium);

        let r = run_to_equilibrium(make_equidistant::<Q>(6, &()).unwrap(), 100, true);
        let clusters = extract_clusters(&r.final_config, &q(0, 1));
        assert_eq!(
            clusters.clusters,
            vec![Cluster { center: q(4613, 1728), weight: 3 }, Cluster { center: q(7483, 1728), weight: 3 }]
        );
        assert_eq!(r.trajectory.unwrap().len(), r.steps + 1);

        let r = run_to_equilibrium(qs(&[0, 5]), 10, false);
        assert_eq!(r.steps, 0);
        assert_eq!(r.stop, StopReason::Equilibrium);

        let r = run_to_equilibrium(make_equidistant::<Q>(6, &()).unwrap(), 2, false);
        assert!(!r.reached_equilibrium);
        assert_eq!(r.stop, StopReason::StepLimit);
        assert_eq!(r.steps, 2);
    }

    #[test]
    fn equidistant() {
        assert_eq!(make_equidistant::<Q>(1, &()).unwrap().opinions(), &[q(1, 1)]);
        assert_eq!(make_equidistant::<f64>(3, &()).unwrap().opinions(), &[1.0, 2.0, 3.0]);
        assert_eq!(make_equidistant::<Q>(6, &()).unwrap(), qs(&[1, 2, 3, 4, 5, 6]));
        assert_eq!(make_equidistant::<f64>(0, &()), Err(DiscreteError::Empty));
    }

    #[test]
    fn receptivity_examples() {
        let c = OpinionConfig::new(vec![0.0, 0.5, 2.0]).unwrap();
        assert_eq!(receptivity_edges(&c), vec![(0, 1)]);
        assert_eq!(receptivity_components(&c), vec![(0, 1), (2, 2)]);
        let c = OpinionConfig::new(vec![1.0; 4]).unwrap();
        assert_eq!(receptivity_edges(&c).len(), 6);
        let e6 = make_equidistant::<Q>(6, &()).unwrap();
        assert_eq!(receptivity_edges(&e6), (0..5).map(|i| (i, i + 1)).collect::<Vec<_>>());
        assert_eq!(receptivity_edge_count(&e6), 5);
        assert_eq!(receptivity_components(&e6), vec![(0, 5)]);
    }

    #[test]
    fn floating_run_snaps_clusters() {
        // two groups far apart with tiny internal spread
        let c = OpinionConfig::new(vec![0.0, 1e-13, 5.0, 5.0 + 2e-13]).unwrap();
        let r = run_to_equilibrium(c, 10, false);
        assert_eq!(r.stop, StopReason::ClusteredEquilibrium);
        assert!(is_equilibrium(&r.final_config));
        assert_eq!(r.steps, 1);
    }
}
