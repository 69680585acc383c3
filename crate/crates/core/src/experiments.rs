//! Seeded Monte Carlo estimates and scaling scans.
//!
//! Random stream: ChaCha8 with a 32-byte key holding the seed as a
//! little-endian `u64` in its first eight bytes (the rest zero), and the
//! stream number set to the trial index. Each uniform is
//! `(next_u64 >> 11) · 2^-53`, scaled by `L`. Every `L` of a sweep reuses the
//! same draws for a given trial, so trends over `L` compare like with like.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::continuum::{continuum_step, ContinuumError, Profile};
use crate::discrete::{
    default_max_steps, equilibrium_merge_tol, extract_clusters, is_stable, make_equidistant, run_to_equilibrium,
    ClusterSet, DiscreteError, OpinionConfig,
};
use crate::numerics::Real;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("at least one trial is required")]
    NoTrials,
    #[error("at least one agent is required")]
    NoAgents,
    #[error("interval lengths must be positive")]
    NonPositiveLength,
    #[error("equilibration scans need N >= 2, got {0}")]
    TooFewAgents(usize),
    #[error("spec kind {0:?} does not match the requested estimate")]
    WrongKind(ExperimentKind),
    #[error(transparent)]
    Discrete(#[from] DiscreteError),
    #[error(transparent)]
    Continuum(#[from] ContinuumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ConsensusProb,
    StabilityProb,
    EqtimeScan,
    LinearCritical,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ConsensusProb => "consensus-prob",
            Self::StabilityProb => "stability-prob",
            Self::EqtimeScan => "eqtime",
            Self::LinearCritical => "linear-critical",
        }
    }
}

/// A Monte Carlo estimate over uniform initial opinions on `[0, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec<T> {
    pub kind: ExperimentKind,
    pub n: usize,
    pub ls: Vec<T>,
    pub trials: usize,
    pub seed: u64,
    /// Step limit per run.
    pub horizon: usize,
}

impl<T: Real> ExperimentSpec<T> {
    /// Spec with the default horizon for `n` agents.
    pub fn new(kind: ExperimentKind, n: usize, ls: Vec<T>, trials: usize, seed: u64) -> Self {
        Self { kind, n, ls, trials, seed, horizon: default_max_steps(n) }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(ExperimentError::NoTrials);
        }
        if self.n == 0 {
            return Err(ExperimentError::NoAgents);
        }
        if self.ls.iter().any(|l| *l <= l.zero_like()) {
            return Err(ExperimentError::NonPositiveLength);
        }
        Ok(())
    }
}

/// Success count at one `(L, N)` point with its Wilson interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult<T> {
    pub n: usize,
    pub l: T,
    pub trials: usize,
    pub successes: usize,
    /// Trials that hit the horizon; they count as failures.
    pub undecided: usize,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl<T> EstimateResult<T> {
    pub fn from_counts(n: usize, l: T, trials: usize, successes: usize, undecided: usize) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(successes, trials);
        Self { n, l, trials, successes, undecided, estimate: successes as f64 / trials as f64, ci_lo, ci_hi }
    }
}

/// Wilson score interval at 95% for `successes` out of `trials > 0`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    // Clamp so rounding never pushes the estimate outside its own interval.
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

/// The random stream of one trial.
pub fn trial_stream(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial);
    rng
}

/// Next uniform on `[0, 1)` with 53 random bits.
pub fn next_unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `n` sorted uniform draws on `[0, l]`.
pub fn sample_uniform<T: Real>(n: usize, l: &T, rng: &mut impl RngCore) -> Result<OpinionConfig<T>, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::NoAgents);
    }
    if *l <= l.zero_like() {
        return Err(ExperimentError::NonPositiveLength);
    }
    let ctx = l.context();
    let draws = (0..n).map(|_| T::from_f64(next_unit(rng), &ctx) * l).collect();
    Ok(OpinionConfig::from_unsorted(draws)?)
}

/// How one trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    pub consensus: bool,
    pub stable: bool,
    pub reached_equilibrium: bool,
    pub steps: usize,
}

/// Runs trial `trial` of `spec` at interval length `l`.
pub fn run_trial<T: Real>(spec: &ExperimentSpec<T>, l: &T, trial: usize) -> Result<TrialOutcome, ExperimentError> {
    let mut rng = trial_stream(spec.seed, trial as u64);
    let config = sample_uniform(spec.n, l, &mut rng)?;
    let run = run_to_equilibrium(config, spec.horizon, false);
    let clusters = final_clusters(&run.final_config);
    let reached = run.reached_equilibrium;
    Ok(TrialOutcome {
        consensus: reached && clusters.is_consensus(),
        stable: reached && is_stable(&clusters),
        reached_equilibrium: reached,
        steps: run.steps,
    })
}

/// Clusters of a terminal state under the stop rule's grouping tolerance.
pub fn final_clusters<T: Real>(config: &OpinionConfig<T>) -> ClusterSet<T> {
    extract_clusters(config, &equilibrium_merge_tol(config))
}

/// Folds trial outcomes into an estimate for `spec.kind`.
pub fn aggregate<T: Real>(
    spec: &ExperimentSpec<T>,
    l: T,
    outcomes: &[TrialOutcome],
) -> Result<EstimateResult<T>, ExperimentError> {
    let success: fn(&TrialOutcome) -> bool = match spec.kind {
        ExperimentKind::ConsensusProb => |o| o.consensus,
        ExperimentKind::StabilityProb => |o| o.stable,
        kind => return Err(ExperimentError::WrongKind(kind)),
    };
    let successes = outcomes.iter().filter(|o| success(o)).count();
    let undecided = outcomes.iter().filter(|o| !o.reached_equilibrium).count();
    Ok(EstimateResult::from_counts(spec.n, l, outcomes.len(), successes, undecided))
}

fn estimate_sequential<T: Real>(spec: &ExperimentSpec<T>) -> Result<Vec<EstimateResult<T>>, ExperimentError> {
    spec.validate()?;
    spec.ls
        .iter()
        .map(|l| {
            let outcomes = (0..spec.trials).map(|trial| run_trial(spec, l, trial)).collect::<Result<Vec<_>, _>>()?;
            aggregate(spec, l.clone(), &outcomes)
        })
        .collect()
}

/// Fraction of trials ending in a single cluster, for each `L`.
pub fn consensus_probability<T: Real>(spec: &ExperimentSpec<T>) -> Result<Vec<EstimateResult<T>>, ExperimentError> {
    if spec.kind != ExperimentKind::ConsensusProb {
        return Err(ExperimentError::WrongKind(spec.kind));
    }
    estimate_sequential(spec)
}

/// Fraction of trials ending in a stable equilibrium, for each `L`.
pub fn stability_probability<T: Real>(spec: &ExperimentSpec<T>) -> Result<Vec<EstimateResult<T>>, ExperimentError> {
    if spec.kind != ExperimentKind::StabilityProb {
        return Err(ExperimentError::WrongKind(spec.kind));
    }
    estimate_sequential(spec)
}

/// Equilibration time of the equally spaced state `(1, …, N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqTimeRow {
    pub n: usize,
    pub steps: usize,
    pub ratio: f64,
    pub reached_equilibrium: bool,
}

pub fn equilibration_time<T: Real>(n: usize, max_steps: usize, ctx: &T::Context) -> Result<EqTimeRow, ExperimentError> {
    if n < 2 {
        return Err(ExperimentError::TooFewAgents(n));
    }
    let run = run_to_equilibrium(make_equidistant::<T>(n, ctx)?, max_steps, false);
    Ok(EqTimeRow {
        n,
        steps: run.steps,
        ratio: run.steps as f64 / n as f64,
        reached_equilibrium: run.reached_equilibrium,
    })
}

/// [`equilibration_time`] for each `N`, with the default step limit.
pub fn equilibration_scan<T: Real>(ns: &[usize], ctx: &T::Context) -> Result<Vec<EqTimeRow>, ExperimentError> {
    ns.iter().map(|&n| equilibration_time::<T>(n, default_max_steps(n), ctx)).collect()
}

/// Outcome of evolving the linear profile `x(α) = Rα` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearVerdict<T> {
    /// The range fell to at most one, so the profile is constant at `step`.
    Consensus { step: usize },
    /// The range stayed above two for the whole horizon.
    Persistent { final_range: T },
    /// Neither happened within the horizon.
    Undecided { final_range: T },
}

/// Evolves `x(α) = Rα` for up to `horizon` steps at tolerance `tol`.
pub fn linear_verdict<T: Real>(range: &T, horizon: usize, tol: &T) -> Result<LinearVerdict<T>, ExperimentError> {
    let zero = range.zero_like();
    if *range <= zero {
        return Err(ExperimentError::NonPositiveLength);
    }
    let one = range.lit(1, 1);
    let two = range.lit(2, 1);
    let mut profile = Profile::linear(zero.clone(), one.clone(), zero, range.clone())?;
    let mut above_two = true;
    for t in 0..=horizon {
        let r = profile.range();
        if r <= one {
            return Ok(LinearVerdict::Consensus { step: t + 1 });
        }
        above_two &= r > two;
        if t == horizon {
            break;
        }
        profile = continuum_step(&profile, &(tol.clone() * &r))?;
    }
    let final_range = profile.range();
    Ok(if above_two { LinearVerdict::Persistent { final_range } } else { LinearVerdict::Undecided { final_range } })
}

/// [`linear_verdict`] for each range; `tol` is relative to the current range.
pub fn linear_critical_scan<T: Real>(
    ranges: &[T],
    horizon: usize,
    tol: &T,
) -> Result<Vec<LinearVerdict<T>>, ExperimentError> {
    ranges.iter().map(|r| linear_verdict(r, horizon, tol)).collect()
}
