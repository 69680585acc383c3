//! Thread-parallel versions of the experiment drivers.
//!
//! Trials run on the rayon pool and are collected in trial order, so the
//! output never depends on the number of threads or their schedule.

use hkdyn_core::discrete::default_max_steps;
use hkdyn_core::experiments::{
    aggregate, equilibration_time, linear_verdict, run_trial, EqTimeRow, EstimateResult, ExperimentError,
    ExperimentSpec, LinearVerdict,
};
use hkdyn_core::Real;
use rayon::prelude::*;

/// Consensus or stability estimate for every `L` of `spec`, per `spec.kind`.
pub fn estimate<T: Real>(spec: &ExperimentSpec<T>) -> Result<Vec<EstimateResult<T>>, ExperimentError> {
    spec.validate()?;
    spec.ls
        .iter()
        .map(|l| {
            let outcomes = (0..spec.trials)
                .into_par_iter()
                .map(|trial| run_trial(spec, l, trial))
                .collect::<Result<Vec<_>, _>>()?;
            aggregate(spec, l.clone(), &outcomes)
        })
        .collect()
}

pub fn equilibration_scan<T: Real>(ns: &[usize], ctx: &T::Context) -> Result<Vec<EqTimeRow>, ExperimentError> {
    ns.par_iter().map(|&n| equilibration_time::<T>(n, default_max_steps(n), ctx)).collect()
}

pub fn linear_critical_scan<T: Real>(
    ranges: &[T],
    horizon: usize,
    tol: &T,
) -> Result<Vec<LinearVerdict<T>>, ExperimentError> {
    ranges.par_iter().map(|r| linear_verdict(r, horizon, tol)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hkdyn_core::experiments::{consensus_probability, ExperimentKind};

    #[test]
    fn matches_sequential_driver() {
        let spec = ExperimentSpec::new(ExperimentKind::ConsensusProb, 60, vec![2.0f64, 4.0, 6.0], 12, 9);
        assert_eq!(estimate(&spec).unwrap(), consensus_probability(&spec).unwrap());
    }

    #[test]
    fn independent_of_thread_count() {
        let spec = ExperimentSpec::new(ExperimentKind::StabilityProb, 80, vec![5.0f64], 16, 3);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| estimate(&spec).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
