//! Acceptance criteria. Each criterion prints one PASS or FAIL line; run with
//! `cargo test --release --test acceptance -- --nocapture` to see them.

use std::panic::{self, AssertUnwindSafe};
use std::thread;
use std::time::{Duration, Instant};

use hkdyn::cli;
use hkdyn_core::continuum::{bounds_uvw, continuum_step, derivative_next, update_at, Profile};
use hkdyn_core::counterexample::{limit_mean_bound, run_counterexample, CounterexampleOptions, DoubleSParams};
use hkdyn_core::discrete::{
    extract_clusters, hk_step, hk_step_reference, make_equidistant, run_to_equilibrium, OpinionConfig,
};
use hkdyn_core::experiments::{
    consensus_probability, equilibration_scan, next_unit, stability_probability, trial_stream, ExperimentKind,
    ExperimentSpec,
};
use hkdyn_core::{BigFloat, Real};
use num_rational::BigRational;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Q = BigRational;
type Outcome = Result<String, String>;

fn q(s: &str) -> Q {
    s.parse().unwrap()
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e6_exact() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let traj = dir.path().join("trajectory.csv");
    let clusters = dir.path().join("clusters.json");
    let code = cli::run([
        "hkdyn",
        "discrete",
        "run",
        "--agents",
        "1,2,3,4,5,6",
        "--mode",
        "exact",
        "--trajectory",
        traj.to_str().unwrap(),
        "--clusters",
        clusters.to_str().unwrap(),
    ]);
    ensure(code == 0, format!("command exited with {code}"))?;
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&clusters).unwrap()).unwrap();
    let list = report["clusters"].as_array().ok_or("no cluster list")?;
    let got: Vec<(Q, u64)> =
        list.iter().map(|c| (q(c["center"].as_str().unwrap()), c["weight"].as_u64().unwrap())).collect();
    ensure(got == [(q("4613/1728"), 3), (q("7483/1728"), 3)], format!("clusters {got:?}"))?;
    let csv = std::fs::read_to_string(&traj).unwrap();
    let last: Vec<&str> = csv.lines().rev().take(6).collect();
    ensure(
        last[..3].iter().all(|l| l.ends_with(",7483/1728")) && last[3..].iter().all(|l| l.ends_with(",4613/1728")),
        "final trajectory rows lack the exact cluster values",
    )?;

    let run = run_to_equilibrium(make_equidistant::<Q>(6, &()).unwrap(), 100, false);
    let cs = extract_clusters(&run.final_config, &q("0"));
    ensure(run.reached_equilibrium, "no equilibrium")?;
    let centres: Vec<(Q, usize)> = cs.clusters.iter().map(|c| (c.center.clone(), c.weight)).collect();
    ensure(centres == [(q("4613/1728"), 3), (q("7483/1728"), 3)], format!("{centres:?}"))?;
    Ok(format!("two clusters of weight 3 at 4613/1728 and 7483/1728 after {} steps", run.steps))
}

fn uneven() -> Outcome {
    let mut xs = vec![q("-1"); 98];
    xs.push(q("0"));
    xs.push(q("1"));
    let config = OpinionConfig::new(xs).unwrap();
    let next = hk_step(&config);
    ensure(next.opinions()[99] == q("1/2"), format!("x_1(100) = {}", next.opinions()[99]))?;
    let run = run_to_equilibrium(config, 1000, false);
    ensure(run.reached_equilibrium, "no equilibrium")?;
    let cs = extract_clusters(&run.final_config, &q("0"));
    let lone = cs.clusters.iter().any(|c| c.center == q("1/2") && c.weight == 1);
    ensure(lone, format!("clusters {:?}", cs.clusters))?;
    Ok("x_1(100) = 1/2 and a weight-1 cluster at 1/2".into())
}

/// The exact update of `3α` on `[0, 1]`.
fn corner(a: f64) -> f64 {
    if a <= 1.0 / 3.0 {
        1.5 * a + 0.5
    } else if a <= 2.0 / 3.0 {
        3.0 * a
    } else {
        1.5 * a + 1.0
    }
}

fn corner_step() -> Outcome {
    let p = Profile::linear(q("0"), q("1"), q("0"), q("3")).unwrap();
    let next = continuum_step(&p, &q("1/1000000000000")).unwrap();
    ensure(
        next.breakpoints() == [q("0"), q("1/3"), q("2/3"), q("1")]
            && next.values() == [q("1/2"), q("1"), q("2"), q("5/2")],
        format!("exact step gave {:?} / {:?}", next.breakpoints(), next.values()),
    )?;
    // the branches 3α/2 + 1/2, 3α, 3α/2 + 1 at interior points of each piece
    for (a, v) in [("1/6", "3/4"), ("1/2", "3/2"), ("5/6", "9/4")] {
        ensure(next.eval(&q(a)).unwrap() == q(v), format!("x_1({a}) != {v}"))?;
    }

    let pf = Profile::linear(0.0, 1.0, 0.0, 3.0).unwrap();
    let nf = continuum_step(&pf, &1e-12).unwrap();
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let a = i as f64 / 999.0;
        worst = worst.max((nf.eval(&a).unwrap() - corner(a)).abs());
    }
    ensure(worst <= 1e-9, format!("double sup error {worst:e}"))?;
    Ok(format!("exact breakpoints 0, 1/3, 2/3, 1; double sup error {worst:.1e}"))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * next_unit(rng)
}

/// A random strictly increasing profile on `[0, 1]` with slopes in `[1, 10]`
/// (before scaling) and range in `[2.5, 6]`.
fn random_regular_profile(rng: &mut ChaCha8Rng) -> Profile<f64> {
    let pieces = 3 + (next_unit(rng) * 6.0) as usize;
    let mut cuts: Vec<f64> = (0..pieces - 1).map(|_| uniform(rng, 0.05, 0.95)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut alphas = vec![0.0];
    alphas.extend(cuts);
    alphas.push(1.0);
    alphas.dedup();
    let slopes: Vec<f64> = (0..alphas.len() - 1).map(|_| uniform(rng, 1.0, 10.0)).collect();
    let mut values = vec![0.0];
    for k in 0..slopes.len() {
        values.push(values[k] + slopes[k] * (alphas[k + 1] - alphas[k]));
    }
    let scale = uniform(rng, 2.5, 6.0) / values[values.len() - 1];
    let values = values.iter().map(|v| v * scale).collect();
    Profile::new(alphas, values).unwrap()
}

fn segment(p: &Profile<f64>, a: f64) -> usize {
    p.breakpoints().partition_point(|b| *b <= a)
}

/// Identifies the smooth piece of the update containing `a`.
fn piece(p: &Profile<f64>, a: f64) -> (usize, usize, usize, bool, bool) {
    let b = bounds_uvw(p, &a).unwrap();
    let x = p.eval(&a).unwrap();
    (segment(p, a), segment(p, b.u), segment(p, b.v), x - 1.0 > *p.first_value(), x + 1.0 < *p.last_value())
}

fn derivative_consistency() -> Outcome {
    let mut rng = trial_stream(2024, 0);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_regular_profile(&mut rng);
        ensure(p.range() > 2.0, "generator produced range <= 2")?;
        let mut done = 0;
        let mut attempts = 0;
        while done < 20 {
            attempts += 1;
            ensure(attempts < 10_000, "could not find event-free abscissae")?;
            let a = uniform(&mut rng, 2.0 * h, 1.0 - 2.0 * h);
            let key = piece(&p, a);
            if piece(&p, a - h) != key || piece(&p, a + h) != key {
                continue;
            }
            let x1 = update_at(&p, &a).unwrap();
            let Ok(d) = derivative_next(&p, &a, &x1) else { continue };
            let fd = (update_at(&p, &(a + h)).unwrap() - update_at(&p, &(a - h)).unwrap()) / (2.0 * h);
            let rel = (d - fd).abs() / d.abs().max(fd.abs());
            worst = worst.max(rel);
            ensure(rel <= 1e-4, format!("α = {a}: formula {d}, difference quotient {fd}"))?;
            done += 1;
        }
    }
    Ok(format!("2000 abscissae, worst relative error {worst:.1e}"))
}

fn counterexample() -> Outcome {
    let bits = 512;
    let big = |s: &str| BigFloat::from_rational(&q(s), bits);
    let params = DoubleSParams::new(big("1/100"), big("3/2")).unwrap();
    let run = run_counterexample(&params, 5, &CounterexampleOptions::default()).map_err(|e| e.to_string())?;
    ensure(run.certificates.len() == 6, "expected certificates for t = 0..5")?;
    for c in &run.certificates {
        ensure(c.pass, format!("t = {}: assumptions {:?}", c.t, c.assumptions))?;
        ensure(c.range > big("2"), format!("t = {}: range {}", c.t, c.range))?;
        if let Some(l) = &c.lemma {
            ensure(l.containment, format!("t = {}: level sets not nested", c.t))?;
            ensure(l.mean_increment, format!("t = {}: tail mean increment too large", c.t))?;
            ensure(l.measured_chain != Some(false), format!("t = {}: measured slope chain", c.t))?;
        }
    }
    ensure(run.certified(), "run not certified")?;

    let c1 = &run.certificates[1];
    let (eps, d) = (big("1/100"), big("3/2"));
    let eps4 = eps.clone() * &eps * &eps * &eps;
    let e1 = big("2") * &eps4 * &eps / &d;
    let s1 = d.clone() / (big("2") * &eps4);
    ensure(c1.e_meas <= e1, format!("e_meas(1) = {} above 2ε⁵/d", c1.e_meas))?;
    let s_meas = c1.s_meas.clone().ok_or("B_1 is empty")?;
    ensure(s_meas >= s1, format!("s_meas(1) = {s_meas} below d/(2ε⁴)"))?;

    let (bound, ok) = limit_mean_bound(&q("1/100"), &q("3/2")).map_err(|e| e.to_string())?;
    ensure(ok, format!("limit mean bound {bound} fails"))?;
    Ok(format!(
        "t = 0..5 pass, min range {:.6}, |B_5| = {:.2e}",
        run.certificates.iter().map(|c| c.range.to_f64()).fold(f64::INFINITY, f64::min),
        run.certificates[5].b_t_measure.to_f64()
    ))
}

fn random_config(rng: &mut ChaCha8Rng) -> Vec<Q> {
    let n = 1 + (next_unit(rng) * 200.0) as usize;
    let spread = 1 + (next_unit(rng) * 80.0) as i64;
    let mut xs: Vec<Q> = (0..n).map(|_| Q::new(((next_unit(rng) * spread as f64) as i64).into(), 8.into())).collect();
    xs.sort();
    xs
}

fn is_sorted<T: PartialOrd>(xs: &[T]) -> bool {
    xs.windows(2).all(|w| w[0] <= w[1])
}

fn discrete_properties() -> Result<(), String> {
    let mut rng = trial_stream(7, 0);
    for i in 0..1000 {
        let xs = random_config(&mut rng);
        let c = OpinionConfig::new(xs.clone()).unwrap();
        let fast = hk_step(&c);
        ensure(fast == hk_step_reference(&c), format!("config {i}: exact fast step differs"))?;
        ensure(is_sorted(fast.opinions()), format!("config {i}: order not preserved"))?;
        ensure(fast.first() >= c.first() && fast.last() <= c.last(), format!("config {i}: range grew"))?;
        let f = OpinionConfig::new(xs.iter().map(|x| x.to_f64()).collect()).unwrap();
        let ff = hk_step(&f);
        ensure(ff == hk_step_reference(&f), format!("config {i}: double fast step differs"))?;
        ensure(ff.range() <= f.range(), format!("config {i}: double range grew"))?;
    }
    Ok(())
}

fn continuum_properties() -> Result<(), String> {
    let mut rng = trial_stream(11, 0);
    for i in 0..100 {
        let p = random_regular_profile(&mut rng);
        let tol = 1e-9 * p.range();
        let next = continuum_step(&p, &tol).map_err(|e| e.to_string())?;
        ensure(is_sorted(next.values()), format!("profile {i}: update not monotone"))?;
        ensure(next.range() <= p.range(), format!("profile {i}: range grew"))?;
        ensure(
            *next.first_value() >= *p.first_value() - tol && *next.last_value() <= *p.last_value() + tol,
            format!("profile {i}: update left the hull"),
        )?;
    }
    Ok(())
}

fn antisymmetry_properties() -> Result<(), String> {
    let mut rng = trial_stream(13, 0);
    for i in 0..100 {
        let half = random_regular_profile(&mut rng);
        // reflect through (1, x(1)) onto [0, 2]
        let (c, xc) = (1.0, *half.last_value());
        let mut alphas = half.breakpoints().to_vec();
        let mut values = half.values().to_vec();
        for k in (0..alphas.len() - 1).rev() {
            alphas.push(2.0 * c - half.breakpoints()[k]);
            values.push(2.0 * xc - half.values()[k]);
        }
        let p = Profile::new(alphas, values).unwrap();
        let tol = 1e-10 * p.range();
        let next = continuum_step(&p, &tol).map_err(|e| e.to_string())?;
        for j in 0..=64 {
            let s = j as f64 / 64.0;
            let defect = (next.eval(&(c + s)).unwrap() + next.eval(&(c - s)).unwrap() - 2.0 * xc).abs();
            ensure(defect <= 4.0 * tol, format!("profile {i}: antisymmetry defect {defect:e} at offset {s}"))?;
        }
    }
    Ok(())
}

fn properties() -> Outcome {
    discrete_properties()?;
    continuum_properties()?;
    antisymmetry_properties()?;
    Ok("1000 discrete configs, 100 profiles, 100 symmetric profiles".into())
}

fn equilibration() -> Outcome {
    let rows = equilibration_scan::<f64>(&[100, 200, 400, 800], &()).map_err(|e| e.to_string())?;
    for r in &rows {
        ensure(r.reached_equilibrium, format!("N = {}: no equilibrium", r.n))?;
        ensure((0.5..=1.5).contains(&r.ratio), format!("N = {}: steps/N = {}", r.n, r.ratio))?;
    }
    let ratios: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}", r.n, r.ratio)).collect();
    Ok(format!("steps/N {}", ratios.join(" ")))
}

fn monte_carlo() -> Outcome {
    let ls = vec![3.0, 4.0, 5.0, 6.0, 7.0];
    let spec = ExperimentSpec::new(ExperimentKind::ConsensusProb, 500, ls, 30, 42);
    let est: Vec<f64> = consensus_probability(&spec).map_err(|e| e.to_string())?.iter().map(|r| r.estimate).collect();
    ensure(est.windows(2).all(|w| w[1] <= w[0]), format!("not nonincreasing: {est:?}"))?;
    ensure(est[0] >= 0.8, format!("estimate(3) = {}", est[0]))?;
    ensure(est[4] <= 0.2, format!("estimate(7) = {}", est[4]))?;
    let spec = ExperimentSpec::new(ExperimentKind::StabilityProb, 500, vec![5.0], 30, 42);
    let stab = stability_probability(&spec).map_err(|e| e.to_string())?[0].estimate;
    ensure(stab >= 0.8, format!("stability(5) = {stab}"))?;
    Ok(format!("consensus {est:?}, stability at L = 5: {stab:.3}"))
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("E6 exact reproduction", e6_exact),
        ("uneven example", uneven),
        ("one-step continuum oracle", corner_step),
        ("derivative formula vs difference quotients", derivative_consistency),
        ("double-S certification, 512 bits, T = 5", counterexample),
        ("property suites", properties),
        ("equilibration scaling", equilibration),
        ("Monte Carlo trends", monte_carlo),
    ];
    let results: Vec<(Outcome, Duration)> = thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(_, f)| {
                s.spawn(move || {
                    let t0 = Instant::now();
                    let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
                        let msg = e
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_default();
                        Err(format!("panicked: {msg}"))
                    });
                    (r, t0.elapsed())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut failed = 0;
    for (i, ((name, _), (r, dt))) in criteria.iter().zip(&results).enumerate() {
        match r {
            Ok(detail) => println!("criterion {}: PASS  {name} ({detail}) [{:.1}s]", i + 1, dt.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({why}) [{:.1}s]", i + 1, dt.as_secs_f64());
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
