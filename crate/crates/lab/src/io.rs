//! File formats: trajectory and profile CSV, profile and cluster JSON,
//! certificate JSON lines, experiment tables and the metadata sidecar.
//!
//! Data files carry no timestamps, so identical inputs give identical bytes.

use std::io::{self, Write};

use hkdyn_core::continuum::Profile;
use hkdyn_core::counterexample::{Certificate, LemmaChecks};
use hkdyn_core::discrete::{ClusterSet, OpinionConfig};
use hkdyn_core::experiments::{EqTimeRow, EstimateResult, ExperimentKind, LinearVerdict};
use hkdyn_core::numerics::rational::{parse_rational, to_fraction_string};
use hkdyn_core::{Backend, PrecisionPolicy, Real};
use serde_json::{json, Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field `{0}` is missing or has the wrong type")]
    Field(&'static str),
    #[error("bad number `{0}`")]
    Number(String),
    #[error("invalid profile: {0}")]
    Profile(#[from] hkdyn_core::continuum::ContinuumError),
}

/// Decimal rendering at the backend's lossless digit count.
pub fn decimal<T: Real>(v: &T) -> String {
    v.to_decimal(T::default_digits(&v.context()))
}

/// Compact text for table cells: `p/q` when exact, shortest round-trip
/// decimal for doubles, full decimal for wide floats.
pub fn cell<T: Real>(v: &T) -> String {
    match T::BACKEND {
        Backend::Exact => to_fraction_string(&v.to_rational()),
        Backend::Double => format!("{}", v.to_f64()),
        Backend::BigFloat => decimal(v),
    }
}

/// Lossless JSON value: a number for doubles, a string otherwise.
pub fn scalar_json<T: Real>(v: &T) -> Value {
    match T::BACKEND {
        Backend::Double => serde_json::Number::from_f64(v.to_f64()).map_or(Value::Null, Value::Number),
        _ => Value::String(cell(v)),
    }
}

/// Inverse of [`scalar_json`]; also accepts any number or numeric string.
pub fn scalar_from_json<T: Real>(v: &Value, ctx: &T::Context) -> Result<T, FormatError> {
    match v {
        Value::Number(n) => {
            let text = n.to_string();
            parse_rational(&text).map(|r| T::from_rational(&r, ctx)).map_err(|_| FormatError::Number(text))
        }
        Value::String(s) => {
            parse_rational(s).map(|r| T::from_rational(&r, ctx)).map_err(|_| FormatError::Number(s.clone()))
        }
        _ => Err(FormatError::Number(v.to_string())),
    }
}

/// `t,agent,opinion` rows, plus `opinion_exact` in exact mode. An empty
/// trajectory gives the header alone.
pub fn write_trajectory_csv<T: Real>(w: &mut (impl Write + ?Sized), trajectory: &[OpinionConfig<T>]) -> io::Result<()> {
    let exact = T::BACKEND == Backend::Exact;
    writeln!(w, "t,agent,opinion{}", if exact { ",opinion_exact" } else { "" })?;
    for (t, config) in trajectory.iter().enumerate() {
        for (i, x) in config.opinions().iter().enumerate() {
            if exact {
                writeln!(w, "{t},{i},{},{}", decimal(x), to_fraction_string(&x.to_rational()))?;
            } else {
                writeln!(w, "{t},{i},{}", decimal(x))?;
            }
        }
    }
    Ok(())
}

pub fn cluster_report<T: Real>(clusters: &ClusterSet<T>, stable: bool, steps: usize) -> Value {
    let list: Vec<Value> =
        clusters.clusters.iter().map(|c| json!({"center": scalar_json(&c.center), "weight": c.weight})).collect();
    json!({"clusters": list, "stable": stable, "steps": steps})
}

/// `alpha,value` rows, plus `alpha_exact,value_exact` in exact mode.
pub fn write_profile_csv<T: Real>(w: &mut (impl Write + ?Sized), profile: &Profile<T>) -> io::Result<()> {
    let exact = T::BACKEND == Backend::Exact;
    writeln!(w, "alpha,value{}", if exact { ",alpha_exact,value_exact" } else { "" })?;
    for (a, v) in profile.breakpoints().iter().zip(profile.values()) {
        if exact {
            writeln!(
                w,
                "{},{},{},{}",
                decimal(a),
                decimal(v),
                to_fraction_string(&a.to_rational()),
                to_fraction_string(&v.to_rational())
            )?;
        } else {
            writeln!(w, "{},{}", decimal(a), decimal(v))?;
        }
    }
    Ok(())
}

pub fn profile_json<T: Real>(profile: &Profile<T>) -> Value {
    let list = |xs: &[T]| Value::Array(xs.iter().map(scalar_json).collect());
    json!({
        "domain": [scalar_json(profile.start()), scalar_json(profile.end())],
        "breakpoints": list(profile.breakpoints()),
        "values": list(profile.values()),
    })
}

pub fn parse_profile_json<T: Real>(text: &str, ctx: &T::Context) -> Result<Profile<T>, FormatError> {
    let v: Value = serde_json::from_str(text)?;
    let array = |key: &'static str| -> Result<Vec<T>, FormatError> {
        v.get(key)
            .and_then(Value::as_array)
            .ok_or(FormatError::Field(key))?
            .iter()
            .map(|x| scalar_from_json(x, ctx))
            .collect()
    };
    let alphas = array("breakpoints")?;
    let values = array("values")?;
    let profile = Profile::new(alphas, values)?;
    if let Ok(domain) = array("domain") {
        if domain.len() != 2 || domain[0] != *profile.start() || domain[1] != *profile.end() {
            return Err(FormatError::Field("domain"));
        }
    }
    Ok(profile)
}

fn lemma_json(l: &LemmaChecks) -> Value {
    json!({
        "containment": l.containment,
        "measured_chain": l.measured_chain,
        "mean_increment": l.mean_increment,
    })
}

/// One certificate as a JSON object (one line of the certificate stream).
pub fn certificate_json<T: Real>(c: &Certificate<T>) -> Value {
    let names = ["I", "II", "III", "IV", "V", "VI"];
    let assumptions: Map<String, Value> =
        names.iter().zip(c.assumptions).map(|(k, b)| (k.to_string(), Value::Bool(b))).collect();
    json!({
        "t": c.t,
        "range": scalar_json(&c.range),
        "assumptions": assumptions,
        "e_meas": scalar_json(&c.e_meas),
        "s_meas": c.s_meas.as_ref().map_or(Value::Null, scalar_json),
        "e_bound": scalar_json(&c.e_bound),
        "s_bound": scalar_json(&c.s_bound),
        "A_mean": scalar_json(&c.a_mean),
        "B_measure": scalar_json(&c.b_t_measure),
        "pass": c.pass,
        "lemma": c.lemma.as_ref().map_or(Value::Null, lemma_json),
        "B_size_ok": c.b_size_ok,
        "advisory": c.advisory,
        "resolved": c.resolved,
        "breakpoints": c.breakpoints,
        "symmetry_defect": c.symmetry_defect.as_ref().map_or(Value::Null, scalar_json),
    })
}

pub fn write_certificates<T: Real>(w: &mut (impl Write + ?Sized), certificates: &[Certificate<T>]) -> io::Result<()> {
    for c in certificates {
        writeln!(w, "{}", certificate_json(c))?;
    }
    Ok(())
}

pub fn write_results_csv<T: Real>(
    w: &mut (impl Write + ?Sized),
    kind: ExperimentKind,
    rows: &[EstimateResult<T>],
) -> io::Result<()> {
    writeln!(w, "kind,N,L,trials,successes,estimate,ci_lo,ci_hi,undecided")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            kind.name(),
            r.n,
            cell(&r.l),
            r.trials,
            r.successes,
            r.estimate,
            r.ci_lo,
            r.ci_hi,
            r.undecided
        )?;
    }
    Ok(())
}

pub fn write_eqtime_csv(w: &mut (impl Write + ?Sized), rows: &[EqTimeRow]) -> io::Result<()> {
    writeln!(w, "N,steps,ratio")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.n, r.steps, r.ratio)?;
    }
    Ok(())
}

/// `R,verdict,step,final_range`; `step` is empty unless the verdict is
/// consensus, `final_range` is empty when it is.
pub fn write_linear_csv<T: Real>(
    w: &mut (impl Write + ?Sized),
    ranges: &[T],
    verdicts: &[LinearVerdict<T>],
) -> io::Result<()> {
    writeln!(w, "R,verdict,step,final_range")?;
    for (r, v) in ranges.iter().zip(verdicts) {
        let (name, step, fin) = match v {
            LinearVerdict::Consensus { step } => ("consensus", step.to_string(), String::new()),
            LinearVerdict::Persistent { final_range } => ("persistent", String::new(), cell(final_range)),
            LinearVerdict::Undecided { final_range } => ("undecided", String::new(), cell(final_range)),
        };
        writeln!(w, "{},{name},{step},{fin}", cell(r))?;
    }
    Ok(())
}

/// Run settings recorded next to the data files.
#[derive(Debug, Clone)]
pub struct Metadata {
    pub command: Vec<String>,
    pub seed: Option<u64>,
    pub policy: PrecisionPolicy,
    pub symmetrization: bool,
    pub coarsening: bool,
}

impl Metadata {
    pub fn to_json(&self) -> Value {
        json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "policy": {
                "mode": self.policy.backend.name(),
                "precision_bits": self.policy.precision_bits,
                "tolerance": self.policy.tolerance,
            },
            "flags": {
                "plateau_convention": "closed",
                "symmetrization": self.symmetrization,
                "coarsening": self.coarsening,
            },
        })
    }
}
