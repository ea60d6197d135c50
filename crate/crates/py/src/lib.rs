use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use cfmargin::agents::{PolicyName, PolicySpec};
use cfmargin::counterfactual::ego_idm_params;
use cfmargin::error::MarginError;
use cfmargin::io::{parse_episode, parse_scenario, write_episode, write_scenario, ScenarioFormat};
use cfmargin::margin::{self as m, EgoMode, MarginConfig};
use cfmargin::model::{CounterfactualKind, Episode};
use cfmargin::severity::SeverityModel;
use cfmargin::sim::{simulate as run, ImpactClass, PolicyAssignment};
use cfmargin::suite::{generate_suite as suite, SuiteConfig};

#[derive(FromPyObject)]
enum Text {
    Str(String),
    Bytes(Vec<u8>),
}

impl Text {
    fn bytes(&self) -> &[u8] {
        match self {
            Text::Str(s) => s.as_bytes(),
            Text::Bytes(b) => b,
        }
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn episode(log: &Text) -> PyResult<Episode> {
    parse_episode(log.bytes()).map_err(value_err)
}

/// Simulate a scenario closed loop; returns the episode log. `seed`
/// defaults to the scenario's own.
#[pyfunction]
#[pyo3(signature = (scenario, format = "native", seed = None))]
fn simulate<'py>(py: Python<'py>, scenario: Text, format: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyBytes>> {
    let fmt: ScenarioFormat = format.parse().map_err(value_err)?;
    let s = parse_scenario(scenario.bytes(), fmt).map_err(value_err)?;
    let e = py
        .detach(|| run(&s, &PolicyAssignment::from_scenario(&s), seed.unwrap_or(s.seed), None))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyBytes::new(py, &write_episode(&e)))
}

/// Safety margin of one episode under one counterfactual kind.
///
/// `ego_mode` is "replay", "best-response" or "policy:NAME".
#[pyfunction]
#[pyo3(signature = (episode_log, kind, ego_mode = "replay", eps = 0.05, grid = 11, refine = 4, reps = 50, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn safety_margin<'py>(
    py: Python<'py>,
    episode_log: Text,
    kind: &str,
    ego_mode: &str,
    eps: f64,
    grid: usize,
    refine: usize,
    reps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let e = episode(&episode_log)?;
    let kind: CounterfactualKind = kind.parse().map_err(value_err)?;
    let ego = match ego_mode {
        "replay" => EgoMode::NonReactive,
        "best-response" => EgoMode::BestResponse,
        other => {
            let name: PolicyName = other
                .strip_prefix("policy:")
                .ok_or_else(|| value_err(format!("unknown ego mode {other:?}")))?
                .parse()
                .map_err(value_err)?;
            EgoMode::Reactive(PolicySpec::idm_variant(name, ego_idm_params(&e)).map_err(value_err)?)
        }
    };
    let cfg = MarginConfig {
        eps,
        grid,
        refine,
        reps,
        seed,
        severity: SeverityModel::default(),
    };
    let r = py.detach(|| m::safety_margin(&e, kind, ego, &cfg)).map_err(|err| match err {
        MarginError::Config(_) | MarginError::Model(_) => value_err(err),
        other => PyRuntimeError::new_err(other.to_string()),
    })?;
    from_json(py, &r)
}

/// (p_fatal, p_mais3plus, p_mais2plus) for a contact at `delta_v` m/s.
#[pyfunction]
#[pyo3(signature = (delta_v, impact = "front"))]
fn severity(delta_v: f64, impact: &str) -> PyResult<(f64, f64, f64)> {
    let class = match impact {
        "front" => ImpactClass::Front,
        "side" => ImpactClass::Side,
        "rear" => ImpactClass::Rear,
        _ => return Err(value_err(format!("impact must be front, side or rear, got {impact:?}"))),
    };
    let p = SeverityModel::default().profile(delta_v, class).map_err(value_err)?;
    Ok((p.p_fatal, p.p_mais3plus, p.p_mais2plus))
}

/// The synthetic evaluation suite as a list of dicts with `name`,
/// `family`, `scenario` (native text) and `episode` (log bytes).
#[pyfunction]
#[pyo3(signature = (seed = SuiteConfig::default().seed, per_band = SuiteConfig::default().per_band))]
fn generate_suite<'py>(py: Python<'py>, seed: u64, per_band: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = SuiteConfig {
        seed,
        per_band,
        ..SuiteConfig::default()
    };
    py.detach(|| suite(&cfg))
        .into_iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("name", &s.scenario.name)?;
            d.set_item("family", s.family.as_str())?;
            d.set_item("scenario", write_scenario(&s.scenario))?;
            d.set_item("episode", PyBytes::new(py, &write_episode(&s.episode)))?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn cfmargin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(safety_margin, m)?)?;
    m.add_function(wrap_pyfunction!(severity, m)?)?;
    m.add_function(wrap_pyfunction!(generate_suite, m)?)?;
    m.add("KINDS", CounterfactualKind::ALL.map(|k| k.to_string()).to_vec())?;
    Ok(())
}
