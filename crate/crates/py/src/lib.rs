//! Python bindings. Worlds and traces cross the boundary as their JSON and
//! JSONL file contents.

use std::sync::Arc;

use navloop::agent::{parse_lang_response as parse_lang, DecisionBackend, FaultyBackend};
use navloop::cli::{make_backend, render_svg as svg, BackendChoice};
use navloop::metrics::{classify_failure, compute_metrics, ClassifierConfig, FinalState};
use navloop::remote::EndpointConfig;
use navloop::runner::{run_episode as run, Ablation, EpisodeConfig, EpisodeTrace};
use navloop::world::{generate_world as generate, world_from_json, world_to_json, GeneratorSpec, TaskFamily, WorldModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn load(trace: &str, world: &str) -> PyResult<(EpisodeTrace, WorldModel)> {
    Ok((EpisodeTrace::from_jsonl(trace).map_err(value_err)?, world_from_json(world).map_err(value_err)?))
}

/// Generates a world and returns it as JSON.
#[pyfunction]
#[pyo3(signature = (family, seed, floors = 1, dead_end = false, max_subgoals = None))]
fn generate_world(family: &str, seed: u64, floors: usize, dead_end: bool, max_subgoals: Option<usize>) -> PyResult<String> {
    let fam = TaskFamily::parse(family).ok_or_else(|| value_err(format!("unknown family {family:?}")))?;
    let mut spec = GeneratorSpec::for_family(fam);
    spec.floors = floors;
    spec.dead_end_rooms = dead_end;
    if let Some(n) = max_subgoals {
        spec.max_subgoals = n;
    }
    Ok(world_to_json(&generate(seed, &spec).map_err(value_err)?))
}

/// Runs one episode and returns the trace as JSONL.
#[pyfunction]
#[pyo3(signature = (world, backend = "oracle", seed = 0, ablate = "none", error_rate = 0.0, max_steps = None, endpoint = None))]
#[allow(clippy::too_many_arguments)]
fn run_episode(
    py: Python<'_>,
    world: &str,
    backend: &str,
    seed: u64,
    ablate: &str,
    error_rate: f64,
    max_steps: Option<usize>,
    endpoint: Option<&str>,
) -> PyResult<String> {
    let w = world_from_json(world).map_err(value_err)?;
    let choice = match backend {
        "oracle" => BackendChoice::Oracle,
        "forgetful" => BackendChoice::Forgetful,
        "http" => BackendChoice::Http {
            endpoint: EndpointConfig::new(endpoint.ok_or_else(|| value_err("the http backend needs an endpoint"))?)
                .with_env_token(),
        },
        other => return Err(value_err(format!("unknown backend {other:?}"))),
    };
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(value_err(format!("error rate {error_rate} outside [0, 1]")));
    }
    let mut cfg = EpisodeConfig {
        seed,
        ablation: Ablation::from_flag(ablate).ok_or_else(|| value_err(format!("unknown ablation {ablate:?}")))?,
        ..Default::default()
    };
    if let Some(m) = max_steps {
        cfg.max_steps = m;
    }
    let inner = make_backend(&choice, &w).map_err(value_err)?;
    let b: Box<dyn DecisionBackend> = if error_rate > 0.0 {
        Box::new(FaultyBackend::new(inner, error_rate, seed))
    } else {
        inner
    };
    let w = Arc::new(w);
    let trace = py.detach(|| run(&w, b.as_ref(), &cfg)).map_err(runtime_err)?;
    Ok(trace.to_jsonl())
}

/// Episode metrics as JSON, with the failure category under `failure`.
#[pyfunction]
fn episode_metrics(trace: &str, world: &str) -> PyResult<String> {
    let (t, w) = load(trace, world)?;
    let m = compute_metrics(&t, &w).map_err(value_err)?;
    let state = FinalState::from_trace(&t, &w).map_err(value_err)?;
    let cat = classify_failure(&state, w.task.family, t.header.success_radius, &ClassifierConfig::default());
    let mut v = serde_json::to_value(&m).map_err(runtime_err)?;
    v["failure"] = cat.label().into();
    Ok(v.to_string())
}

#[pyfunction]
fn render_svg(trace: &str, world: &str) -> PyResult<String> {
    let (t, w) = load(trace, world)?;
    svg(&t, &w).map_err(value_err)
}

/// Recovers a language decision from raw model text. Returns
/// `(decision_json, rung, warnings)`.
#[pyfunction]
fn parse_lang_response(raw: &str) -> PyResult<(String, u8, Vec<String>)> {
    let p = parse_lang(raw).map_err(value_err)?;
    Ok((p.value.to_json(), p.rung, p.warnings))
}

#[pymodule]
#[pyo3(name = "navloop")]
fn navloop_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(generate_world, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(episode_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(render_svg, m)?)?;
    m.add_function(wrap_pyfunction!(parse_lang_response, m)?)?;
    Ok(())
}
