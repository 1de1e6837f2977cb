//! Python bindings: load and validate specs, compile deployment plans, run
//! workflows in either mode and re-partition from a profile.

#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use dmas_forge::cli::spec_error_lines;
use dmas_forge::partition::{optimize_partition, partition_cost, partition_for, CostModel, Partition};
use dmas_forge::runtime::{self, canonical_trace, Fault, RunMode, RunOptions};
use dmas_forge::scaffold::{self, DeploymentPlan};
use dmas_forge::spec::{self, SpecDocument};
use dmas_forge::Message;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(dmasf, DmasfError, PyException);
create_exception!(dmasf, SpecError, DmasfError);
create_exception!(dmasf, RunFailed, DmasfError);

fn domain<E: std::fmt::Display>(e: E) -> PyErr {
    DmasfError::new_err(e.to_string())
}

fn spec_err(e: &spec::SpecError) -> PyErr {
    SpecError::new_err(spec_error_lines(e).join("\n"))
}

#[pyclass(name = "Spec", module = "dmasf", skip_from_py_object)]
#[derive(Clone)]
struct PySpec {
    inner: SpecDocument,
}

#[pymethods]
impl PySpec {
    /// Parse and validate a spec document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        spec::load_spec(text.as_bytes()).map(|inner| Self { inner }).map_err(|e| spec_err(&e))
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(domain)?;
        spec::load_spec(&bytes).map(|inner| Self { inner }).map_err(|e| spec_err(&e))
    }

    /// The two-agent weather/news example.
    #[staticmethod]
    fn weather_news() -> Self {
        Self { inner: spec::weather_news_spec() }
    }

    /// Same workflow under another deployment section (JSON text).
    fn with_deployment(&self, deployment: &str) -> PyResult<Self> {
        let text = spec::save_spec(&self.inner);
        spec::load_spec_with_deployment(text.as_bytes(), deployment.as_bytes())
            .map(|inner| Self { inner })
            .map_err(|e| spec_err(&e))
    }

    fn to_json(&self) -> String {
        spec::save_spec(&self.inner)
    }

    #[getter]
    fn agents(&self) -> Vec<String> {
        self.inner.workflow.agent_names().into_iter().collect()
    }

    /// Blocks of the partition the deployment section describes.
    fn partition(&self) -> PyResult<Vec<Vec<String>>> {
        partition_for(&self.inner).map(|p| p.canonical_form()).map_err(domain)
    }

    fn __repr__(&self) -> String {
        format!("Spec(agents={:?})", self.agents())
    }
}

#[pyclass(name = "Plan", module = "dmasf")]
struct PyPlan {
    inner: DeploymentPlan,
}

#[pymethods]
impl PyPlan {
    /// Unit name to member agents.
    #[getter]
    fn units(&self) -> BTreeMap<String, Vec<String>> {
        self.inner.partition.units.iter().map(|u| (u.name.clone(), u.members.iter().cloned().collect())).collect()
    }

    #[getter]
    fn ports(&self) -> BTreeMap<String, u16> {
        self.inner.ports.clone()
    }

    /// Every emitted file, relative path to content.
    fn files(&self) -> BTreeMap<String, String> {
        self.inner.files()
    }

    fn plan_json(&self) -> String {
        self.inner.plan_json()
    }

    /// Write the plan under `out_dir`. Returns the paths written.
    #[pyo3(signature = (out_dir, force=false))]
    fn emit(&self, out_dir: PathBuf, force: bool) -> PyResult<Vec<String>> {
        scaffold::emit(&self.inner, &out_dir, force).map(|r| r.written).map_err(domain)
    }
}

#[pyclass(name = "Trace", module = "dmasf")]
struct PyTrace {
    inner: runtime::Trace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn trace_id(&self) -> String {
        self.inner.trace_id.clone()
    }

    /// Deployment-independent form used to compare runs.
    fn canonical(&self) -> String {
        canonical_trace(&self.inner)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).unwrap_or_default()
    }

    fn activation_count(&self, node: &str) -> usize {
        self.inner.activation_count(node)
    }

    /// `(node, text)` for every terminal output.
    fn final_outputs(&self) -> Vec<(String, String)> {
        self.inner.final_messages.iter().map(|f| (f.node.clone(), f.message.texts().collect::<Vec<_>>().join("\n"))).collect()
    }
}

#[pyclass(name = "Profile", module = "dmasf", skip_from_py_object)]
#[derive(Clone)]
struct PyProfile {
    inner: dmas_forge::Profile,
}

#[pymethods]
impl PyProfile {
    #[new]
    fn new() -> Self {
        Self { inner: dmas_forge::Profile::default() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        spec::load_profile(text.as_bytes()).map(|inner| Self { inner }).map_err(|e| spec_err(&e))
    }

    fn to_json(&self) -> String {
        spec::save_profile(&self.inner)
    }

    fn set_edge(&mut self, src: &str, dst: &str, count: u64, bytes: u64) {
        self.inner.set_edge(src, dst, count, bytes);
    }

    /// `(count, bytes)` observed on one edge.
    fn edge(&self, src: &str, dst: &str) -> (u64, u64) {
        let e = self.inner.edge(src, dst);
        (e.count, e.bytes)
    }
}

/// Diagnostics for a spec document; empty when it is valid.
#[pyfunction]
fn validate(text: &str) -> Vec<String> {
    match spec::load_spec(text.as_bytes()) {
        Ok(_) => Vec::new(),
        Err(e) => spec_error_lines(&e),
    }
}

#[pyfunction]
fn compile(spec: &PySpec) -> PyResult<PyPlan> {
    scaffold::compile(&spec.inner).map(|inner| PyPlan { inner }).map_err(domain)
}

/// Execute the workflow. Faults are `unit:kills[:restarts]` strings, and
/// `unit_binary` is the `dmasf` executable used in processes mode.
#[pyfunction]
#[pyo3(signature = (spec, input, mode="monolith", hop_budget=None, faults=Vec::new(), unit_binary=None))]
fn run(
    py: Python<'_>,
    spec: &PySpec,
    input: &str,
    mode: &str,
    hop_budget: Option<u32>,
    faults: Vec<String>,
    unit_binary: Option<PathBuf>,
) -> PyResult<(PyTrace, PyProfile)> {
    let mode: RunMode = mode.parse().map_err(PyValueError::new_err)?;
    let fault_plan = faults.iter().map(|f| f.parse::<Fault>()).collect::<Result<Vec<_>, _>>().map_err(PyValueError::new_err)?;
    let mut opts = RunOptions { fault_plan, unit_binary, ..RunOptions::default() };
    if let Some(b) = hop_budget {
        opts.hop_budget = b;
    }
    let doc = spec.inner.clone();
    let result = py.detach(move || runtime::run(&doc, &Message::user_text(input), mode, &opts));
    match result {
        Ok((inner, profile)) => Ok((PyTrace { inner }, PyProfile { inner: profile })),
        Err(f) => {
            let err = RunFailed::new_err(f.error.to_string());
            let trace = Py::new(py, PyTrace { inner: f.trace })?;
            err.value(py).setattr("trace", trace)?;
            Err(err)
        }
    }
}

fn cost_model(latency: f64, byte: f64, fixed: f64) -> PyResult<CostModel> {
    CostModel::new(latency, byte, fixed).map_err(PyValueError::new_err)
}

/// Best feasible partition for the profile, as sorted blocks of agents.
#[pyfunction]
#[pyo3(signature = (spec, profile, latency=1.0, byte=0.001, fixed=0.0))]
fn optimize(spec: &PySpec, profile: &PyProfile, latency: f64, byte: f64, fixed: f64) -> PyResult<Vec<Vec<String>>> {
    let cm = cost_model(latency, byte, fixed)?;
    optimize_partition(&spec.inner, &profile.inner, &cm).map(|p| p.canonical_form()).map_err(domain)
}

/// Cost of the partition given by `blocks` under the profile.
#[pyfunction]
#[pyo3(signature = (blocks, profile, latency=1.0, byte=0.001, fixed=0.0))]
fn cost(blocks: Vec<Vec<String>>, profile: &PyProfile, latency: f64, byte: f64, fixed: f64) -> PyResult<f64> {
    let cm = cost_model(latency, byte, fixed)?;
    Ok(partition_cost(&Partition::from_blocks(blocks), &profile.inner, &cm))
}

#[pymodule]
fn dmasf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpec>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyProfile>()?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(compile, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    m.add("DmasfError", m.py().get_type::<DmasfError>())?;
    m.add("SpecError", m.py().get_type::<SpecError>())?;
    m.add("RunFailed", m.py().get_type::<RunFailed>())?;
    Ok(())
}
