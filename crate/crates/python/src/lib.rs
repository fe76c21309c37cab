//! Python bindings. Commands, queries and results cross the boundary as
//! plain dicts in the same JSON shape the HTTP service uses.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use unitflow_core::clock::StepClock;
use unitflow_core::command::{Command, Engine as CoreEngine, Query};
use unitflow_core::fixtures;
use unitflow_core::fuzz::{run_fuzz, FuzzConfig};
use unitflow_core::persist::Store;
use unitflow_core::sankey::{build_graph, to_svg, GraphLevel};
use unitflow_core::EngineError as CoreError;

create_exception!(unitflow, EngineError, PyException, "An engine operation was rejected; args are (kind, message).");

fn engine_err(e: CoreError) -> PyErr {
    EngineError::new_err((e.kind().to_string(), e.to_string()))
}

fn other_err(kind: &str, message: impl ToString) -> PyErr {
    EngineError::new_err((kind.to_string(), message.to_string()))
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| other_err("Serialize", e))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts a dict or a JSON string.
fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match value.extract::<String>() {
        Ok(s) => s,
        Err(_) => py.import("json")?.call_method1("dumps", (value,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(|e| other_err("BadRequest", e))
}

fn level(name: &str) -> PyResult<GraphLevel> {
    match name {
        "session" => Ok(GraphLevel::Session),
        "unit" => Ok(GraphLevel::Unit),
        other => Err(other_err("BadRequest", format!("unknown level `{other}`"))),
    }
}

fn parse<T: std::str::FromStr>(text: &str) -> PyResult<T> {
    text.parse().map_err(|_| other_err("BadRequest", format!("`{text}` is not a valid id here")))
}

#[pyclass(unsendable, module = "unitflow")]
struct Engine {
    inner: CoreEngine,
    store: Option<Store>,
}

#[pymethods]
impl Engine {
    /// A fresh in-memory workspace. `deterministic` uses a step clock so
    /// timestamps (and therefore logs) repeat across runs.
    #[new]
    #[pyo3(signature = (deterministic = false))]
    fn new(deterministic: bool) -> Self {
        let inner = if deterministic {
            CoreEngine::default().with_clock(StepClock::default())
        } else {
            CoreEngine::default()
        };
        Engine { inner, store: None }
    }

    /// Opens (or starts) the workspace file at `path`, replaying its log.
    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<Self> {
        let mut store = Store::new(path);
        let inner = store.open().map_err(|e| other_err(e.kind(), e))?;
        Ok(Engine {
            inner,
            store: Some(store),
        })
    }

    /// Runs a bundled fixture and returns the engine plus its report.
    #[staticmethod]
    fn fixture<'py>(py: Python<'py>, name: &str) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let (inner, report) = fixtures::run_fixture(name).map_err(|e| other_err("Fixture", e))?;
        Ok((Engine { inner, store: None }, to_py(py, &report)?))
    }

    #[getter]
    fn revision(&self) -> u64 {
        self.inner.revision()
    }

    /// Executes one command (`{"op": ..., ...}`) and returns its outcome.
    fn execute<'py>(&mut self, py: Python<'py>, command: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let command: Command = from_py(py, command)?;
        let outcome = self.inner.execute(command).map_err(engine_err)?;
        if let Some(store) = self.store.as_mut() {
            store.commit(&self.inner).map_err(|e| other_err(e.kind(), e))?;
        }
        to_py(py, &outcome)
    }

    /// Runs a read-only query (`{"query": ..., ...}`).
    fn query<'py>(&self, py: Python<'py>, query: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let query: Query = from_py(py, query)?;
        let value = self.inner.query(&query).map_err(engine_err)?;
        to_py(py, &value)
    }

    fn new_session<'py>(&mut self, py: Python<'py>, base_name: &str) -> PyResult<Bound<'py, PyAny>> {
        self.run(
            py,
            Command::NewSession {
                base_name: base_name.into(),
            },
        )
    }

    fn create_unit<'py>(&mut self, py: Python<'py>, session: &str, name: &str) -> PyResult<Bound<'py, PyAny>> {
        let session = parse(session)?;
        self.run(py, Command::CreateUnit { session, name: name.into() })
    }

    #[pyo3(signature = (unit, action_type, params = None))]
    fn append<'py>(
        &mut self,
        py: Python<'py>,
        unit: &str,
        action_type: &str,
        params: Option<&Bound<'py, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let params = match params {
            Some(p) => from_py(py, p.as_any())?,
            None => Default::default(),
        };
        let unit = parse(unit)?;
        self.run(
            py,
            Command::Append {
                unit,
                action_type: action_type.into(),
                params,
            },
        )
    }

    fn undo<'py>(&mut self, py: Python<'py>, unit: &str) -> PyResult<Bound<'py, PyAny>> {
        let unit = parse(unit)?;
        self.run(py, Command::Undo { unit })
    }

    #[pyo3(signature = (unit, record = None))]
    fn redo<'py>(&mut self, py: Python<'py>, unit: &str, record: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let unit = parse(unit)?;
        let record = record.map(parse).transpose()?;
        self.run(py, Command::Redo { unit, record })
    }

    /// One unit's report, or a list of reports for every live unit.
    #[pyo3(signature = (unit = None))]
    fn validate<'py>(&self, py: Python<'py>, unit: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        match unit {
            Some(u) => to_py(py, &self.inner.workspace().validate(parse(u)?).map_err(engine_err)?),
            None => to_py(py, &self.inner.query(&Query::Validate { unit: None }).map_err(engine_err)?),
        }
    }

    fn state_hash(&self, unit: &str) -> PyResult<String> {
        self.inner.workspace().state_hash(parse(unit)?).map_err(engine_err)
    }

    #[pyo3(signature = (level = "session", focus = None))]
    fn sankey<'py>(&self, py: Python<'py>, level: &str, focus: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let focus = focus.map(parse).transpose()?;
        let graph = build_graph(self.inner.workspace(), self::level(level)?, focus).map_err(engine_err)?;
        to_py(py, &graph)
    }

    #[pyo3(signature = (level = "session", focus = None))]
    fn sankey_svg(&self, level: &str, focus: Option<&str>) -> PyResult<String> {
        let focus = focus.map(parse).transpose()?;
        let graph = build_graph(self.inner.workspace(), self::level(level)?, focus).map_err(engine_err)?;
        Ok(to_svg(&graph))
    }

    fn actions_between(&self, start: &str, end: &str) -> PyResult<Vec<String>> {
        let ids = self
            .inner
            .workspace()
            .actions_between(parse(start)?, parse(end)?)
            .map_err(engine_err)?;
        Ok(ids.iter().map(|a| a.to_string()).collect())
    }

    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.events())
    }

    /// Writes the workspace and event log to `path`; an engine opened from
    /// a file saves back to it.
    #[pyo3(signature = (path = None))]
    fn save(&mut self, path: Option<PathBuf>) -> PyResult<()> {
        if self.store.is_none() {
            let path = path.ok_or_else(|| other_err("BadRequest", "no path given"))?;
            let store = Store::new(path);
            if store.exists() {
                return Err(other_err("BadRequest", format!("{} already exists", store.path().display())));
            }
            self.store = Some(store);
        }
        let store = self.store.as_mut().expect("set above");
        store.commit(&self.inner).map_err(|e| other_err(e.kind(), e))
    }

    fn __repr__(&self) -> String {
        format!(
            "Engine(project={:?}, revision={})",
            self.inner.workspace().project.name,
            self.inner.revision()
        )
    }
}

impl Engine {
    fn run<'py>(&mut self, py: Python<'py>, command: Command) -> PyResult<Bound<'py, PyAny>> {
        let outcome = self.inner.execute(command).map_err(engine_err)?;
        if let Some(store) = self.store.as_mut() {
            store.commit(&self.inner).map_err(|e| other_err(e.kind(), e))?;
        }
        to_py(py, &outcome)
    }
}

#[pyfunction]
fn fixture_names() -> Vec<&'static str> {
    fixtures::names()
}

/// Checker-versus-interpreter comparison over random edit scripts.
#[pyfunction]
#[pyo3(signature = (scripts = 100, seed = 7))]
fn fuzz(py: Python<'_>, scripts: usize, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let stats = run_fuzz(&FuzzConfig {
        seed,
        scripts,
        ..FuzzConfig::default()
    });
    to_py(py, &stats)
}

#[pymodule]
fn unitflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Engine>()?;
    m.add("EngineError", m.py().get_type::<EngineError>())?;
    m.add_function(wrap_pyfunction!(fixture_names, m)?)?;
    m.add_function(wrap_pyfunction!(fuzz, m)?)?;
    Ok(())
}
