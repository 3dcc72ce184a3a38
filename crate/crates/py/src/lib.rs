//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists, converted through canonical JSON.

use std::collections::BTreeSet;
use std::path::PathBuf;

use guidex_core::canon::{self, Obj};
use guidex_core::corpus;
use guidex_core::qa_counterfactual::{generate_counterfactual_set, CfConfig};
use guidex_core::qa_factual::{generate_factual_set, FactualConfig, DEFAULT_NO_ACTION_CAP};
use guidex_core::records::{assignment_from_json, assignment_to_json, path_to_json};
use guidex_core::verifier::{self, InstanceStore, ResponseKind, RewardMode, ScoreRecord};
use guidex_core::{
    abduce, enumerate_paths, execute, parse_tree, partial_execute, serialize_tree, validate_tree, Assignment,
    DecisionTree, ExecutionResult, ResidualResult,
};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value as Json;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Json) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (canon::to_string(v),))
}

fn from_py(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Json> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn assignment(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Assignment> {
    assignment_from_json(&from_py(py, obj)?, "assignment").map_err(value_err)
}

fn result_json(r: &ExecutionResult) -> Json {
    Obj::new()
        .field("output", r.output_label.clone())
        .field("output_index", r.output_index as u64)
        .field("path", path_to_json(&r.path))
        .build()
}

/// A validated-on-demand decision tree.
#[pyclass(name = "Tree", module = "guidex", frozen)]
struct PyTree {
    inner: DecisionTree,
}

#[pymethods]
impl PyTree {
    #[new]
    fn new(document: &str) -> PyResult<Self> {
        Ok(PyTree {
            inner: parse_tree(document).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(value_err)?;
        Self::new(&text)
    }

    #[getter]
    fn id(&self) -> &str {
        self.inner.id()
    }

    #[getter]
    fn outputs(&self) -> Vec<String> {
        self.inner.outputs().to_vec()
    }

    #[getter]
    fn variables(&self) -> Vec<String> {
        self.inner.variables().iter().map(|v| v.name().to_string()).collect()
    }

    #[getter]
    fn no_action(&self) -> Option<&str> {
        self.inner.no_action_label()
    }

    /// Canonical serialized form.
    fn to_json(&self) -> String {
        serialize_tree(&self.inner)
    }

    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &validate_tree(&self.inner).to_json())
    }

    fn paths<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let paths: Vec<Json> = enumerate_paths(&self.inner)
            .iter()
            .map(|p| {
                let steps: Vec<Json> = p
                    .steps
                    .iter()
                    .map(|s| Obj::new().field("predicate", s.predicate.to_string()).field("taken", s.taken).build())
                    .collect();
                Obj::new()
                    .field("path_id", p.path_id as u64)
                    .field("output", self.inner.outputs()[p.leaf_output_index].clone())
                    .field("steps", steps)
                    .field("constraints", p.constraints.to_string())
                    .field("satisfiable", p.is_satisfiable())
                    .build()
            })
            .collect();
        to_py(py, &Json::Array(paths))
    }

    /// Runs a complete assignment; returns output, output_index and path.
    fn execute<'py>(&self, py: Python<'py>, assignment_: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let x = assignment(py, assignment_)?;
        let r = execute(&self.inner, &x).map_err(value_err)?;
        to_py(py, &result_json(&r))
    }

    /// Runs a partial assignment. Undecided results list the reachable
    /// outputs and the unassigned variables blocking a decision.
    fn partial_execute<'py>(&self, py: Python<'py>, assignment_: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let x = assignment(py, assignment_)?;
        let out = match partial_execute(&self.inner, &x).map_err(value_err)? {
            ResidualResult::Decided(r) => result_json(&r),
            ResidualResult::Undecided { reachable, blocking } => Obj::new()
                .field("output", Json::Null)
                .field(
                    "reachable",
                    reachable.iter().map(|i| self.inner.outputs()[*i].clone()).collect::<Vec<_>>(),
                )
                .field("blocking", blocking.into_iter().collect::<Vec<_>>())
                .build(),
        };
        to_py(py, &out)
    }

    /// Hidden-variable assignments consistent with `observed` and `y_obs`.
    fn abduce<'py>(
        &self,
        py: Python<'py>,
        observed: &Bound<'py, PyAny>,
        hidden: Vec<String>,
        y_obs: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let observed = assignment(py, observed)?;
        let hidden: BTreeSet<String> = hidden.into_iter().collect();
        let class = abduce(&self.inner, &observed, &hidden, y_obs).map_err(value_err)?;
        to_py(py, &Json::Array(class.iter().map(assignment_to_json).collect()))
    }

    #[pyo3(signature = (seed=0, per_path=1, no_action_cap=DEFAULT_NO_ACTION_CAP))]
    fn sample_factual<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        per_path: usize,
        no_action_cap: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = FactualConfig {
            seed,
            per_path,
            no_action_cap,
        };
        let set = generate_factual_set(&self.inner, &cfg).map_err(value_err)?;
        to_py(py, &Json::Array(set.instances.iter().map(|f| f.to_json()).collect()))
    }

    #[pyo3(signature = (seed=0, per_path=1, hidden_count=1, identifiable_only=true))]
    fn sample_counterfactual<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        per_path: usize,
        hidden_count: usize,
        identifiable_only: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let pool = generate_factual_set(
            &self.inner,
            &FactualConfig {
                seed,
                per_path,
                ..Default::default()
            },
        )
        .map_err(value_err)?;
        let cfg = CfConfig {
            seed,
            hidden_count,
            identifiable_only,
            ..Default::default()
        };
        let out = generate_counterfactual_set(&self.inner, &pool.instances, &cfg).map_err(value_err)?;
        to_py(py, &Json::Array(out.instances.iter().map(|c| c.to_json()).collect()))
    }

    fn __repr__(&self) -> String {
        format!("Tree(id={:?}, leaves={})", self.inner.id(), self.inner.leaf_count())
    }
}

/// Trees and instances loaded for reward scoring.
#[pyclass(name = "RewardStore", module = "guidex", frozen)]
struct PyRewardStore {
    inner: InstanceStore,
    mode: RewardMode,
}

#[pymethods]
impl PyRewardStore {
    #[new]
    #[pyo3(signature = (trees_dir, datasets=Vec::new(), credit_equivalence_class=false))]
    fn new(trees_dir: PathBuf, datasets: Vec<PathBuf>, credit_equivalence_class: bool) -> PyResult<Self> {
        let refs: Vec<&std::path::Path> = datasets.iter().map(PathBuf::as_path).collect();
        Ok(PyRewardStore {
            inner: InstanceStore::load(&trees_dir, &refs).map_err(value_err)?,
            mode: if credit_equivalence_class {
                RewardMode::Equivalence
            } else {
                RewardMode::Strict
            },
        })
    }

    fn __len__(&self) -> usize {
        self.inner.factual_count() + self.inner.counterfactual_count()
    }

    /// Reward breakdown for one response; raises KeyError for unknown ids.
    fn score<'py>(&self, py: Python<'py>, instance_id: &str, response: &str) -> PyResult<Bound<'py, PyAny>> {
        let b = self
            .inner
            .score(instance_id, response, self.mode)
            .map_err(|e| PyKeyError::new_err(e.to_string()))?;
        let record = ScoreRecord {
            instance_id: instance_id.to_string(),
            result: Ok(b),
        };
        to_py(py, &record.to_json())
    }

    /// Scores `(instance_id, response)` pairs; unknown ids yield error records.
    fn score_batch<'py>(&self, py: Python<'py>, requests: Vec<(String, String)>) -> PyResult<Bound<'py, PyAny>> {
        let records = verifier::score_batch(&self.inner, &requests, self.mode);
        to_py(py, &Json::Array(records.iter().map(ScoreRecord::to_json).collect()))
    }
}

/// Splits a response into its blocks. `kind` is "factual" or "counterfactual".
#[pyfunction]
#[pyo3(signature = (text, kind="factual"))]
fn parse_response<'py>(py: Python<'py>, text: &str, kind: &str) -> PyResult<Bound<'py, PyAny>> {
    let kind = match kind {
        "factual" => ResponseKind::Factual,
        "counterfactual" => ResponseKind::Counterfactual,
        other => return Err(value_err(format!("unknown response kind {other:?}"))),
    };
    let p = verifier::parse_response(text, kind);
    let hidden = p.hidden_claims.as_ref().map_or(Json::Null, |h| {
        Json::Object(h.iter().map(|(k, v)| (k.clone(), Json::from(v.clone()))).collect())
    });
    let out = Obj::new()
        .field("format_ok", p.format_ok)
        .field("format_error", p.format_error.map_or(Json::Null, |e| e.as_str().into()))
        .field("think", p.think_text.clone())
        .field("hidden", hidden)
        .field("answer", p.answer_text.clone())
        .build();
    to_py(py, &out)
}

#[pyfunction]
fn normalize_label(text: &str) -> String {
    verifier::normalize_label(text)
}

/// Chunks a document on paragraph boundaries; returns chunk dicts.
#[pyfunction]
#[pyo3(signature = (guideline_id, text, soft_limit=corpus::DEFAULT_SOFT_LIMIT, max_chunks=corpus::DEFAULT_MAX_CHUNKS))]
fn chunk_document<'py>(
    py: Python<'py>,
    guideline_id: &str,
    text: &str,
    soft_limit: usize,
    max_chunks: usize,
) -> PyResult<Bound<'py, PyAny>> {
    if soft_limit == 0 || max_chunks == 0 {
        return Err(value_err("soft_limit and max_chunks must be positive"));
    }
    let chunks = corpus::chunk_document(guideline_id, text, soft_limit, max_chunks);
    to_py(py, &Json::Array(chunks.iter().map(|c| c.to_json()).collect()))
}

#[pymodule]
fn guidex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTree>()?;
    m.add_class::<PyRewardStore>()?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_label, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_document, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
