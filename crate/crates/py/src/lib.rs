//! Python bindings: semantic graph construction, synthetic scene
//! generation, policy training and Recall@K evaluation.
//!
//! Structured options (`SynthParams`, `TrainConfig`) are passed as JSON
//! strings with per-field defaults, so Python callers only name what they
//! override. Reports come back as plain dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use vrl_core::action_graph::{build_graph, PhraseCounts, SemanticGraph};
use vrl_core::agent::{random_walk_episode, train, Agent, Mode, PolicyVariant};
use vrl_core::config::OptimizerKind;
use vrl_core::eval::{evaluate_scenes, rank_predictions, zero_shot_split};
use vrl_core::features::{FeatureConfig, SyntheticProvider};
use vrl_core::qlearn::{load_checkpoint, save_checkpoint, Optimizer};
use vrl_core::rng::substream_indexed;
use vrl_core::scene_io::{load_scenes, save_scenes};
use vrl_core::synth::{generate_scene_set, SynthParams};
use vrl_core::{Scene, TrainConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().unbind().into(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.unbind().into()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.unbind().into()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.unbind().into(),
        serde_json::Value::Array(xs) => {
            let list = PyList::empty(py);
            for x in xs {
                list.append(json_to_py(py, x)?)?;
            }
            list.unbind().into()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, json_to_py(py, x)?)?;
            }
            dict.unbind().into()
        }
    })
}

fn to_py_dict<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let v = serde_json::to_value(value).map_err(err)?;
    json_to_py(py, &v)
}

fn parse_variant(s: &str) -> PyResult<PolicyVariant> {
    s.parse().map_err(PyValueError::new_err)
}

fn parse_json_opt<T: Default + for<'de> serde::Deserialize<'de>>(
    json: Option<&str>,
) -> PyResult<T> {
    match json {
        None => Ok(T::default()),
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

/// A directed semantic action graph over categories, attributes and
/// predicates.
#[pyclass(name = "Graph")]
struct PyGraph {
    inner: SemanticGraph,
}

#[pymethods]
impl PyGraph {
    /// Build from a tab-separated phrase-count file, keeping phrases with
    /// count >= min_count.
    #[staticmethod]
    fn build(counts_path: &str, min_count: u64) -> PyResult<PyGraph> {
        let counts = PhraseCounts::from_path(counts_path).map_err(err)?;
        Ok(PyGraph {
            inner: build_graph(&counts, min_count).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<PyGraph> {
        Ok(PyGraph {
            inner: SemanticGraph::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn stats(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py_dict(py, &self.inner.stats())
    }

    #[getter]
    fn n_categories(&self) -> usize {
        self.inner.n_categories()
    }
    #[getter]
    fn n_attributes(&self) -> usize {
        self.inner.n_attributes()
    }
    #[getter]
    fn n_predicates(&self) -> usize {
        self.inner.n_predicates()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(categories={}, attributes={}, predicates={})",
            self.inner.n_categories(),
            self.inner.n_attributes(),
            self.inner.n_predicates()
        )
    }
}

/// Generate `count` synthetic scenes and write them as JSON lines.
/// `params_json` overrides generator parameter fields.
#[pyfunction]
#[pyo3(signature = (graph, out_path, seed=0, count=100, params_json=None))]
fn gen_scenes(
    graph: &PyGraph,
    out_path: &str,
    seed: u64,
    count: usize,
    params_json: Option<&str>,
) -> PyResult<usize> {
    let params: SynthParams = parse_json_opt(params_json)?;
    let scenes = generate_scene_set(&graph.inner, seed, count, &params).map_err(err)?;
    save_scenes(out_path, &scenes, &graph.inner).map_err(err)?;
    Ok(scenes.len())
}

fn read_scenes(path: &str, graph: &SemanticGraph) -> PyResult<Vec<Scene>> {
    load_scenes(path, graph, None).map_err(err)
}

fn feature_config(d_image: usize, d_instance: usize, d_phrase: usize) -> FeatureConfig {
    FeatureConfig {
        d_image,
        d_instance,
        d_phrase,
    }
}

/// Train a policy on a scene file and write a model checkpoint. Returns the
/// per-epoch metrics as a list of dicts. `config_json` overrides training
/// hyperparameter fields.
#[pyfunction]
#[pyo3(signature = (graph, scenes_path, ckpt_path, variant="vrl", seed=0,
                    config_json=None, d_image=64, d_instance=64, d_phrase=32))]
#[allow(clippy::too_many_arguments)]
fn train_policy(
    py: Python<'_>,
    graph: &PyGraph,
    scenes_path: &str,
    ckpt_path: &str,
    variant: &str,
    seed: u64,
    config_json: Option<&str>,
    d_image: usize,
    d_instance: usize,
    d_phrase: usize,
) -> PyResult<PyObject> {
    let variant = parse_variant(variant)?;
    let cfg: TrainConfig = parse_json_opt(config_json)?;
    let scenes = read_scenes(scenes_path, &graph.inner)?;
    let feat = feature_config(d_image, d_instance, d_phrase);
    let provider = SyntheticProvider::new(feat, seed);
    let agent = Agent::new(&graph.inner, &provider, feat, variant, seed);
    let out = train(&scenes, &agent, &cfg, seed).map_err(err)?;
    let opt = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::sgd(),
        OptimizerKind::RmsProp => Optimizer::new(OptimizerKind::RmsProp, cfg.rms_decay, cfg.rms_eps),
    };
    save_checkpoint(ckpt_path, &out.model, &opt, out.global_steps).map_err(err)?;
    to_py_dict(py, &out.metrics)
}

/// Evaluate a trained checkpoint on a scene file; returns the Recall@K
/// report as a dict. When `train_scenes_path` is given, zero-shot recalls
/// over relationship types unseen in training are included.
#[pyfunction]
#[pyo3(signature = (graph, scenes_path, ckpt_path, variant="vrl", seed=0,
                    train_scenes_path=None, max_steps=300,
                    d_image=64, d_instance=64, d_phrase=32))]
#[allow(clippy::too_many_arguments)]
fn evaluate_policy(
    py: Python<'_>,
    graph: &PyGraph,
    scenes_path: &str,
    ckpt_path: &str,
    variant: &str,
    seed: u64,
    train_scenes_path: Option<&str>,
    max_steps: usize,
    d_image: usize,
    d_instance: usize,
    d_phrase: usize,
) -> PyResult<PyObject> {
    let variant = parse_variant(variant)?;
    let scenes = read_scenes(scenes_path, &graph.inner)?;
    let split = match train_scenes_path {
        Some(p) => Some(zero_shot_split(&read_scenes(p, &graph.inner)?, &scenes)),
        None => None,
    };
    let feat = feature_config(d_image, d_instance, d_phrase);
    let provider = SyntheticProvider::new(feat, seed);
    let agent = Agent::new(&graph.inner, &provider, feat, variant, seed);
    let (model, _, _) = load_checkpoint(ckpt_path).map_err(err)?;
    if model.cfg.state_dim != agent.state_dim() {
        return Err(PyValueError::new_err(format!(
            "checkpoint state dim {} does not match feature dims (expect {})",
            model.cfg.state_dim,
            agent.state_dim()
        )));
    }
    let mut ranked = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let mut rng = substream_indexed(seed, "test-eval", i as u64);
        let episode = agent
            .run_episode(s, &model, Mode::Eval, 0.0, &mut rng, max_steps)
            .map_err(err)?;
        ranked.push(rank_predictions(episode.log.predictions));
    }
    to_py_dict(py, &evaluate_scenes(&scenes, &ranked, split.as_ref()))
}

/// Graph-constrained random-walk baseline on a scene file; returns the
/// Recall@K report as a dict.
#[pyfunction]
#[pyo3(signature = (graph, scenes_path, seed=0))]
fn random_walk_eval(
    py: Python<'_>,
    graph: &PyGraph,
    scenes_path: &str,
    seed: u64,
) -> PyResult<PyObject> {
    let scenes = read_scenes(scenes_path, &graph.inner)?;
    let mut ranked = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let mut rng = substream_indexed(seed, "random-walk", i as u64);
        let log = random_walk_episode(&graph.inner, s, &mut rng).map_err(err)?;
        ranked.push(rank_predictions(log.predictions));
    }
    to_py_dict(py, &evaluate_scenes(&scenes, &ranked, None))
}

#[pymodule]
fn vrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(gen_scenes, m)?)?;
    m.add_function(wrap_pyfunction!(train_policy, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_policy, m)?)?;
    m.add_function(wrap_pyfunction!(random_walk_eval, m)?)?;
    Ok(())
}
