//! Python bindings: graph loading and construction, synthetic data,
//! prediction, metrics and influence scores.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use msgcn::features::FeatureDir;
use msgcn::train::load_model;
use msgcn::{Error, MultiScaleGraph, SyntheticDatasetSpec, Task};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A multi-magnification slide graph.
#[pyclass(name = "Graph", module = "msgcn_py", frozen)]
pub struct PyGraph {
    inner: MultiScaleGraph,
}

#[pymethods]
impl PyGraph {
    /// Reads a `.msgg` file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        msgcn::load_graph(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        msgcn::save_graph(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn wsi_id(&self) -> &str {
        &self.inner.wsi_id
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn level_magnifications(&self) -> Vec<f32> {
        self.inner.level_magnifications.clone()
    }

    fn level_counts(&self) -> Vec<usize> {
        self.inner.level_counts()
    }

    /// `(mag_level, row, col)` per vertex, in index order.
    fn vertices(&self) -> Vec<(u32, u32, u32)> {
        self.inner
            .vertices
            .iter()
            .map(|v| (v.mag_level, v.row, v.col))
            .collect()
    }

    /// Undirected edges `(i, j, kind)` with `i < j`.
    fn edges(&self) -> Vec<(usize, usize, &'static str)> {
        self.inner
            .edges()
            .map(|(i, j, k)| {
                let kind = match k {
                    msgcn::EdgeKind::Spatial => "spatial",
                    msgcn::EdgeKind::Magnification => "magnification",
                };
                (i, j, kind)
            })
            .collect()
    }

    fn features(&self, vertex: usize) -> PyResult<Vec<f32>> {
        if vertex >= self.inner.num_vertices() {
            return Err(PyValueError::new_err(format!("vertex {vertex} out of range")));
        }
        Ok(self.inner.feature_row(vertex).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(wsi_id={:?}, vertices={}, edges={})",
            self.inner.wsi_id,
            self.inner.num_vertices(),
            self.inner.num_edges()
        )
    }
}

/// A trained network loaded from a `.msgp` file and its `.json` sidecar.
#[pyclass(name = "Model", module = "msgcn_py", frozen)]
pub struct PyModel {
    inner: msgcn::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_model(path).map(|(inner, _)| Self { inner }).map_err(to_py)
    }

    /// A freshly initialised network.
    #[staticmethod]
    #[pyo3(signature = (input_dim, seed, hidden_dim = 64, num_layers = 3, num_classes = 2))]
    fn init(input_dim: usize, seed: u64, hidden_dim: usize, num_layers: usize, num_classes: usize) -> PyResult<Self> {
        let cfg = msgcn::ModelConfig {
            hidden_dim,
            num_layers,
            ..msgcn::ModelConfig::new(input_dim, num_classes)
        };
        msgcn::Model::init(cfg, seed).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn num_params(&self) -> usize {
        msgcn::count_params(&self.inner.config)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner.config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }

    /// Eval-mode class probabilities and attention weights for one graph.
    fn predict(&self, py: Python<'_>, graph: &PyGraph) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let r = py
            .detach(|| self.inner.forward(&graph.inner, msgcn::Mode::Eval))
            .map_err(to_py)?;
        Ok((r.probabilities(), r.attention))
    }

    /// Influence report over `graphs` as a dict.
    #[pyo3(signature = (graphs, dataset_id = "dataset"))]
    fn influence<'py>(
        &self,
        py: Python<'py>,
        graphs: Vec<PyRef<'py, PyGraph>>,
        dataset_id: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let gs: Vec<&MultiScaleGraph> = graphs.iter().map(|g| &g.inner).collect();
        let report = py
            .detach(|| {
                let att = gs
                    .iter()
                    .map(|g| self.inner.forward(g, msgcn::Mode::Eval).map(|r| r.attention))
                    .collect::<msgcn::Result<Vec<_>>>()?;
                let pairs: Vec<_> = gs.iter().zip(&att).map(|(g, z)| (*g, z.as_slice())).collect();
                msgcn::influence_scores(&pairs, dataset_id)
            })
            .map_err(to_py)?;
        let text = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }
}

/// Builds one graph per slide of a tile manifest.
#[pyfunction]
#[pyo3(signature = (manifest, features_dir = None))]
fn build_graphs(py: Python<'_>, manifest: PathBuf, features_dir: Option<PathBuf>) -> PyResult<Vec<PyGraph>> {
    let root = features_dir
        .or_else(|| manifest.parent().map(PathBuf::from))
        .unwrap_or_default();
    py.detach(|| {
        let by_wsi = msgcn::parse_manifest(&manifest)?;
        let provider = FeatureDir::new(root);
        by_wsi
            .values()
            .map(|tiles| msgcn::build_graph(tiles, &provider).map(|inner| PyGraph { inner }))
            .collect::<msgcn::Result<Vec<_>>>()
    })
    .map_err(to_py)
}

/// Writes a synthetic dataset and returns `{manifest, labels, feature_files}`.
#[pyfunction]
#[pyo3(signature = (out_dir, seed, task = "structure", num_wsis = 40, dim = 64))]
fn generate_synthetic<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    seed: u64,
    task: &str,
    num_wsis: usize,
    dim: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SyntheticDatasetSpec {
        task: task.parse::<Task>().map_err(to_py)?,
        num_wsis,
        dim,
        seed,
        ..Default::default()
    };
    let out = py
        .detach(|| msgcn::features::generate_synthetic(&spec, &out_dir))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("manifest", out.manifest)?;
    d.set_item("labels", out.labels)?;
    d.set_item("feature_files", out.feature_files)?;
    Ok(d)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<usize>) -> PyResult<f64> {
    msgcn::auroc(&scores, &labels).map_err(to_py)
}

#[pyfunction]
fn qwk(pred: Vec<usize>, truth: Vec<usize>, num_classes: usize) -> PyResult<f64> {
    msgcn::qwk(&pred, &truth, num_classes).map_err(to_py)
}

/// Learnable scalars of a network with the given shape.
#[pyfunction]
#[pyo3(signature = (input_dim, hidden_dim = 64, num_layers = 3, num_classes = 2))]
fn count_params(input_dim: usize, hidden_dim: usize, num_layers: usize, num_classes: usize) -> PyResult<usize> {
    let cfg = msgcn::ModelConfig {
        hidden_dim,
        num_layers,
        ..msgcn::ModelConfig::new(input_dim, num_classes)
    };
    cfg.validate().map_err(to_py)?;
    Ok(msgcn::count_params(&cfg))
}

#[pymodule]
fn msgcn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(build_graphs, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(qwk, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    Ok(())
}
