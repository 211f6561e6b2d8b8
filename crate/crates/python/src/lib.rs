//! Python bindings: graphs, datasets, models, training and metrics.

use std::path::PathBuf;

use graphout::graph::tud::load_tudataset;
use graphout::graph::zinc::load_zinc_dataset;
use graphout::graph::{toy::toy_dataset, GraphBatch, Target, Task};
use graphout::layers::ConvKind;
use graphout::model::{GraphModel, ModelSpec};
use graphout::readout::ReadoutKind;
use graphout::rng::{stream, Stream};
use graphout::tensor::Tensor;
use graphout::train::{train_one, Architecture, TrainConfig};
use graphout::{metrics, Error};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn conv_kind(s: &str) -> PyResult<ConvKind> {
    s.parse().map_err(err)
}

fn readout_kind(s: &str) -> PyResult<ReadoutKind> {
    s.parse().map_err(err)
}

fn feature_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    if rows.is_empty() {
        return Ok(Tensor::zeros([0, 0]));
    }
    Tensor::from_rows(&rows).map_err(err)
}

/// A graph with node features, directed edges and a target.
#[pyclass(module = "graphout_py", frozen, from_py_object)]
#[derive(Clone)]
struct Graph {
    inner: graphout::graph::Graph,
}

#[pymethods]
impl Graph {
    /// `target` is a class index (int) or a regression value (float).
    /// With `undirected`, each pair `(u, v)` adds both directions.
    #[new]
    #[pyo3(signature = (features, edges, target, undirected = true))]
    fn new(features: Vec<Vec<f64>>, edges: Vec<(usize, usize)>, target: &Bound<'_, PyAny>, undirected: bool) -> PyResult<Self> {
        let target = match target.extract::<usize>() {
            Ok(c) => Target::Class(c),
            Err(_) => Target::Value(target.extract::<f64>()?),
        };
        let x = feature_tensor(features)?;
        let inner = if undirected {
            graphout::graph::Graph::undirected(x, &edges, target)
        } else {
            graphout::graph::Graph::new(x, edges, target)
        }
        .map_err(err)?;
        Ok(Graph { inner })
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features().to_rows()
    }

    /// Class index or regression value.
    #[getter]
    fn target(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        Ok(match self.inner.target() {
            Target::Class(c) => c.into_pyobject(py)?.into_any().unbind(),
            Target::Value(v) => v.into_pyobject(py)?.into_any().unbind(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.inner.num_nodes(), self.inner.num_edges())
    }
}

/// A named graph collection with its prediction task.
#[pyclass(module = "graphout_py", frozen)]
struct Dataset {
    inner: graphout::graph::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(name: String, graphs: Vec<Graph>) -> PyResult<Self> {
        let inner = graphout::graph::Dataset::new(name, graphs.into_iter().map(|g| g.inner).collect()).map_err(err)?;
        Ok(Dataset { inner })
    }

    /// The built-in toy benchmark.
    #[staticmethod]
    fn toy() -> PyResult<Self> {
        Ok(Dataset { inner: toy_dataset().map_err(err)? })
    }

    /// A TUDataset directory (`<NAME>_A.txt`, `<NAME>_graph_indicator.txt`, ...).
    #[staticmethod]
    fn load_tud(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset { inner: load_tudataset(path).map_err(err)? })
    }

    /// A ZINC directory holding `train.txt`, `val.txt` and `test.txt`.
    #[staticmethod]
    fn load_zinc(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset { inner: load_zinc_dataset(path).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    /// `"binary"`, `"multiclass"` or `"regression"`.
    #[getter]
    fn task(&self) -> &'static str {
        match self.inner.task() {
            Task::Binary => "binary",
            Task::MultiClass(_) => "multiclass",
            Task::Regression => "regression",
        }
    }

    #[getter]
    fn metric_name(&self) -> &'static str {
        self.inner.task().metric_name()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.task().output_dim()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn max_nodes(&self) -> usize {
        self.inner.max_nodes()
    }

    fn graphs(&self) -> Vec<Graph> {
        self.inner.graphs().iter().map(|g| Graph { inner: g.clone() }).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, graphs={}, task={})", self.inner.name, self.inner.len(), self.task())
    }
}

/// Message-passing encoder followed by a readout and a prediction head.
#[pyclass(module = "graphout_py", frozen, unsendable)]
struct Model {
    inner: GraphModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (conv, readout, in_dim, out_dim, d_v = 64, d_g = 128, num_layers = 3, n_max = 64, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        conv: &str,
        readout: &str,
        in_dim: usize,
        out_dim: usize,
        d_v: usize,
        d_g: usize,
        num_layers: usize,
        n_max: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = ModelSpec::new(conv_kind(conv)?, readout_kind(readout)?, in_dim, d_v, d_g, out_dim)
            .with_layers(num_layers)
            .with_n_max(n_max);
        let inner = GraphModel::new(spec, &mut stream(seed, Stream::Init)).map_err(err)?;
        Ok(Model { inner })
    }

    /// Trainable parameters in the whole model.
    #[getter]
    fn param_count(&self) -> usize {
        self.inner.count_parameters()
    }

    /// Trainable parameters in the readout alone.
    #[getter]
    fn readout_param_count(&self) -> usize {
        self.inner.count_readout_parameters()
    }

    /// Eval-mode outputs, one row per graph.
    fn predict(&self, graphs: Vec<Graph>) -> PyResult<Vec<Vec<f64>>> {
        let raw: Vec<_> = graphs.into_iter().map(|g| g.inner).collect();
        let prepared = self.inner.prepare(&raw);
        let b = GraphBatch::new(prepared.iter()).map_err(err)?;
        Ok(self.inner.predict(&b).map_err(err)?.to_rows())
    }
}

/// Outcome of one training run.
#[pyclass(module = "graphout_py", frozen, get_all)]
struct RunResult {
    seed: u64,
    metric_name: String,
    /// NaN when the run failed.
    metric_value: f64,
    best_val_loss: f64,
    best_epoch: usize,
    epochs: usize,
    param_count: usize,
    wall_time_s: f64,
    failure: Option<String>,
    /// `(epoch, train_loss, val_loss, lr)` per epoch.
    history: Vec<(usize, f64, f64, f64)>,
}

#[pymethods]
impl RunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(seed={}, {}={:.4}, epochs={}, params={})",
            self.seed, self.metric_name, self.metric_value, self.epochs, self.param_count
        )
    }
}

/// Trains one model on `dataset` and scores it on the test split.
#[pyfunction]
#[pyo3(signature = (
    dataset, conv = "gin", readout = "sum", *, d_v = 64, d_g = 128, num_layers = 3, seed = 0,
    max_epochs = 200, batch_size = 32, lr = 1e-3, weight_decay = 0.01, patience = 25, min_epochs = 10
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    conv: &str,
    readout: &str,
    d_v: usize,
    d_g: usize,
    num_layers: usize,
    seed: u64,
    max_epochs: usize,
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    patience: usize,
    min_epochs: usize,
) -> PyResult<RunResult> {
    let arch = Architecture::new(conv_kind(conv)?, readout_kind(readout)?, d_v, d_g, num_layers);
    let cfg = TrainConfig {
        batch_size,
        max_epochs,
        lr,
        weight_decay,
        patience,
        min_epochs,
    };
    cfg.validate().map_err(err)?;
    let ds = &dataset.inner;
    let r = py.detach(|| train_one(&arch, &cfg, ds, seed, None)).map_err(err)?;
    Ok(RunResult {
        seed: r.seed,
        metric_name: ds.task().metric_name().to_string(),
        metric_value: r.metric_value,
        best_val_loss: r.best_val_loss,
        best_epoch: r.best_epoch,
        epochs: r.epochs,
        param_count: r.param_count,
        wall_time_s: r.wall_time_s,
        failure: r.failure,
        history: r.history.iter().map(|h| (h.epoch, h.train_loss, h.val_loss, h.lr)).collect(),
    })
}

/// F1 of the positive class (label 1).
#[pyfunction]
fn f1_binary(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    metrics::f1_binary(&pred, &truth).map_err(err)
}

/// Unweighted mean of per-class F1 scores.
#[pyfunction]
fn f1_macro(pred: Vec<usize>, truth: Vec<usize>, num_classes: usize) -> PyResult<f64> {
    metrics::f1_macro(&pred, &truth, num_classes).map_err(err)
}

/// Coefficient of determination.
#[pyfunction]
fn r_squared(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::r_squared(&pred, &truth).map_err(err)
}

/// Readout names accepted by `Model` and `train`.
#[pyfunction]
fn readout_kinds() -> Vec<&'static str> {
    ReadoutKind::ALL.iter().map(|k| k.name()).collect()
}

/// Convolution names accepted by `Model` and `train`.
#[pyfunction]
fn conv_kinds() -> Vec<&'static str> {
    ConvKind::ALL.iter().map(|k| k.name()).collect()
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(f1_binary, m)?)?;
    m.add_function(wrap_pyfunction!(f1_macro, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(readout_kinds, m)?)?;
    m.add_function(wrap_pyfunction!(conv_kinds, m)?)?;
    Ok(())
}

#[pymodule]
fn graphout_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
