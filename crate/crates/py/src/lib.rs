//! Python bindings for the `vern` slide classifier.
//!
//! ```python
//! import vern_py
//! vern_py.synth("cohort", slides=20, seed=0)
//! model = vern_py.Model(hidden=64, embed=32, seed=1)
//! for row in model.predict_manifest("cohort/manifest.csv"):
//!     print(row["slide_id"], row["prob"])
//! ```

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use vern::data::{load_manifest, read_slide, synth_dataset, DataError, SynthConfig};
use vern::graph::{build_wsi_graph, knn_graph, GraphError, DEFAULT_K};
use vern::metrics::{pr_auc, roc_auc, EvalReport, MetricError};
use vern::model::{load_checkpoint, save_checkpoint, CheckpointError, ModelError};
use vern::train::{dataset_graphs, predict_probs, run_cv_graphs, TrainError};
use vern::{vern_forward, Mode, TrainConfig, VernConfig, VernParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn data_err(e: DataError) -> PyErr {
    match e {
        DataError::Io { .. } | DataError::MissingFeatures { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn graph_err(e: GraphError) -> PyErr {
    match e {
        GraphError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn checkpoint_err(e: CheckpointError) -> PyErr {
    match e {
        CheckpointError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn model_err(e: ModelError) -> PyErr {
    value_err(e)
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::Data(d) => data_err(d),
        TrainError::Graph(g) => graph_err(g),
        other => value_err(other),
    }
}

fn metric_err(e: MetricError) -> PyErr {
    value_err(e)
}

/// Model weights plus the graph neighbourhood size they were trained with.
#[pyclass(module = "vern_py", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    params: VernParams,
}

impl Model {
    fn k(&self) -> usize {
        self.params.notes.get("k").and_then(|k| k.parse().ok()).unwrap_or(DEFAULT_K)
    }
}

#[pymethods]
impl Model {
    /// Freshly initialised weights.
    #[new]
    #[pyo3(signature = (hidden=512, embed=256, seed=0))]
    fn new(hidden: usize, embed: usize, seed: u64) -> PyResult<Self> {
        let params = VernParams::init(VernConfig::with_sizes(hidden, embed), seed).map_err(model_err)?;
        Ok(Self { params })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let params = load_checkpoint(&path).map_err(checkpoint_err)?;
        Ok(Self { params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, &path).map_err(checkpoint_err)
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.params.config.hidden
    }

    #[getter]
    fn embed(&self) -> usize {
        self.params.config.embed
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.param_count()
    }

    #[getter]
    fn notes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in &self.params.notes {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// Scores one slide feature file. Returns the logit, probability,
    /// per-patch contributions and the ids of the top patches.
    #[pyo3(signature = (path, k=None))]
    fn predict_slide<'py>(&self, py: Python<'py>, path: PathBuf, k: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
        let records = read_slide(&path).map_err(data_err)?;
        let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let g = build_wsi_graph(id, &records, k.unwrap_or_else(|| self.k()), None).map_err(graph_err)?;
        let out = vern_forward(&g, &self.params, &mut Mode::Eval).map_err(model_err)?;
        let d = PyDict::new(py);
        d.set_item("logit", out.logit)?;
        d.set_item("prob", out.prob)?;
        d.set_item("patch_ids", g.patch_ids.clone())?;
        d.set_item("contributions", out.contributions)?;
        let top: Vec<u32> = out.top_patches.iter().map(|&i| g.patch_ids[i]).collect();
        d.set_item("top_patches", top)?;
        Ok(d)
    }

    /// Eval-mode probability for every slide of a manifest, in manifest order.
    fn predict_manifest<'py>(&self, py: Python<'py>, manifest: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let ds = load_manifest(&manifest).map_err(data_err)?;
        let k = self.k();
        let probs = py
            .detach(|| {
                let graphs = dataset_graphs(&ds, k)?;
                predict_probs(&self.params, &graphs.iter().collect::<Vec<_>>())
            })
            .map_err(train_err)?;
        ds.entries
            .iter()
            .zip(probs)
            .map(|(e, p)| {
                let d = PyDict::new(py);
                d.set_item("slide_id", &e.slide_id)?;
                d.set_item("prob", p)?;
                d.set_item("label", e.label.map(|l| l.as_u8()))?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(hidden={}, embed={}, params={})",
            self.params.config.hidden,
            self.params.config.embed,
            self.params.param_count()
        )
    }
}

/// Writes a synthetic cohort (feature files, `manifest.csv`, `planted.csv`)
/// into `out` and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, slides=20, seed=0, signal=2.0, min_patches=16, max_patches=48))]
fn synth(out: PathBuf, slides: usize, seed: u64, signal: f64, min_patches: usize, max_patches: usize) -> PyResult<PathBuf> {
    let cfg = SynthConfig {
        n_slides: slides,
        patches_min: min_patches,
        patches_max: max_patches,
        signal_strength: signal,
        seed,
    };
    cfg.validate().map_err(data_err)?;
    std::fs::create_dir_all(&out).map_err(|e| PyIOError::new_err(format!("{}: {e}", out.display())))?;
    synth_dataset(&cfg, &out).map_err(data_err)?;
    Ok(out.join("manifest.csv"))
}

/// Stratified k-fold cross-validation. Returns the per-metric mean and
/// standard deviation plus one trained `Model` per fold.
#[pyfunction]
#[pyo3(signature = (manifest, epochs=200, hidden=512, embed=256, folds=5, seed=0, lr=0.001, k=DEFAULT_K))]
#[allow(clippy::too_many_arguments)]
fn train_cv<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    epochs: usize,
    hidden: usize,
    embed: usize,
    folds: usize,
    seed: u64,
    lr: f64,
    k: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let ds = load_manifest(&manifest).map_err(data_err)?;
    let cfg = TrainConfig {
        model: VernConfig::with_sizes(hidden, embed),
        epochs,
        folds,
        seed,
        lr,
        k,
        ..Default::default()
    };
    cfg.validate().map_err(train_err)?;
    let cv = py
        .detach(|| {
            let graphs = dataset_graphs(&ds, cfg.k)?;
            run_cv_graphs(&ds, &graphs, &cfg)
        })
        .map_err(train_err)?;
    let metrics = PyDict::new(py);
    for (name, ms) in &cv.summary.metrics {
        metrics.set_item(name, (ms.mean, ms.std))?;
    }
    let models: Vec<Model> = cv
        .folds
        .iter()
        .map(|f| {
            let mut params = f.result.params.clone();
            params.notes.insert("k".into(), k.to_string());
            Model { params }
        })
        .collect();
    let d = PyDict::new(py);
    d.set_item("metrics", metrics)?;
    d.set_item("models", models)?;
    Ok(d)
}

/// Rank-based area under the ROC curve.
#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    roc_auc(&scores, &labels).map(|(a, _)| a).map_err(metric_err)
}

/// Average precision.
#[pyfunction]
fn auprc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    pr_auc(&scores, &labels).map(|(a, _)| a).map_err(metric_err)
}

/// Full evaluation report as a dict. Undefined areas come back as `None`.
#[pyfunction]
#[pyo3(signature = (scores, labels, threshold=0.5))]
fn evaluate<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<bool>, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = EvalReport::new(&scores, &labels, threshold).map_err(metric_err)?;
    let d = PyDict::new(py);
    d.set_item("n", r.n)?;
    for (name, v) in r.scalars() {
        d.set_item(name, v)?;
    }
    let c = &r.confusion;
    d.set_item("confusion", (c.tp, c.fp, c.tn, c.fn_))?;
    Ok(d)
}

/// Undirected edges `(i, j)` with `i < j` of the symmetric K-nearest-neighbour graph.
#[pyfunction]
#[pyo3(signature = (coords, k=DEFAULT_K))]
fn knn_edges(coords: Vec<(f64, f64)>, k: usize) -> PyResult<Vec<(usize, usize)>> {
    let pts: Vec<[f64; 2]> = coords.into_iter().map(|(x, y)| [x, y]).collect();
    Ok(knn_graph(&pts, k).map_err(graph_err)?.undirected_edges())
}

#[pymodule]
fn vern_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train_cv, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(auprc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(knn_edges, m)?)?;
    Ok(())
}
