//! Python bindings: tensors, synthetic datasets, models, training,
//! evaluation, checkpoints and gradient checks.

use oncovit::data::{generate_dataset, Dataset, Pattern, PreprocessSpec, SyntheticSpec};
use oncovit::models::{gradcheck_kind, Model, ModelConfig, ModelKind};
use oncovit::train::{evaluate, train, Checkpoint, MetricsRecord, TrainConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError, PyOSError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(oncovit, OncovitError, PyException);

fn to_py(e: oncovit::Error) -> PyErr {
    match e {
        oncovit::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => OncovitError::new_err(other.to_string()),
    }
}

/// Dense row-major f64 tensor.
#[pyclass(name = "Tensor", module = "oncovit", skip_from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: oncovit::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f64>, shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: oncovit::Tensor::new(shape, data).map_err(to_py)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Preprocessed images with integer labels.
#[pyclass(name = "Dataset", module = "oncovit", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn image(&self, index: usize) -> PyResult<PyTensor> {
        self.inner
            .images
            .get(index)
            .map(|t| PyTensor { inner: t.clone() })
            .ok_or_else(|| PyIndexError::new_err(format!("index {index} out of range")))
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyIndexError::new_err(format!("index {bad} out of range")));
        }
        Ok(Self {
            inner: self.inner.subset(&indices),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Renders a seeded synthetic dataset in memory.
#[pyfunction]
#[pyo3(signature = (pattern="stripes", num_classes=3, per_class=20, image_size=32, channels=3, noise=0.1, seed=0, angle_offset=0.0, angle_span=None, name="synthetic"))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    pattern: &str,
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    channels: usize,
    noise: f64,
    seed: u64,
    angle_offset: f64,
    angle_span: Option<f64>,
    name: &str,
) -> PyResult<PyDataset> {
    let spec = SyntheticSpec {
        name: name.into(),
        pattern: pattern.parse::<Pattern>().map_err(to_py)?,
        num_classes,
        samples_per_class: per_class,
        image_size,
        channels,
        noise,
        angle_offset,
        angle_span,
        seed,
    };
    let pre = PreprocessSpec {
        size: image_size,
        ..Default::default()
    };
    Ok(PyDataset {
        inner: generate_dataset(&spec, &pre).map_err(to_py)?,
    })
}

fn record_dict<'py>(py: Python<'py>, r: &MetricsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("model", &r.model)?;
    d.set_item("dataset", &r.dataset)?;
    d.set_item("epoch", r.epoch)?;
    d.set_item("split", r.split.as_str())?;
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("loss", r.loss)?;
    Ok(d)
}

/// A ViT or CNN classifier.
#[pyclass(name = "Model", module = "oncovit")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (kind="vit", image_size=32, channels=3, num_classes=3, seed=0))]
    fn new(kind: &str, image_size: usize, channels: usize, num_classes: usize, seed: u64) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(to_py)?;
        let config = ModelConfig::for_kind(kind, image_size, channels, num_classes);
        Ok(Self {
            inner: Model::build(config, seed).map_err(to_py)?,
        })
    }

    /// Loads a checkpoint written by `save` or the command line tool.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path.as_ref()).map_err(to_py)?;
        Ok(Self {
            inner: ck.to_model().map_err(to_py)?,
        })
    }

    #[pyo3(signature = (path, seed=0, epochs=0, source=""))]
    fn save(&self, path: &str, seed: u64, epochs: usize, source: &str) -> PyResult<()> {
        let ck = Checkpoint::from_model(&self.inner, seed, epochs, source, Default::default());
        ck.save(path.as_ref()).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params().num_scalars()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.params().names()
    }

    fn replace_head(&mut self, num_classes: usize, seed: u64) -> PyResult<()> {
        self.inner.replace_head(num_classes, seed).map_err(to_py)
    }

    /// Class probabilities and predicted label for one `C×H×W` image.
    fn classify(&self, image: &PyTensor) -> PyResult<(Vec<f64>, usize)> {
        self.inner.classify(&image.inner).map_err(to_py)
    }

    /// Trains in place and returns one dict per epoch and split.
    #[pyo3(signature = (train_set, val_set, epochs=10, batch_size=75, lr=0.001, seed=0, freeze_backbone=false))]
    #[allow(clippy::too_many_arguments)]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        train_set: &PyDataset,
        val_set: &PyDataset,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
        freeze_backbone: bool,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = TrainConfig {
            epochs,
            batch_size,
            lr,
            seed,
            freeze_backbone,
            ..Default::default()
        };
        let model = &mut self.inner;
        let history = py
            .detach(|| train(model, &train_set.inner, &val_set.inner, &cfg))
            .map_err(to_py)?;
        history.iter().map(|r| record_dict(py, r)).collect()
    }

    /// Returns `(accuracy, mean loss, confusion matrix rows)`.
    fn evaluate(&self, data: &PyDataset) -> PyResult<(f64, f64, Vec<Vec<u64>>)> {
        let (record, cm) = evaluate(&self.inner, &data.inner).map_err(to_py)?;
        let rows = (0..cm.classes())
            .map(|t| (0..cm.classes()).map(|p| cm.get(t, p)).collect())
            .collect();
        Ok((record.accuracy, record.loss, rows))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={}, classes={}, params={})",
            self.inner.kind(),
            self.inner.num_classes(),
            self.inner.params().num_scalars()
        )
    }
}

/// Finite-difference check of a model family; returns
/// `(max_rel_err, entries_checked, worst_param)`.
#[pyfunction]
#[pyo3(signature = (kind="vit", seed=1, max_entries=None))]
fn gradcheck(py: Python<'_>, kind: &str, seed: u64, max_entries: Option<usize>) -> PyResult<(f64, usize, Option<String>)> {
    let kind: ModelKind = kind.parse().map_err(to_py)?;
    let max_entries = max_entries.or((kind == ModelKind::Vit).then_some(24));
    let (report, worst) = py.detach(|| gradcheck_kind(kind, seed, max_entries)).map_err(to_py)?;
    Ok((report.max_rel_err, report.entries_checked, worst))
}

#[pymodule]
fn oncovit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OncovitError", m.py().get_type::<OncovitError>())?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
