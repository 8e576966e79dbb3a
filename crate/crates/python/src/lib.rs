//! Python bindings for `misd-core`.
//!
//! ```python
//! import misd
//! misd.gen_synth("data", classes=4, per_class=8)
//! model = misd.Model.train("data", shots=4, epochs=10)
//! report = model.evaluate("data")
//! ```

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use misd_core::data_io;
use misd_core::gradcheck::GradCheckOptions;
use misd_core::losses;
use misd_core::metrics::{self, MisDReport, ScoredPrediction, ScoresKind, REPORT_FIELDS};
use misd_core::trainer::{self, Backbone, TrainConfig, TrainedModel};
use misd_core::{Embedding, MisdError};

create_exception!(misd, MisdException, PyException, "Raised for any misd-core failure.");

fn err(e: MisdError) -> PyErr {
    MisdException::new_err(e.to_string())
}

fn embedding(values: Vec<f64>) -> PyResult<Embedding> {
    Embedding::new(values).map_err(err)
}

fn embeddings(rows: Vec<Vec<f64>>) -> PyResult<Vec<Embedding>> {
    rows.into_iter().map(embedding).collect()
}

fn report_dict<'py>(py: Python<'py>, report: &MisDReport) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    for (name, value) in REPORT_FIELDS.iter().zip(report.values()) {
        dict.set_item(*name, value)?;
    }
    Ok(dict)
}

/// Backbone stored next to a gen-synth dataset, else the default one.
fn backbone_for(data: &std::path::Path) -> PyResult<Backbone> {
    let path = data.join("backbone.json");
    if path.is_file() {
        trainer::read_backbone(&path).map_err(err)
    } else {
        Ok(Backbone::default())
    }
}

/// A trained prompt model.
#[pyclass(name = "Model", module = "misd", frozen)]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    /// Loads a model file written by `misd train` or `Model.save`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: trainer::read_model(&path).map_err(err)? })
    }

    /// Trains on the `train` split of a gen-synth directory.
    #[staticmethod]
    #[pyo3(signature = (data, shots=16, epochs=30, seed=0, lr=None, lambda_neg=None, lambda_orth=None, crops=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        data: PathBuf,
        shots: usize,
        epochs: usize,
        seed: u64,
        lr: Option<f64>,
        lambda_neg: Option<f64>,
        lambda_orth: Option<f64>,
        crops: Option<usize>,
    ) -> PyResult<Self> {
        let mut config = TrainConfig { shots, epochs, seed, ..TrainConfig::default() };
        config.lr = lr.unwrap_or(config.lr);
        config.loss.lambda_neg = lambda_neg.unwrap_or(config.loss.lambda_neg);
        config.loss.lambda_orth = lambda_orth.unwrap_or(config.loss.lambda_orth);
        config.crop.k = crops.unwrap_or(config.crop.k);
        let backbone = backbone_for(&data)?;
        let images = data_io::read_images(&data.join("train.misdimg")).map_err(err)?;
        let inner = py.detach(|| trainer::train(&images, &config, &backbone)).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::write_model(&path, &self.inner).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.bank.class_names.clone()
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }

    /// Per-epoch `(ce, neg, orth, total)` losses.
    #[getter]
    fn loss_trace(&self) -> Vec<(f64, f64, f64, f64)> {
        self.inner.trace.iter().map(|r| (r.ce, r.neg, r.orth, r.total)).collect()
    }

    #[getter]
    fn class_features(&self) -> Vec<Vec<f64>> {
        self.inner.class_features.iter().map(|e| e.as_slice().to_vec()).collect()
    }

    /// Returns `(predicted class, confidence, probabilities)` for one image embedding.
    fn predict(&self, embedding_values: Vec<f64>) -> PyResult<(usize, f64, Vec<f64>)> {
        let p = self.inner.predict(&embedding(embedding_values)?).map_err(err)?;
        Ok((p.predicted, p.confidence, p.probabilities))
    }

    /// Scores the `val` split of a gen-synth directory and returns the report.
    fn evaluate<'py>(&self, py: Python<'py>, data: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let report = py
            .detach(|| {
                let images = data_io::read_images(&data.join("val.misdimg"))?;
                let val = trainer::embed_for_eval(&images, &self.inner.backbone)?;
                metrics::full_report(&trainer::score_embeddings(&self.inner, &val)?, ScoresKind::Classified)
            })
            .map_err(err)?;
        report_dict(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(classes={}, embed_dim={}, epochs={})",
            self.inner.num_classes(),
            self.inner.embed_dim(),
            self.inner.trace.len()
        )
    }
}

/// Writes a synthetic benchmark (images, embeddings and backbone) to `out`.
#[pyfunction]
#[pyo3(signature = (out, classes=10, per_class=20, seed=0, crops=8))]
fn gen_synth(py: Python<'_>, out: PathBuf, classes: usize, per_class: usize, seed: u64, crops: usize) -> PyResult<()> {
    let args = [
        "misd".to_string(),
        "gen-synth".into(),
        "--classes".into(),
        classes.to_string(),
        "--per-class".into(),
        per_class.to_string(),
        "--seed".into(),
        seed.to_string(),
        "--crops".into(),
        crops.to_string(),
        "--out".into(),
        out.to_string_lossy().into_owned(),
    ];
    py.detach(|| misd_core::cli::run(args)).map_err(err)
}

/// Full misclassification-detection report for classified predictions.
#[pyfunction]
fn report<'py>(
    py: Python<'py>,
    confidences: Vec<f64>,
    predicted: Vec<usize>,
    labels: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    if confidences.len() != predicted.len() || confidences.len() != labels.len() {
        return Err(MisdException::new_err("confidences, predicted and labels differ in length"));
    }
    let preds: Vec<ScoredPrediction> = confidences
        .iter()
        .zip(&predicted)
        .zip(&labels)
        .map(|((&c, &p), &l)| ScoredPrediction::classified(c, p, l))
        .collect();
    report_dict(py, &metrics::full_report(&preds, ScoresKind::Classified).map_err(err)?)
}

/// Report for binary `(confidence, correct)` scores; class-dependent fields are `None`.
#[pyfunction]
fn binary_report<'py>(py: Python<'py>, confidences: Vec<f64>, correct: Vec<bool>) -> PyResult<Bound<'py, PyDict>> {
    if confidences.len() != correct.len() {
        return Err(MisdException::new_err("confidences and correct differ in length"));
    }
    let preds: Vec<ScoredPrediction> =
        confidences.iter().zip(&correct).map(|(&c, &ok)| ScoredPrediction::binary(c, ok)).collect();
    report_dict(py, &metrics::full_report(&preds, ScoresKind::Binary).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (query, class_features, label, temperature=1.0))]
fn ce_loss(query: Vec<f64>, class_features: Vec<Vec<f64>>, label: usize, temperature: f64) -> PyResult<f64> {
    losses::ce_loss(&embedding(query)?, &embeddings(class_features)?, label, temperature).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pseudo, class_features, negative_features, temperature=1.0))]
fn neg_loss(
    pseudo: Vec<f64>,
    class_features: Vec<Vec<f64>>,
    negative_features: Vec<Vec<f64>>,
    temperature: f64,
) -> PyResult<f64> {
    losses::neg_loss(&embedding(pseudo)?, &embeddings(class_features)?, &embeddings(negative_features)?, temperature)
        .map_err(err)
}

#[pyfunction]
fn orth_loss(negative_features: Vec<Vec<f64>>) -> PyResult<f64> {
    losses::orth_loss(&embeddings(negative_features)?).map_err(err)
}

/// Runs the finite-difference gradient check; returns `(passed, worst relative error)`.
#[pyfunction]
#[pyo3(signature = (trials=100, seed=0))]
fn gradcheck(py: Python<'_>, trials: usize, seed: u64) -> PyResult<(bool, f64)> {
    let options = GradCheckOptions { trials, seed, ..GradCheckOptions::default() };
    let report = py.detach(|| misd_core::gradcheck::run(&options)).map_err(err)?;
    Ok((report.passed(), report.worst.relative_error))
}

#[pymodule]
pub fn misd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MisdError", m.py().get_type::<MisdException>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gen_synth, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(binary_report, m)?)?;
    m.add_function(wrap_pyfunction!(ce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(neg_loss, m)?)?;
    m.add_function(wrap_pyfunction!(orth_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
