//! Python bindings: models, datasets, training and Gamma utilities.

use std::path::PathBuf;

use ltnode::datasets::{gen_foong1d, gen_two_moons};
use ltnode::{checkpoint, rng, Dataset, LatentTimeModel, ModelSpec, Targets, Tensor, TrainConfig, Variant};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: ltnode::Error) -> PyErr {
    match e {
        ltnode::Error::Io(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_variant(name: &str, end_time: f64, a: f64, b: f64) -> PyResult<Variant> {
    match name {
        "node" => Ok(Variant::Node { end_time }),
        "uni_node" => Ok(Variant::UniNode { a, b }),
        "lt_node" => Ok(Variant::LtNode),
        "alt_node" => Ok(Variant::AltNode),
        other => Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if n == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("inputs must be a nonempty rectangular list of rows"));
    }
    Tensor::matrix(n, d, rows.into_iter().flatten().collect()).map_err(err)
}

/// Shape/rate Gamma distribution.
#[pyclass(name = "GammaParams", frozen)]
#[derive(Clone, Copy)]
struct PyGamma(ltnode::GammaParams);

#[pymethods]
impl PyGamma {
    #[new]
    fn new(alpha: f64, beta: f64) -> PyResult<Self> {
        ltnode::GammaParams::new(alpha, beta).map(PyGamma).map_err(err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn mode(&self) -> f64 {
        self.0.mode()
    }

    fn pdf(&self, t: f64) -> PyResult<f64> {
        self.0.pdf(t).map_err(err)
    }

    /// KL(self || prior) in closed form.
    fn kl(&self, prior: &PyGamma) -> f64 {
        ltnode::gamma::gamma_kl(self.0, prior.0)
    }

    fn __repr__(&self) -> String {
        format!("GammaParams(alpha={}, beta={})", self.0.alpha(), self.0.beta())
    }
}

#[pyclass(name = "Dataset")]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (n=1500, noise_std=0.02, seed=0))]
    fn foong1d(n: usize, noise_std: f64, seed: u64) -> PyResult<Self> {
        gen_foong1d(n, noise_std, seed).map(PyDataset).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (n=600, noise_std=0.1, seed=0))]
    fn two_moons(n: usize, noise_std: f64, seed: u64) -> PyResult<Self> {
        gen_two_moons(n, noise_std, seed).map(PyDataset).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, classification=false))]
    fn read_csv(path: PathBuf, classification: bool) -> PyResult<Self> {
        Dataset::read_csv(path, classification).map(PyDataset).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn inputs(&self) -> Vec<Vec<f64>> {
        (0..self.0.len()).map(|i| self.0.inputs().row(i).to_vec()).collect()
    }

    /// Class indices for classification data, reals for regression.
    fn targets(&self, py: Python<'_>) -> PyResult<PyObject> {
        Ok(match self.0.targets() {
            Targets::Classes(c) => c.clone().into_pyobject(py)?.into_any().unbind(),
            Targets::Values(v) => v.clone().into_pyobject(py)?.into_any().unbind(),
        })
    }
}

#[pyclass(name = "Model")]
struct PyModel(LatentTimeModel);

#[pymethods]
impl PyModel {
    /// Model from a JSON model spec.
    #[staticmethod]
    #[pyo3(signature = (spec_json, seed=0))]
    fn from_spec(spec_json: &str, seed: u64) -> PyResult<Self> {
        let spec: ModelSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        LatentTimeModel::build(spec, seed).map(PyModel).map_err(err)
    }

    /// 1-D regression architecture.
    #[staticmethod]
    #[pyo3(signature = (variant="lt_node", seed=0, end_time=1.0, a=0.0, b=3.0))]
    fn regression(variant: &str, seed: u64, end_time: f64, a: f64, b: f64) -> PyResult<Self> {
        let v = parse_variant(variant, end_time, a, b)?;
        LatentTimeModel::build(ModelSpec::regression(v), seed).map(PyModel).map_err(err)
    }

    /// Small classifier architecture.
    #[staticmethod]
    #[pyo3(signature = (input_dim, classes, variant="lt_node", seed=0, end_time=1.0, a=0.0, b=3.0))]
    fn classifier(input_dim: usize, classes: usize, variant: &str, seed: u64, end_time: f64, a: f64, b: f64) -> PyResult<Self> {
        let v = parse_variant(variant, end_time, a, b)?;
        LatentTimeModel::build(ModelSpec::classifier(input_dim, classes, v), seed)
            .map(PyModel)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load(&path).map(|(m, _)| PyModel(m)).map_err(err)
    }

    #[pyo3(signature = (path, iteration=0))]
    fn save(&self, path: PathBuf, iteration: usize) -> PyResult<()> {
        checkpoint::save(&self.0, iteration, "", &path).map_err(err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.0.spec().variant.name()
    }

    #[getter]
    fn num_scalars(&self) -> usize {
        self.0.num_scalars()
    }

    fn spec_json(&self) -> PyResult<String> {
        serde_json::to_string(self.0.spec()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Learned end-time posterior of `lt_node`.
    fn posterior(&self) -> PyResult<PyGamma> {
        self.0.variational().map(PyGamma).map_err(err)
    }

    /// Per-input posteriors of `alt_node`.
    fn infer_posteriors(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<PyGamma>> {
        let x = matrix(x)?;
        let qs = self.0.infer_endtime_posterior_batch(&x).map_err(err)?;
        Ok(qs.into_iter().map(PyGamma).collect())
    }

    /// Outputs (probabilities or regression values) at sorted end times.
    fn forward_at_times(&self, x: Vec<f64>, times: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.0.forward_at_times(&x, &times).map_err(err)
    }

    /// Monte Carlo prediction over `samples` end times per row. Returns one
    /// dict per row with `mean`, `std` (regression only) and `times`.
    #[pyo3(signature = (x, samples=10, seed=0))]
    fn predict<'py>(&self, py: Python<'py>, x: Vec<Vec<f64>>, samples: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let x = matrix(x)?;
        let mut r = rng::stream(seed, rng::Purpose::Evaluation);
        let preds = self.0.predict_batch(&x, samples, &mut r).map_err(err)?;
        preds
            .into_iter()
            .map(|p| {
                let d = PyDict::new(py);
                d.set_item("mean", p.mean)?;
                d.set_item("std", p.std)?;
                d.set_item("times", p.times)?;
                Ok(d)
            })
            .collect()
    }

    /// Fit on `data`; `config_json` holds `TrainConfig` fields (defaults
    /// otherwise). Returns the loss trace as dicts.
    #[pyo3(signature = (data, config_json=None))]
    fn train<'py>(&mut self, py: Python<'py>, data: &PyDataset, config_json: Option<&str>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg: TrainConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => TrainConfig::default(),
        };
        let report = ltnode::training::train(&mut self.0, &data.0, &cfg, None).map_err(err)?;
        report
            .trace
            .into_iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("iteration", r.iteration)?;
                d.set_item("negative_elbo", r.negative_elbo)?;
                d.set_item("alpha_q", r.alpha_q)?;
                d.set_item("beta_q", r.beta_q)?;
                Ok(d)
            })
            .collect()
    }
}

/// Closed-form KL(q || p) between Gamma distributions.
#[pyfunction]
fn gamma_kl(q: &PyGamma, p: &PyGamma) -> f64 {
    ltnode::gamma::gamma_kl(q.0, p.0)
}

#[pymodule]
fn ltnode_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGamma>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gamma_kl, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
