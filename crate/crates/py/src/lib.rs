//! Python bindings: thin wrappers over the descriptor pipeline, the SVM,
//! the fidelity kernel, and the variational classifier forward pass. Rows
//! travel as plain lists of floats; every library error surfaces as
//! `ValueError` with the original message.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use qspectra::corpus::{self, SurrogateParams};
use qspectra::features;
use qspectra::qkernel::{self, FeatureMapSpec};
use qspectra::qnn::{self, AnsatzSpec};
use qspectra::spectra::{self, Excitation, ExcitationSpectrum};
use qspectra::svm::{self, GammaSpec, KernelSpec, SvmParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Gaussian-broaden discrete lines onto `grid`; returns the profile values.
#[pyfunction]
fn broaden(
    omegas_ev: Vec<f64>,
    strengths: Vec<f64>,
    grid_ev: Vec<f64>,
    sigma_ev: f64,
) -> PyResult<Vec<f64>> {
    if omegas_ev.len() != strengths.len() {
        return Err(PyValueError::new_err("omegas_ev and strengths must have equal length"));
    }
    let lines: Vec<Excitation> = omegas_ev
        .into_iter()
        .zip(strengths)
        .map(|(omega_ev, strength)| Excitation { omega_ev, strength })
        .collect();
    let spectrum = ExcitationSpectrum::new(lines).map_err(value_err)?;
    let profile = spectra::broaden(&spectrum, &grid_ev, sigma_ev).map_err(value_err)?;
    Ok(profile.values)
}

/// Refractive index and extinction coefficient from ε₁ + iε₂.
#[pyfunction]
fn nk_from_dielectric(eps1: f64, eps2: f64) -> PyResult<(f64, f64)> {
    spectra::nk_from_dielectric(eps1, eps2).map_err(value_err)
}

/// ε₁ and ε₂ from n + iκ.
#[pyfunction]
fn dielectric_from_nk(n: f64, kappa: f64) -> PyResult<(f64, f64)> {
    spectra::dielectric_from_nk(n, kappa).map_err(value_err)
}

/// Absorption coefficient in cm⁻¹ at the given photon energy.
#[pyfunction]
fn absorption_coefficient(kappa: f64, energy_ev: f64) -> PyResult<f64> {
    spectra::absorption_coefficient(kappa, energy_ev).map_err(value_err)
}

/// Power transform of one positive value.
#[pyfunction]
fn boxcox(z: f64, lam: f64) -> PyResult<f64> {
    features::boxcox(z, lam).map_err(value_err)
}

/// Maximum-likelihood power transform fitted to one column.
#[pyclass(name = "BoxCox")]
struct PyBoxCox {
    inner: features::BoxCox,
}

#[pymethods]
impl PyBoxCox {
    #[staticmethod]
    fn fit(column: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: features::BoxCox::fit(&column).map_err(value_err)? })
    }

    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    fn shift(&self) -> f64 {
        self.inner.shift()
    }

    fn apply(&self, column: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.apply(&column).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("BoxCox(lam={:.6}, shift={:.3e})", self.inner.lambda(), self.inner.shift())
    }
}

/// Per-column Box-Cox + standardization, fitted on training rows.
#[pyclass(name = "FeaturePipeline")]
struct PyFeaturePipeline {
    inner: features::FeaturePipeline,
}

#[pymethods]
impl PyFeaturePipeline {
    #[staticmethod]
    fn fit(x: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: features::FeaturePipeline::fit(&x).map_err(value_err)? })
    }

    fn transform(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.transform(&x).map_err(value_err)
    }

    fn n_features(&self) -> usize {
        self.inner.n_features()
    }
}

/// Feature indices ordered by linear-SVM weight magnitude, as
/// `(index, weight)` pairs, strongest first.
#[pyfunction]
#[pyo3(signature = (x, y, c = 1.0))]
fn rank_features(x: Vec<Vec<f64>>, y: Vec<i8>, c: f64) -> PyResult<Vec<(usize, f64)>> {
    let ranked = features::rank_features(&x, &y, c).map_err(value_err)?;
    Ok(ranked.into_iter().map(|r| (r.index, r.weight)).collect())
}

/// Soft-margin RBF classifier trained with SMO. Labels are ±1.
#[pyclass(name = "Svm")]
struct PySvm {
    inner: svm::SvmModel,
}

#[pymethods]
impl PySvm {
    /// Train on rows `x` with labels `y`; `gamma = None` uses the
    /// `1 / (n_features · Var(X))` heuristic.
    #[staticmethod]
    #[pyo3(signature = (x, y, c = 1.0, gamma = None))]
    fn train(x: Vec<Vec<f64>>, y: Vec<i8>, c: f64, gamma: Option<f64>) -> PyResult<Self> {
        let kernel = match gamma {
            Some(g) => KernelSpec::Rbf { gamma: GammaSpec::Value(g) },
            None => KernelSpec::Rbf { gamma: GammaSpec::Scale },
        };
        let params = SvmParams { kernel, c, ..SvmParams::default() };
        Ok(Self { inner: svm::train(&x, &y, &params).map_err(value_err)? })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<i8>> {
        self.inner.predict_batch(&x).map_err(value_err)
    }

    fn decision(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.decision_batch(&x).map_err(value_err)
    }

    fn n_support(&self) -> usize {
        self.inner.n_support()
    }

    fn bias(&self) -> f64 {
        self.inner.bias()
    }
}

/// Fidelity kernel |⟨Φ(x)|Φ(y)⟩|² from exact statevectors.
#[pyfunction]
#[pyo3(signature = (x, y, reps = 1))]
fn kernel_exact(x: Vec<f64>, y: Vec<f64>, reps: usize) -> PyResult<f64> {
    let spec = FeatureMapSpec::new(x.len(), reps).map_err(value_err)?;
    qkernel::kernel_exact(&x, &y, &spec).map_err(value_err)
}

/// Shot-sampled fidelity kernel under per-gate depolarizing noise.
#[pyfunction]
#[pyo3(signature = (x, y, shots, noise_p = 0.0, seed = 0, reps = 1))]
fn kernel_shots(
    x: Vec<f64>,
    y: Vec<f64>,
    shots: u64,
    noise_p: f64,
    seed: u64,
    reps: usize,
) -> PyResult<f64> {
    let spec = FeatureMapSpec::new(x.len(), reps).map_err(value_err)?;
    qkernel::kernel_shots(&x, &y, &spec, shots, noise_p, seed).map_err(value_err)
}

/// Exact kernel matrix of `rows`, as nested lists.
#[pyfunction]
#[pyo3(signature = (rows, reps = 1))]
fn gram_exact(rows: Vec<Vec<f64>>, reps: usize) -> PyResult<Vec<Vec<f64>>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("rows must be non-empty"));
    }
    let spec = FeatureMapSpec::new(rows[0].len(), reps).map_err(value_err)?;
    let ids: Vec<String> = (0..rows.len()).map(|i| i.to_string()).collect();
    let gram = qkernel::gram_exact(&rows, &ids, &spec).map_err(value_err)?;
    Ok((0..rows.len()).map(|r| gram.row(r).to_vec()).collect())
}

/// Class probabilities of the variational classifier: encode `x`, apply the
/// ansatz with angles `theta`, read out parity.
#[pyfunction]
#[pyo3(signature = (x, theta, layers = 4, final_rotation_layer = false))]
fn qnn_forward(
    x: Vec<f64>,
    theta: Vec<f64>,
    layers: usize,
    final_rotation_layer: bool,
) -> PyResult<(f64, f64)> {
    let map = FeatureMapSpec::new(x.len(), 1).map_err(value_err)?;
    let ansatz = AnsatzSpec::new(x.len(), layers, final_rotation_layer).map_err(value_err)?;
    let p = qnn::qnn_forward(&x, &theta, &map, &ansatz).map_err(value_err)?;
    Ok((p[0], p[1]))
}

/// Default two-system surrogate corpus: `(feature_names, rows, labels)`.
#[pyfunction]
#[pyo3(signature = (seed, sigma_ev = 0.1))]
fn surrogate_dataset(seed: u64, sigma_ev: f64) -> PyResult<(Vec<String>, Vec<Vec<f64>>, Vec<u8>)> {
    let params = SurrogateParams::default();
    let dataset = corpus::surrogate_dataset(&params, sigma_ev, seed).map_err(value_err)?;
    Ok((dataset.feature_names, dataset.rows, dataset.labels))
}

#[pymodule]
fn qspectra_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(broaden, m)?)?;
    m.add_function(wrap_pyfunction!(nk_from_dielectric, m)?)?;
    m.add_function(wrap_pyfunction!(dielectric_from_nk, m)?)?;
    m.add_function(wrap_pyfunction!(absorption_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(boxcox, m)?)?;
    m.add_function(wrap_pyfunction!(rank_features, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_exact, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_shots, m)?)?;
    m.add_function(wrap_pyfunction!(gram_exact, m)?)?;
    m.add_function(wrap_pyfunction!(qnn_forward, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_dataset, m)?)?;
    m.add_class::<PyBoxCox>()?;
    m.add_class::<PyFeaturePipeline>()?;
    m.add_class::<PySvm>()?;
    Ok(())
}
