//! Python bindings. Matrices and samples cross the boundary as lists of rows.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use ensemble_copula::bma::{MarginalModel, PredictiveMarginal, TrainingSet, Variable};
use ensemble_copula::copula::{self, CorrelationMatrix, JointSample, LatentRecord, LatentValue};
use ensemble_copula::data::{generate_synthetic, save_dataset, SyntheticSpec};
use ensemble_copula::numerics::{self as num, Matrix, RngStream};
use ensemble_copula::pipeline::{self, RunConfig};
use ensemble_copula::verification as ver;
use ensemble_copula::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Dependency { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ensemble_copula::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn parse_variable(name: &str) -> PyResult<Variable> {
    name.parse().py()
}

fn sample(rows: Vec<Vec<f64>>) -> PyResult<JointSample> {
    JointSample::from_rows(&rows).py()
}

fn rows(s: &JointSample) -> Vec<Vec<f64>> {
    s.rows().map(<[f64]>::to_vec).collect()
}

/// Predictive distribution of one variable for one day's ensemble.
#[pyclass(name = "Marginal", module = "ensemble_copula_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMarginal {
    inner: PredictiveMarginal,
}

#[pymethods]
impl PyMarginal {
    fn cdf(&self, y: f64) -> f64 {
        self.inner.cdf(y)
    }

    fn cdf_left(&self, y: f64) -> f64 {
        self.inner.cdf_left(y)
    }

    fn quantile(&self, u: f64) -> PyResult<f64> {
        self.inner.quantile(u).py()
    }

    /// Continuous density and point mass at `y`.
    fn pdf(&self, y: f64) -> PyResult<(f64, f64)> {
        let d = self.inner.pdf(y).py()?;
        Ok((d.density, d.point_mass))
    }

    #[getter]
    fn point_mass(&self) -> f64 {
        self.inner.point_mass()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Marginal({:?}, members={})",
            self.inner.kind(),
            self.inner.members().len()
        )
    }
}

/// Fitted BMA model for one variable.
#[pyclass(name = "Model", module = "ensemble_copula_py", frozen)]
struct PyModel {
    inner: MarginalModel,
    log_likelihood: Vec<f64>,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    /// Log-likelihood at the start and after every EM iteration.
    #[getter]
    fn log_likelihood(&self) -> Vec<f64> {
        self.log_likelihood.clone()
    }

    fn predictive(&self, ensemble: Vec<f64>) -> PyResult<PyMarginal> {
        Ok(PyMarginal {
            inner: self.inner.predictive(&ensemble).py()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Fit the BMA model for `variable` (maxwsp, precip, mintemp, maxtemp or
/// pressure) on training pairs: one list of member forecasts per day.
#[pyfunction]
fn fit(variable: &str, ensembles: Vec<Vec<f64>>, observations: Vec<f64>) -> PyResult<PyModel> {
    use ensemble_copula::bma::{fit_gamma_bma_traced, fit_gaussian_bma_traced, fit_precip_bma_traced, VariableKind};
    let training = TrainingSet::new(ensembles, observations).py()?;
    let (inner, trace) = match parse_variable(variable)?.kind() {
        VariableKind::Gaussian => fit_gaussian_bma_traced(&training).map(|(m, t)| (MarginalModel::Gaussian(m), t)),
        VariableKind::Gamma => fit_gamma_bma_traced(&training).map(|(m, t)| (MarginalModel::Gamma(m), t)),
        VariableKind::Precipitation => {
            fit_precip_bma_traced(&training).map(|(m, t)| (MarginalModel::Precipitation(m), t))
        }
    }
    .py()?;
    Ok(PyModel {
        inner,
        log_likelihood: trace.log_likelihood,
    })
}

fn inner_marginals(ms: &[PyRef<'_, PyMarginal>]) -> Vec<PredictiveMarginal> {
    ms.iter().map(|m| m.inner.clone()).collect()
}

fn correlation(rows: &[Vec<f64>]) -> PyResult<CorrelationMatrix> {
    CorrelationMatrix::from_rows(rows).py()
}

/// Latent Gaussian values of an observation vector. Censored entries are
/// reported with their imputed value and `True`.
#[pyfunction]
fn latent(marginals: Vec<PyRef<'_, PyMarginal>>, observation: Vec<f64>) -> PyResult<Vec<(f64, bool)>> {
    let rec = copula::latent_from_observation(&inner_marginals(&marginals), &observation).py()?;
    Ok(rec.values.iter().map(|v| (v.imputed(), v.is_censored())).collect())
}

/// Correlation matrix from per-day `(marginals, observation)` pairs.
#[pyfunction]
fn estimate_correlation(days: Vec<(Vec<PyRef<'_, PyMarginal>>, Vec<f64>)>) -> PyResult<Vec<Vec<f64>>> {
    let records: Vec<LatentRecord> = days
        .iter()
        .map(|(ms, obs)| copula::latent_from_observation(&inner_marginals(ms), obs))
        .collect::<ensemble_copula::Result<_>>()
        .py()?;
    Ok(copula::estimate_correlation(&records).py()?.to_rows())
}

/// Correlation matrix from latent vectors; `None` marks a value censored at
/// the point mass, whose probability is taken from `zero_probabilities`.
#[pyfunction]
fn estimate_correlation_latent(
    latents: Vec<Vec<Option<f64>>>,
    zero_probabilities: Vec<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let mut records = Vec::with_capacity(latents.len());
    for row in latents {
        let mut values = Vec::with_capacity(row.len());
        for (j, v) in row.into_iter().enumerate() {
            values.push(match v {
                Some(z) => LatentValue::Observed { z },
                None => {
                    let alpha = *zero_probabilities
                        .get(j)
                        .ok_or_else(|| PyValueError::new_err("missing zero probability"))?;
                    LatentValue::Censored {
                        upper: num::std_normal_quantile(alpha).py()?,
                        alpha,
                    }
                }
            });
        }
        records.push(LatentRecord {
            values,
            clamped: Vec::new(),
            station: None,
            date: None,
        });
    }
    Ok(copula::estimate_correlation(&records).py()?.to_rows())
}

/// `n` joint draws joining the marginals with the Gaussian copula.
#[pyfunction]
#[pyo3(signature = (marginals, correlation_rows, n, seed, stream = 0))]
fn sample_joint(
    marginals: Vec<PyRef<'_, PyMarginal>>,
    correlation_rows: Vec<Vec<f64>>,
    n: usize,
    seed: u64,
    stream: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let ms = inner_marginals(&marginals);
    let c = correlation(&correlation_rows)?;
    let s = copula::sample_joint(&ms, &c, n, &mut RngStream::new(seed, stream)).py()?;
    Ok(rows(&s))
}

#[pyfunction]
fn energy_score(forecast: Vec<Vec<f64>>, observation: Vec<f64>) -> PyResult<f64> {
    ver::energy_score_exact(&sample(forecast)?, &observation).py()
}

#[pyfunction]
fn energy_score_mc(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, observation: Vec<f64>) -> PyResult<f64> {
    ver::energy_score_mc(&sample(a)?, &sample(b)?, &observation).py()
}

#[pyfunction]
fn euclidean_error(forecast: Vec<Vec<f64>>, observation: Vec<f64>) -> PyResult<f64> {
    ver::euclidean_error(&sample(forecast)?, &observation).py()
}

#[pyfunction]
fn geometric_median(points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    ver::geometric_median(&sample(points)?).py()
}

/// Determinant sharpness and whether the covariance was degenerate.
#[pyfunction]
fn determinant_sharpness(points: Vec<Vec<f64>>) -> PyResult<(f64, bool)> {
    let s = ver::determinant_sharpness(&sample(points)?).py()?;
    Ok((s.value, s.degenerate))
}

#[pyfunction]
#[pyo3(signature = (observation, forecast, seed, stream = 0))]
fn multivariate_rank(observation: Vec<f64>, forecast: Vec<Vec<f64>>, seed: u64, stream: u64) -> PyResult<usize> {
    ver::multivariate_rank(&observation, &sample(forecast)?, &mut RngStream::new(seed, stream)).py()
}

#[pyfunction]
fn reliability_index(counts: Vec<u64>) -> PyResult<f64> {
    ver::reliability_index(&ver::RankHistogram::from_counts(counts).py()?).py()
}

#[pyfunction]
fn std_normal_cdf(x: f64) -> PyResult<f64> {
    num::std_normal_cdf(x).py()
}

#[pyfunction]
fn std_normal_quantile(u: f64) -> PyResult<f64> {
    num::std_normal_quantile(u).py()
}

#[pyfunction]
fn gamma_cdf(y: f64, shape: f64, scale: f64) -> PyResult<f64> {
    num::gamma_cdf(y, shape, scale).py()
}

#[pyfunction]
fn gamma_quantile(u: f64, shape: f64, scale: f64) -> PyResult<f64> {
    num::gamma_quantile(u, shape, scale).py()
}

#[pyfunction]
fn cholesky(matrix: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(num::cholesky_factor(&Matrix::from_rows(&matrix).py()?).py()?.to_rows())
}

#[pyfunction]
fn nearest_correlation_repair(matrix: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(num::nearest_correlation_repair(&Matrix::from_rows(&matrix).py()?)
        .py()?
        .to_rows())
}

/// Write `calibration.csv`, `test.csv` for a synthetic spec given as JSON.
#[pyfunction]
fn synthesize(spec_json: &str, out_dir: &str) -> PyResult<(usize, usize)> {
    let spec: SyntheticSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let data = generate_synthetic(&spec).py()?;
    let (calibration, test) = data.split_at(spec.test_start());
    let out = std::path::Path::new(out_dir);
    std::fs::create_dir_all(out).map_err(|e| PyOSError::new_err(e.to_string()))?;
    save_dataset(&calibration, out.join("calibration.csv")).py()?;
    save_dataset(&test, out.join("test.csv")).py()?;
    Ok((calibration.len(), test.len()))
}

/// Run estimate, forecast and verify for a configuration file and return
/// the verification report as JSON.
#[pyfunction]
#[pyo3(signature = (config_path, jobs = None))]
fn run_all(py: Python<'_>, config_path: &str, jobs: Option<usize>) -> PyResult<String> {
    let mut cfg = RunConfig::load(config_path).py()?;
    cfg.jobs = jobs;
    let report = py.detach(|| pipeline::run_all(&cfg)).py()?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn ensemble_copula_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarginal>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(latent, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_correlation_latent, m)?)?;
    m.add_function(wrap_pyfunction!(sample_joint, m)?)?;
    m.add_function(wrap_pyfunction!(energy_score, m)?)?;
    m.add_function(wrap_pyfunction!(energy_score_mc, m)?)?;
    m.add_function(wrap_pyfunction!(euclidean_error, m)?)?;
    m.add_function(wrap_pyfunction!(geometric_median, m)?)?;
    m.add_function(wrap_pyfunction!(determinant_sharpness, m)?)?;
    m.add_function(wrap_pyfunction!(multivariate_rank, m)?)?;
    m.add_function(wrap_pyfunction!(reliability_index, m)?)?;
    m.add_function(wrap_pyfunction!(std_normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(std_normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(cholesky, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_correlation_repair, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    Ok(())
}
