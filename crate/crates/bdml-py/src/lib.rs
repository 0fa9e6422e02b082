//! Python bindings: the observational data model, the GEL weight solver,
//! the posterior sampler pipeline, and the simulation generators.

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bdml::crossfit::{crossfit_nuisance, make_folds};
use bdml::dml::dml_estimate;
use bdml::gel::{self, DivergenceSpec};
use bdml::learn::{Family, LearnerSpec, Task};
use bdml::mcmc::{run_chain, summarize, McmcConfig, PriorSpec};
use bdml::score::{self, build_score_components, ScoreComponents};
use bdml::seeding::{derive_seed, Stream};
use bdml::simbench::{self, ScenarioSpec};
use bdml::validity;

fn err<T>(r: bdml::Result<T>) -> PyResult<T> {
    r.map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix_from_nested(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("x must be rectangular"));
    }
    let mut out = Array2::zeros((n, p));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

fn family_from_name(name: &str) -> PyResult<Family> {
    match name.to_ascii_lowercase().as_str() {
        "lasso" => Ok(Family::Lasso),
        "forest" | "rf" | "random-forest" => Ok(Family::RandomForest(Default::default())),
        "nn" | "neural-net" | "neural-network" => Ok(Family::NeuralNet(Default::default())),
        other => Err(PyValueError::new_err(format!(
            "unknown learner '{other}' (use lasso, forest, or nn)"
        ))),
    }
}

/// The (outcome, treatment, confounder) triple for n units.
#[pyclass(name = "Observations")]
struct PyObservations {
    inner: score::ObservationSet,
}

#[pymethods]
impl PyObservations {
    #[new]
    fn new(y: Vec<f64>, d: Vec<f64>, x: Vec<Vec<f64>>) -> PyResult<Self> {
        let x = matrix_from_nested(x)?;
        Ok(Self {
            inner: err(score::ObservationSet::new(y, d, x))?,
        })
    }

    fn n(&self) -> usize {
        self.inner.n()
    }

    fn p(&self) -> usize {
        self.inner.p()
    }

    fn treatment_is_binary(&self) -> bool {
        self.inner.treatment_is_binary()
    }
}

/// Ratio of a borough rate to the city-wide rate.
#[pyfunction]
fn disproportionality_index(borough_rate: f64, city_rate: f64) -> PyResult<f64> {
    err(score::disproportionality_index(borough_rate, city_rate))
}

/// Solves the constrained Cressie-Read weight problem for one score vector.
#[pyfunction]
#[pyo3(signature = (psi, lambda_ = 0.0))]
fn solve_weights(py: Python<'_>, psi: Vec<f64>, lambda_: f64) -> PyResult<Py<PyAny>> {
    let div = err(DivergenceSpec::new(lambda_))?;
    let sol = err(gel::solve_weights(&psi, div))?;
    let out = PyDict::new(py);
    out.set_item("weights", sol.weights)?;
    out.set_item("tilt", sol.tilt)?;
    out.set_item("normalizer", sol.normalizer)?;
    out.set_item("log_profile", sol.log_profile)?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("mass_residual", sol.residuals.0)?;
    out.set_item("moment_residual", sol.residuals.1)?;
    Ok(out.into_any().unbind())
}

/// Log profile likelihood of a factored score at one beta (negative
/// infinity when infeasible).
#[pyfunction]
#[pyo3(signature = (offset, slope, beta, lambda_ = 0.0))]
fn log_profile_likelihood(offset: Vec<f64>, slope: Vec<f64>, beta: f64, lambda_: f64) -> PyResult<f64> {
    let sc = err(ScoreComponents::new(offset, slope))?;
    let div = err(DivergenceSpec::new(lambda_))?;
    err(gel::log_profile_likelihood(&sc, beta, div))
}

/// Empirical posterior CDF of a chain at the true value.
#[pyfunction]
fn h_statistic(chain: Vec<f64>, beta_true: f64) -> PyResult<f64> {
    if chain.is_empty() {
        return Err(PyValueError::new_err("chain must be nonempty"));
    }
    Ok(validity::h_statistic(&chain, beta_true))
}

/// Kolmogorov-Smirnov test of values in [0,1] against the uniform law.
#[pyfunction]
fn ks_uniform_test(values: Vec<f64>) -> PyResult<(f64, f64)> {
    err(validity::ks_uniform_test(&values))
}

/// Mean, sd and equal-tailed 95% interval of a chain.
#[pyfunction]
fn summarize_chain(py: Python<'_>, chain: Vec<f64>) -> PyResult<Py<PyAny>> {
    if chain.is_empty() {
        return Err(PyValueError::new_err("chain must be nonempty"));
    }
    let s = summarize(&chain);
    let out = PyDict::new(py);
    out.set_item("mean", s.mean)?;
    out.set_item("sd", s.sd)?;
    out.set_item("ci", s.equal_tailed_95)?;
    Ok(out.into_any().unbind())
}

/// Draws one data set from a named simulation design; returns (y, d, x).
#[pyfunction]
#[pyo3(signature = (kind, n, p, beta = None, seed = 0))]
fn simulate_scenario(
    kind: &str,
    n: usize,
    p: usize,
    beta: Option<f64>,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let scenario = match kind.to_ascii_lowercase().as_str() {
        "binary" => ScenarioSpec::binary(n, p),
        "continuous" => ScenarioSpec::continuous(n, p),
        "split" | "split-demo" => {
            let mut s = ScenarioSpec::split_demo(n);
            s.p = p.max(8);
            s
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown scenario '{other}' (use binary, continuous, or split)"
            )))
        }
    };
    let obs = err(simbench::simulate(&scenario, beta, seed))?;
    let x: Vec<Vec<f64>> = obs.x().rows().into_iter().map(|r| r.to_vec()).collect();
    Ok((obs.y().to_vec(), obs.d().to_vec(), x))
}

/// Full pipeline on in-memory data: cross-fitted nuisances, GEL profile
/// posterior for the treatment effect, and the frequentist comparator.
#[pyfunction]
#[pyo3(signature = (obs, lambda_ = 0.0, learner_pi = "forest", learner_g = "forest",
                    folds = 2, draws = 5000, burn_in = 1000,
                    prior_mean = 0.0, prior_var = 2.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit_effect(
    py: Python<'_>,
    obs: &PyObservations,
    lambda_: f64,
    learner_pi: &str,
    learner_g: &str,
    folds: usize,
    draws: usize,
    burn_in: usize,
    prior_mean: f64,
    prior_var: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let div = err(DivergenceSpec::new(lambda_))?;
    let prior = err(PriorSpec::new(prior_mean, prior_var))?;
    let data = &obs.inner;
    let assignment = err(make_folds(data.n(), folds, derive_seed(seed, Stream::Folds, 0)))?;
    let pi_task = if data.treatment_is_binary() {
        Task::BinaryProbability
    } else {
        Task::Regression
    };
    let spec_pi = LearnerSpec {
        family: family_from_name(learner_pi)?,
        task: pi_task,
        seed: derive_seed(seed, Stream::LearnerPi, 0),
    };
    let spec_g = LearnerSpec {
        family: family_from_name(learner_g)?,
        task: Task::Regression,
        seed: derive_seed(seed, Stream::LearnerG, 0),
    };
    let nuis = err(crossfit_nuisance(data, &assignment, &spec_pi, &spec_g))?;
    let sc = err(build_score_components(data, &nuis))?;
    let freq = err(dml_estimate(&sc))?;
    let cfg = McmcConfig {
        draws,
        burn_in,
        initial_beta: None,
        step_scale: None,
        adapt: true,
        seed: derive_seed(seed, Stream::Chain, 0),
    };
    let posterior = err(run_chain(&sc, div, &prior, &cfg))?;

    let out = PyDict::new(py);
    out.set_item("posterior_mean", posterior.mean)?;
    out.set_item("posterior_sd", posterior.sd)?;
    out.set_item("ci", posterior.equal_tailed_95)?;
    out.set_item("acceptance_rate", posterior.acceptance_rate)?;
    out.set_item("dml_estimate", freq.beta_hat)?;
    out.set_item("dml_se", freq.se)?;
    out.set_item("dml_ci", freq.ci95)?;
    out.set_item("chain", posterior.chain)?;
    Ok(out.into_any().unbind())
}

#[pymodule]
#[pyo3(name = "bdml")]
fn bdml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyObservations>()?;
    m.add_function(wrap_pyfunction!(disproportionality_index, m)?)?;
    m.add_function(wrap_pyfunction!(solve_weights, m)?)?;
    m.add_function(wrap_pyfunction!(log_profile_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(h_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(ks_uniform_test, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_chain, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(fit_effect, m)?)?;
    Ok(())
}
