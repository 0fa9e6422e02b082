//! Declarative generators for the simulation designs and the replicate
//! orchestrator computing bias, RMSE and coverage tables.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{crossfit_nuisance, make_folds};
use crate::dml::dml_estimate;
use crate::error::{Error, Result};
use crate::gel::DivergenceSpec;
use crate::learn::{expit, Family, LearnerSpec, Task};
use crate::mcmc::{run_chain, McmcConfig, PriorSpec};
use crate::score::{build_score_components, ObservationSet};
use crate::seeding::{derive_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    BinaryExposure,
    ContinuousExposure,
    SplitDemo,
}

/// A declarative simulation design carrying all generator constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub p: usize,
    /// Off-diagonal of the equicorrelated confounder covariance.
    pub rho: f64,
    pub beta_true: f64,
    /// Sparse (column, coefficient) pairs of the treatment equation.
    pub treatment_coefs: Vec<(usize, f64)>,
    /// Sparse (column, coefficient) pairs of the outcome equation.
    pub outcome_coefs: Vec<(usize, f64)>,
}

const TREATMENT_COEFS_BINARY: [(usize, f64); 3] = [(0, 0.3), (1, 0.2), (4, -0.4)];
const TREATMENT_COEFS_CONTINUOUS: [(usize, f64); 3] = [(0, 0.45), (1, 0.9), (4, -0.4)];
const OUTCOME_COEFS: [(usize, f64); 4] = [(0, 0.5), (2, 1.0), (3, -0.1), (6, -0.2)];

impl ScenarioSpec {
    /// Binary exposure: Bernoulli treatment through a logistic link,
    /// equicorrelation 0.3.
    pub fn binary(n: usize, p: usize) -> Self {
        Self {
            kind: ScenarioKind::BinaryExposure,
            n,
            p,
            rho: 0.3,
            beta_true: 1.0,
            treatment_coefs: TREATMENT_COEFS_BINARY.to_vec(),
            outcome_coefs: OUTCOME_COEFS.to_vec(),
        }
    }

    /// Continuous exposure: Gaussian treatment with unit noise,
    /// equicorrelation 0.05.
    pub fn continuous(n: usize, p: usize) -> Self {
        Self {
            kind: ScenarioKind::ContinuousExposure,
            n,
            p,
            rho: 0.05,
            beta_true: 1.0,
            treatment_coefs: TREATMENT_COEFS_CONTINUOUS.to_vec(),
            outcome_coefs: OUTCOME_COEFS.to_vec(),
        }
    }

    /// The sample-splitting demonstration design: continuous exposure with
    /// analytically known nuisances at a small p.
    ///
    /// The contaminated outcome fit attenuates the estimate by a factor
    /// `1 - n^(-1/3)`, so the full-sample bias is `-beta * n^(-1/3)`; a
    /// negative true effect makes that bias positive on the standardized
    /// scale.
    pub fn split_demo(n: usize) -> Self {
        Self {
            kind: ScenarioKind::SplitDemo,
            n,
            p: 10,
            rho: 0.05,
            beta_true: -1.0,
            treatment_coefs: TREATMENT_COEFS_CONTINUOUS.to_vec(),
            outcome_coefs: OUTCOME_COEFS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidArgument(format!(
                "scenario needs n >= 4, got {}",
                self.n
            )));
        }
        if self.p < 1 {
            return Err(Error::InvalidArgument("scenario needs p >= 1".into()));
        }
        let lower = if self.p > 1 {
            -1.0 / (self.p as f64 - 1.0)
        } else {
            -1.0
        };
        if !(self.rho > lower && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "equicorrelation {} is not positive definite for p = {}",
                self.rho, self.p
            )));
        }
        let max_col = self
            .treatment_coefs
            .iter()
            .chain(&self.outcome_coefs)
            .map(|&(j, _)| j)
            .max()
            .unwrap_or(0);
        if max_col >= self.p {
            return Err(Error::InvalidArgument(format!(
                "coefficient on column {max_col} but p = {}",
                self.p
            )));
        }
        if !self.beta_true.is_finite() {
            return Err(Error::InvalidArgument("beta_true must be finite".into()));
        }
        Ok(())
    }

    fn linear(&self, coefs: &[(usize, f64)], row: &[f64]) -> f64 {
        coefs.iter().map(|&(j, c)| c * row[j]).sum()
    }

    /// Conditional treatment mean `E[D|X]` at one confounder row.
    pub fn treatment_mean(&self, row: &[f64]) -> f64 {
        let lin = self.linear(&self.treatment_coefs, row);
        match self.kind {
            ScenarioKind::BinaryExposure => expit(lin),
            _ => lin,
        }
    }

    /// Confounder part of the outcome equation `mu(X)` at one row.
    pub fn outcome_baseline(&self, row: &[f64]) -> f64 {
        self.linear(&self.outcome_coefs, row)
    }
}

type CholKey = (usize, u64);

fn cholesky_cache() -> &'static Mutex<HashMap<CholKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<CholKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Lower-triangular Cholesky factor of the equicorrelation matrix, cached
/// per (p, rho); row-major packed lower triangle.
fn equicorrelation_cholesky(p: usize, rho: f64) -> Result<Arc<Vec<f64>>> {
    let key = (p, rho.to_bits());
    if let Some(l) = cholesky_cache().lock().unwrap().get(&key) {
        return Ok(l.clone());
    }
    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
    let mut l = vec![0.0f64; p * (p + 1) / 2];
    for i in 0..p {
        for j in 0..=i {
            let a = if i == j { 1.0 } else { rho };
            let mut sum = a;
            for k in 0..j {
                sum -= l[idx(i, k)] * l[idx(j, k)];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "equicorrelation matrix (p={p}, rho={rho}) is not positive definite"
                    )));
                }
                l[idx(i, j)] = sum.sqrt();
            } else {
                l[idx(i, j)] = sum / l[idx(j, j)];
            }
        }
    }
    let arc = Arc::new(l);
    cholesky_cache()
        .lock()
        .unwrap()
        .insert(key, arc.clone());
    Ok(arc)
}

/// Draws one data set from the scenario; deterministic given the seed.
pub fn simulate(
    scenario: &ScenarioSpec,
    beta_override: Option<f64>,
    seed: u64,
) -> Result<ObservationSet> {
    scenario.validate()?;
    let beta = beta_override.unwrap_or(scenario.beta_true);
    if !beta.is_finite() {
        return Err(Error::InvalidArgument("treatment effect must be finite".into()));
    }
    let (n, p) = (scenario.n, scenario.p);
    let chol = equicorrelation_cholesky(p, scenario.rho)?;
    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, p));
    let mut z = vec![0.0f64; p];
    for mut row in x.rows_mut() {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..p {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += chol[idx(i, k)] * z[k];
            }
            row[i] = acc;
        }
    }

    let mut d = Vec::with_capacity(n);
    for row in x.rows() {
        let mean = scenario.treatment_mean(row.as_slice().unwrap());
        let value = match scenario.kind {
            ScenarioKind::BinaryExposure => f64::from(rng.random::<f64>() < mean),
            _ => mean + rng.sample::<f64, _>(StandardNormal),
        };
        d.push(value);
    }

    let mut y = Vec::with_capacity(n);
    for (i, row) in x.rows().into_iter().enumerate() {
        let baseline = scenario.outcome_baseline(row.as_slice().unwrap());
        y.push(beta * d[i] + baseline + rng.sample::<f64, _>(StandardNormal));
    }

    ObservationSet::new(y, d, x)
}

/// One estimator column of the benchmark tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchMethod {
    Bayes { div: DivergenceSpec, learner: Family },
    Dml { learner: Family },
}

impl BenchMethod {
    pub fn label(&self) -> String {
        match self {
            BenchMethod::Bayes { div, learner } => format!("{} ({})", div.name(), learner.label()),
            BenchMethod::Dml { learner } => format!("DML ({})", learner.label()),
        }
    }

    fn learner(&self) -> Family {
        match self {
            BenchMethod::Bayes { learner, .. } | BenchMethod::Dml { learner } => *learner,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchmarkSettings {
    pub folds: usize,
    pub draws: usize,
    pub burn_in: usize,
    /// Prior for the Bayesian methods.
    pub prior: PriorSpec,
    /// Replicate failures tolerated before the whole run errors.
    pub max_failure_fraction: f64,
}

impl BenchmarkSettings {
    pub fn new(prior: PriorSpec) -> Self {
        Self {
            folds: 2,
            draws: 5000,
            burn_in: 1000,
            prior,
            max_failure_fraction: 0.05,
        }
    }
}

/// One row of the output table.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub bias: f64,
    pub rmse: f64,
    /// Percent of replicates whose 95% interval covers the truth.
    pub coverage: f64,
    pub replicates: usize,
}

/// Point estimate with a 95% interval, as produced per replicate.
#[derive(Debug, Clone, Copy)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Bias, RMSE and percent coverage of a set of replicate estimates.
pub fn summarize_replicates(estimates: &[IntervalEstimate], beta_true: f64) -> (f64, f64, f64) {
    let r = estimates.len() as f64;
    let bias = estimates.iter().map(|e| e.estimate - beta_true).sum::<f64>() / r;
    let rmse = (estimates
        .iter()
        .map(|e| (e.estimate - beta_true) * (e.estimate - beta_true))
        .sum::<f64>()
        / r)
        .sqrt();
    let covered = estimates
        .iter()
        .filter(|e| e.lo <= beta_true && beta_true <= e.hi)
        .count();
    (bias, rmse, 100.0 * covered as f64 / r)
}

/// Runs the replicate loop for a set of methods sharing nuisance fits per
/// learner family within each replicate.
pub fn run_benchmark(
    scenario: &ScenarioSpec,
    methods: &[BenchMethod],
    replicates: usize,
    seed: u64,
    settings: &BenchmarkSettings,
) -> Result<Vec<MetricsRow>> {
    if replicates < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicates".into()));
    }
    scenario.validate()?;
    let pi_task = match scenario.kind {
        ScenarioKind::BinaryExposure => Task::BinaryProbability,
        _ => Task::Regression,
    };

    // distinct learner families, in first-appearance order
    let mut families: Vec<Family> = Vec::new();
    for m in methods {
        if !families.contains(&m.learner()) {
            families.push(m.learner());
        }
    }

    let per_replicate: Vec<Vec<Option<IntervalEstimate>>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(seed, Stream::Replicate, rep as u64);
            match run_one_replicate(
                scenario, methods, &families, pi_task, rep_seed, settings,
            ) {
                Ok(row) => row.into_iter().map(Some).collect(),
                Err(_) => vec![None; methods.len()],
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(methods.len());
    for (m, method) in methods.iter().enumerate() {
        let estimates: Vec<IntervalEstimate> = per_replicate
            .iter()
            .filter_map(|row| row[m])
            .collect();
        let failures = replicates - estimates.len();
        if (failures as f64) > settings.max_failure_fraction * replicates as f64 {
            return Err(Error::Learner(format!(
                "method {} failed on {failures}/{replicates} replicates",
                method.label()
            )));
        }
        let (bias, rmse, coverage) = summarize_replicates(&estimates, scenario.beta_true);
        rows.push(MetricsRow {
            method: method.label(),
            bias,
            rmse,
            coverage,
            replicates: estimates.len(),
        });
    }
    Ok(rows)
}

fn run_one_replicate(
    scenario: &ScenarioSpec,
    methods: &[BenchMethod],
    families: &[Family],
    pi_task: Task,
    rep_seed: u64,
    settings: &BenchmarkSettings,
) -> Result<Vec<IntervalEstimate>> {
    let obs = simulate(scenario, None, derive_seed(rep_seed, Stream::Scenario, 0))?;
    let folds = make_folds(
        scenario.n,
        settings.folds,
        derive_seed(rep_seed, Stream::Folds, 0),
    )?;

    let mut components = HashMap::new();
    for (f, family) in families.iter().enumerate() {
        let spec_pi = LearnerSpec {
            family: *family,
            task: pi_task,
            seed: derive_seed(rep_seed, Stream::LearnerPi, f as u64),
        };
        let spec_g = LearnerSpec {
            family: *family,
            task: Task::Regression,
            seed: derive_seed(rep_seed, Stream::LearnerG, f as u64),
        };
        let nuis = crossfit_nuisance(&obs, &folds, &spec_pi, &spec_g)?;
        components.insert(family.label(), build_score_components(&obs, &nuis)?);
    }

    let mut out = Vec::with_capacity(methods.len());
    for (m, method) in methods.iter().enumerate() {
        let sc = &components[method.learner().label()];
        let est = match method {
            BenchMethod::Dml { .. } => {
                let e = dml_estimate(sc)?;
                IntervalEstimate {
                    estimate: e.beta_hat,
                    lo: e.ci95.0,
                    hi: e.ci95.1,
                }
            }
            BenchMethod::Bayes { div, .. } => {
                let cfg = McmcConfig {
                    draws: settings.draws,
                    burn_in: settings.burn_in,
                    initial_beta: None,
                    step_scale: None,
                    adapt: true,
                    seed: derive_seed(rep_seed, Stream::Chain, m as u64),
                };
                let chain = run_chain(sc, *div, &settings.prior, &cfg)?;
                IntervalEstimate {
                    estimate: chain.mean,
                    lo: chain.equal_tailed_95.0,
                    hi: chain.equal_tailed_95.1,
                }
            }
        };
        out.push(est);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_link_is_calibrated_at_the_origin() {
        // oracle: expit(0) = 0.5; check the empirical treatment rate on
        // units whose linear index is near zero
        let mut sc = ScenarioSpec::binary(100_000, 8);
        sc.n = 100_000;
        let obs = simulate(&sc, None, 11).unwrap();
        let mut hits = 0usize;
        let mut total = 0usize;
        for (i, row) in obs.x().rows().into_iter().enumerate() {
            let lin: f64 = sc
                .treatment_coefs
                .iter()
                .map(|&(j, c)| c * row[j])
                .sum();
            if lin.abs() < 0.05 {
                total += 1;
                hits += obs.d()[i] as usize;
            }
        }
        let rate = hits as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate} over {total} units");
    }

    #[test]
    fn continuous_treatment_variance_matches_arithmetic() {
        // oracle: with rho = 0 the treatment variance is the coefficient
        // sum of squares plus the unit noise
        let mut sc = ScenarioSpec::continuous(100_000, 8);
        sc.rho = 0.0;
        let obs = simulate(&sc, None, 5).unwrap();
        let n = obs.n() as f64;
        let mean = obs.d().iter().sum::<f64>() / n;
        let var = obs.d().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = 0.45f64.powi(2) + 0.9f64.powi(2) + 0.4f64.powi(2) + 1.0;
        assert!(
            (var - expected).abs() / expected < 0.03,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn confounder_correlations_match_rho() {
        let sc = ScenarioSpec::binary(100_000, 8);
        let obs = simulate(&sc, None, 3).unwrap();
        let x = obs.x();
        let n = obs.n() as f64;
        for a in 0..5 {
            for b in 0..a {
                let ma = x.column(a).sum() / n;
                let mb = x.column(b).sum() / n;
                let mut cov = 0.0;
                let mut va = 0.0;
                let mut vb = 0.0;
                for i in 0..obs.n() {
                    let da = x[(i, a)] - ma;
                    let db = x[(i, b)] - mb;
                    cov += da * db;
                    va += da * da;
                    vb += db * db;
                }
                let corr = cov / (va.sqrt() * vb.sqrt());
                assert!((corr - 0.3).abs() < 0.01, "corr({a},{b}) = {corr}");
            }
        }
    }

    #[test]
    fn simulation_is_deterministic_and_override_applies() {
        let sc = ScenarioSpec::continuous(50, 8);
        let a = simulate(&sc, None, 7).unwrap();
        let b = simulate(&sc, None, 7).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.d(), b.d());
        let c = simulate(&sc, Some(0.0), 7).unwrap();
        assert_eq!(a.d(), c.d());
        assert_ne!(a.y(), c.y());
    }

    #[test]
    fn invalid_equicorrelation_is_rejected() {
        let mut sc = ScenarioSpec::continuous(50, 10);
        sc.rho = -0.5;
        assert!(simulate(&sc, None, 0).is_err());
        sc.rho = 1.0;
        assert!(simulate(&sc, None, 0).is_err());
    }

    #[test]
    fn metrics_identities() {
        // perfect estimator
        let perfect: Vec<IntervalEstimate> = (0..100)
            .map(|_| IntervalEstimate {
                estimate: 1.0,
                lo: 1.0,
                hi: 1.0,
            })
            .collect();
        let (bias, rmse, coverage) = summarize_replicates(&perfect, 1.0);
        assert_eq!((bias, rmse, coverage), (0.0, 0.0, 100.0));

        // rmse^2 = bias^2 + variance on arbitrary estimates
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let estimates: Vec<IntervalEstimate> = (0..500)
            .map(|_| {
                let e = 1.0 + 0.3 + 0.5 * rng.sample::<f64, _>(StandardNormal);
                IntervalEstimate {
                    estimate: e,
                    lo: e - 1.0,
                    hi: e + 1.0,
                }
            })
            .collect();
        let (bias, rmse, _) = summarize_replicates(&estimates, 1.0);
        let n = estimates.len() as f64;
        let mean = estimates.iter().map(|e| e.estimate).sum::<f64>() / n;
        let var = estimates
            .iter()
            .map(|e| (e.estimate - mean) * (e.estimate - mean))
            .sum::<f64>()
            / n;
        assert!((rmse * rmse - (bias * bias + var)).abs() < 1e-12);
    }

    #[test]
    fn nominal_intervals_cover_at_nominal_rate() {
        // oracle: estimates at beta + N(0, s^2) with exact +-1.96 s bands;
        // binomial tolerance at 2000 replicates
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = 0.4;
        let estimates: Vec<IntervalEstimate> = (0..2000)
            .map(|_| {
                let e = 1.0 + s * rng.sample::<f64, _>(StandardNormal);
                IntervalEstimate {
                    estimate: e,
                    lo: e - 1.959964 * s,
                    hi: e + 1.959964 * s,
                }
            })
            .collect();
        let (_, _, coverage) = summarize_replicates(&estimates, 1.0);
        assert!((coverage - 95.0).abs() < 1.5, "coverage {coverage}");
    }

    #[test]
    fn benchmark_runs_end_to_end_and_is_deterministic() {
        let scenario = ScenarioSpec::continuous(40, 8);
        let methods = [
            BenchMethod::Bayes {
                div: DivergenceSpec::EL,
                learner: Family::Lasso,
            },
            BenchMethod::Dml {
                learner: Family::Lasso,
            },
        ];
        let mut settings = BenchmarkSettings::new(PriorSpec::new(1.0, 2.0).unwrap());
        settings.draws = 400;
        settings.burn_in = 100;
        let rows = run_benchmark(&scenario, &methods, 4, 99, &settings).unwrap();
        let again = run_benchmark(&scenario, &methods, 4, 99, &settings).unwrap();
        assert_eq!(rows.len(), 2);
        for (a, b) in rows.iter().zip(&again) {
            assert_eq!(a.method, b.method);
            assert_eq!(a.bias, b.bias);
            assert_eq!(a.rmse, b.rmse);
            assert_eq!(a.coverage, b.coverage);
            assert!(a.rmse >= a.bias.abs());
        }
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
