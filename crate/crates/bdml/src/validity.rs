//! Posterior-validity harness: draw the effect from the prior, simulate
//! data, run the full split-sample pipeline, and test the posterior-CDF
//! statistic for uniformity with a Kolmogorov-Smirnov test. Also the
//! full-sample vs split-sample bias demonstration built on a contaminated
//! outcome fit with an exact treatment model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::crossfit::{crossfit_nuisance, make_folds, FoldAssignment};
use crate::dml::dml_estimate;
use crate::error::{Error, Result};
use crate::gel::DivergenceSpec;
use crate::learn::{Family, LearnerSpec, Task};
use crate::mcmc::{run_chain, McmcConfig, PriorSpec};
use crate::score::{
    build_score_components, NuisanceKind, NuisancePredictions, ObservationSet, ScoreComponents,
};
use crate::seeding::{derive_seed, Stream};
use crate::simbench::{simulate, ScenarioKind, ScenarioSpec};

/// Posterior-CDF values across replicates with the uniformity test.
#[derive(Debug, Clone)]
pub struct ValidityReport {
    pub h_values: Vec<f64>,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// Successful replicates (the length of `h_values`).
    pub m: usize,
    pub failures: usize,
}

/// Standardized estimates from both arms of the splitting demonstration.
#[derive(Debug, Clone)]
pub struct SplitDemoReport {
    pub estimator: String,
    pub standardized_estimates_full: Vec<f64>,
    pub standardized_estimates_split: Vec<f64>,
    pub mean_full: f64,
    pub mean_split: f64,
}

/// Empirical posterior CDF of the chain at the true value, with half
/// weight on ties.
pub fn h_statistic(chain: &[f64], beta_true: f64) -> f64 {
    assert!(!chain.is_empty(), "h statistic needs a nonempty chain");
    let below = chain.iter().filter(|&&v| v < beta_true).count() as f64;
    let equal = chain.iter().filter(|&&v| v == beta_true).count() as f64;
    (below + 0.5 * equal) / chain.len() as f64
}

/// Kolmogorov-Smirnov test of `values` against Uniform(0,1): the sup-norm
/// statistic and the asymptotic p-value
/// `2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 m D^2)`, truncated when terms fall
/// below 1e-10.
pub fn ks_uniform_test(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("need at least one value".into()));
    }
    if let Some((index, _)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::NonFinite {
            context: "KS input outside [0,1]".into(),
            index,
        });
    }
    let m = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mf = m as f64;
    let mut d: f64 = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        d = d.max((i as f64 + 1.0) / mf - u).max(u - i as f64 / mf);
    }
    Ok((d, ks_p_value(d, m)))
}

/// Asymptotic Kolmogorov tail probability at `sqrt(m) * d`.
pub fn ks_p_value(d: f64, m: usize) -> f64 {
    let x = (m as f64).sqrt() * d;
    if x <= 1e-4 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..100_000 {
        let term = (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-10 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Standard normal CDF (Abramowitz-Stegun 7.1.26 rational approximation;
/// absolute error below 1e-7).
pub fn normal_cdf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.2316419 * x.abs());
    let poly = t
        * (0.319381530
            + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
    let tail = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * poly;
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// What generates each replicate's data and score inside the SBC loop.
#[derive(Debug, Clone)]
pub enum SbcDesign {
    /// Identically-zero score: the posterior equals the prior exactly.
    ZeroScore { n: usize },
    /// The splitting-demonstration pipeline: exact treatment mean,
    /// contaminated outcome fit, two-fold splitting.
    SplitNuisance { n: usize },
    /// Full machine-learned pipeline on a simulation scenario.
    Learned {
        scenario: ScenarioSpec,
        learner: Family,
        folds: usize,
    },
}

/// Deliberate posterior defects for the negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Miscalibration {
    None,
    /// Shrink the chain about its mean so the variance halves.
    HalveVariance,
}

#[derive(Debug, Clone, Copy)]
pub struct SbcSettings {
    pub draws: usize,
    pub burn_in: usize,
    pub miscalibration: Miscalibration,
    pub max_failure_fraction: f64,
}

impl Default for SbcSettings {
    fn default() -> Self {
        Self {
            draws: 5000,
            burn_in: 1000,
            miscalibration: Miscalibration::None,
            max_failure_fraction: 0.05,
        }
    }
}

fn apply_miscalibration(chain: &mut [f64], kind: Miscalibration) {
    if kind == Miscalibration::HalveVariance {
        let mean = chain.iter().sum::<f64>() / chain.len() as f64;
        let shrink = 0.5f64.sqrt();
        for v in chain.iter_mut() {
            *v = mean + (*v - mean) * shrink;
        }
    }
}

/// Score components of the splitting-demonstration construction: exact
/// treatment mean, outcome fit contaminated by a scaled copy of the
/// outcome residual.
///
/// On the full sample each unit's contamination uses its own residual;
/// under splitting it comes from a unit of the complement fold (the data
/// the fit would have been estimated on), which breaks the correlation
/// between fit error and score noise.
pub fn contaminated_components(
    scenario: &ScenarioSpec,
    obs: &ObservationSet,
    folds: Option<&FoldAssignment>,
    contaminated: bool,
) -> Result<ScoreComponents> {
    let n = obs.n();
    let scale = (n as f64).powf(1.0 / 3.0);
    let mut pi = Vec::with_capacity(n);
    let mut baseline = Vec::with_capacity(n);
    for row in obs.x().rows() {
        let row = row.as_slice().unwrap();
        pi.push(scenario.treatment_mean(row));
        baseline.push(scenario.outcome_baseline(row));
    }
    let mut mu_hat = baseline.clone();
    if contaminated {
        match folds {
            None => {
                for i in 0..n {
                    mu_hat[i] += (obs.y()[i] - baseline[i]) / scale;
                }
            }
            Some(folds) => {
                for fold in 0..folds.k() {
                    let (train, held) = folds.split_indices(fold);
                    for (r, &i) in held.iter().enumerate() {
                        let j = train[r % train.len()];
                        mu_hat[i] += (obs.y()[j] - baseline[j]) / scale;
                    }
                }
            }
        }
    }
    let nuis = NuisancePredictions::for_observations(obs, pi, mu_hat, NuisanceKind::DirectMu)?;
    build_score_components(obs, &nuis)
}

/// Simulation-based calibration: draw the effect from the prior, simulate,
/// run the pipeline, and record the posterior CDF at the drawn effect.
pub fn run_sbc(
    m: usize,
    prior: &PriorSpec,
    design: &SbcDesign,
    div: DivergenceSpec,
    settings: &SbcSettings,
    seed: u64,
) -> Result<ValidityReport> {
    if m < 20 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 20 replicates, got {m}"
        )));
    }
    let results: Vec<Option<f64>> = (0..m)
        .into_par_iter()
        .map(|k| {
            let rep_seed = derive_seed(seed, Stream::Replicate, k as u64);
            run_sbc_replicate(prior, design, div, settings, rep_seed).ok()
        })
        .collect();
    let h_values: Vec<f64> = results.iter().filter_map(|v| *v).collect();
    let failures = m - h_values.len();
    if (failures as f64) > settings.max_failure_fraction * m as f64 {
        return Err(Error::Learner(format!(
            "calibration pipeline failed on {failures}/{m} replicates"
        )));
    }
    let (ks_statistic, ks_p_value) = ks_uniform_test(&h_values)?;
    Ok(ValidityReport {
        m: h_values.len(),
        h_values,
        ks_statistic,
        ks_p_value,
        failures,
    })
}

fn run_sbc_replicate(
    prior: &PriorSpec,
    design: &SbcDesign,
    div: DivergenceSpec,
    settings: &SbcSettings,
    rep_seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, Stream::Scenario, 1));
    let beta_k = prior.mean + prior.variance.sqrt() * rng.sample::<f64, _>(StandardNormal);

    let sc = match design {
        SbcDesign::ZeroScore { n } => ScoreComponents::new(vec![0.0; *n], vec![0.0; *n])?,
        SbcDesign::SplitNuisance { n } => {
            let scenario = ScenarioSpec::split_demo(*n);
            let obs = simulate(
                &scenario,
                Some(beta_k),
                derive_seed(rep_seed, Stream::Scenario, 0),
            )?;
            let folds = make_folds(*n, 2, derive_seed(rep_seed, Stream::Folds, 0))?;
            contaminated_components(&scenario, &obs, Some(&folds), true)?
        }
        SbcDesign::Learned {
            scenario,
            learner,
            folds,
        } => {
            let obs = simulate(
                scenario,
                Some(beta_k),
                derive_seed(rep_seed, Stream::Scenario, 0),
            )?;
            let k_folds = make_folds(scenario.n, *folds, derive_seed(rep_seed, Stream::Folds, 0))?;
            let pi_task = match scenario.kind {
                ScenarioKind::BinaryExposure => Task::BinaryProbability,
                _ => Task::Regression,
            };
            let spec_pi = LearnerSpec {
                family: *learner,
                task: pi_task,
                seed: derive_seed(rep_seed, Stream::LearnerPi, 0),
            };
            let spec_g = LearnerSpec {
                family: *learner,
                task: Task::Regression,
                seed: derive_seed(rep_seed, Stream::LearnerG, 0),
            };
            let nuis = crossfit_nuisance(&obs, &k_folds, &spec_pi, &spec_g)?;
            build_score_components(&obs, &nuis)?
        }
    };

    let cfg = McmcConfig {
        draws: settings.draws,
        burn_in: settings.burn_in,
        initial_beta: None,
        step_scale: None,
        adapt: true,
        seed: derive_seed(rep_seed, Stream::Chain, 0),
    };
    let mut out = run_chain(&sc, div, prior, &cfg)?;
    apply_miscalibration(&mut out.chain, settings.miscalibration);
    Ok(h_statistic(&out.chain, beta_k))
}

/// Estimators compared by the splitting demonstration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemoEstimator {
    Dml,
    Bayes(DivergenceSpec),
}

impl DemoEstimator {
    pub fn label(&self) -> String {
        match self {
            DemoEstimator::Dml => "DML".into(),
            DemoEstimator::Bayes(div) => div.name(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplitDemoConfig {
    pub replicates: usize,
    pub n: usize,
    pub draws: usize,
    pub burn_in: usize,
    /// Prior for the Bayesian estimators (vague by default).
    pub prior: PriorSpec,
    /// Turn the outcome-fit contamination off to verify both arms center.
    pub contaminated: bool,
    pub seed: u64,
}

impl SplitDemoConfig {
    pub fn new(replicates: usize, n: usize, seed: u64) -> Self {
        Self {
            replicates,
            n,
            draws: 2000,
            burn_in: 500,
            prior: PriorSpec {
                mean: 0.0,
                variance: 10_000.0,
            },
            contaminated: true,
            seed,
        }
    }
}

/// Runs the full-sample and split-sample arms for each estimator on shared
/// simulated replicates and reports standardized estimates
/// `(estimate - beta) / spread`.
pub fn run_split_demo(
    cfg: &SplitDemoConfig,
    estimators: &[DemoEstimator],
) -> Result<Vec<SplitDemoReport>> {
    if cfg.n < 100 {
        return Err(Error::InvalidArgument(
            "the contamination scale needs n >= 100 to matter".into(),
        ));
    }
    let scenario = ScenarioSpec::split_demo(cfg.n);
    let per_rep: Vec<Result<Vec<(f64, f64)>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(cfg.seed, Stream::Replicate, rep as u64);
            let obs = simulate(&scenario, None, derive_seed(rep_seed, Stream::Scenario, 0))?;
            let folds = make_folds(cfg.n, 2, derive_seed(rep_seed, Stream::Folds, 0))?;
            let sc_full = contaminated_components(&scenario, &obs, None, cfg.contaminated)?;
            let sc_split =
                contaminated_components(&scenario, &obs, Some(&folds), cfg.contaminated)?;
            let mut rows = Vec::with_capacity(estimators.len());
            for (e, estimator) in estimators.iter().enumerate() {
                let standardize = |sc: &ScoreComponents, arm: u64| -> Result<f64> {
                    match estimator {
                        DemoEstimator::Dml => {
                            let est = dml_estimate(sc)?;
                            Ok((est.beta_hat - scenario.beta_true) / est.se)
                        }
                        DemoEstimator::Bayes(div) => {
                            let mcmc = McmcConfig {
                                draws: cfg.draws,
                                burn_in: cfg.burn_in,
                                initial_beta: None,
                                step_scale: None,
                                adapt: true,
                                seed: derive_seed(rep_seed, Stream::Chain, (e as u64) * 2 + arm),
                            };
                            let out = run_chain(sc, *div, &cfg.prior, &mcmc)?;
                            Ok((out.mean - scenario.beta_true) / out.sd)
                        }
                    }
                };
                rows.push((standardize(&sc_full, 0)?, standardize(&sc_split, 1)?));
            }
            Ok(rows)
        })
        .collect();

    let mut reports = Vec::with_capacity(estimators.len());
    for (e, estimator) in estimators.iter().enumerate() {
        let mut full = Vec::with_capacity(cfg.replicates);
        let mut split = Vec::with_capacity(cfg.replicates);
        for rep in &per_rep {
            match rep {
                Ok(rows) => {
                    full.push(rows[e].0);
                    split.push(rows[e].1);
                }
                Err(_) => {}
            }
        }
        let failures = cfg.replicates - full.len();
        if (failures as f64) > 0.05 * cfg.replicates as f64 {
            return Err(Error::Learner(format!(
                "splitting demo failed on {failures}/{} replicates",
                cfg.replicates
            )));
        }
        let mean_full = full.iter().sum::<f64>() / full.len() as f64;
        let mean_split = split.iter().sum::<f64>() / split.len() as f64;
        reports.push(SplitDemoReport {
            estimator: estimator.label(),
            standardized_estimates_full: full,
            standardized_estimates_split: split,
            mean_full,
            mean_split,
        });
    }
    Ok(reports)
}

/// Fixed-range histogram as (bin_left, bin_right, count) rows.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<(f64, f64, usize)> {
    assert!(bins > 0 && hi > lo);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}
