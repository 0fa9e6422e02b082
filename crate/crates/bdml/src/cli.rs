//! Command implementations behind the `bdml` binary: configuration
//! resolution, pipeline orchestration and deterministic artifact writing.
//! The binary itself only parses flags and forwards here, so tests drive
//! the exact code paths the executable runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::crossfit::{crossfit_nuisance, make_folds};
use crate::dml::dml_estimate;
use crate::error::{Error, Result};
use crate::gel::{solve_weights, DivergenceSpec};
use crate::io::{fmt_g12, load_borough_csv, RunConfig};
use crate::learn::{Family, LearnerSpec, Task};
use crate::mcmc::{run_chain, McmcConfig, PriorSpec};
use crate::score::build_score_components;
use crate::seeding::{derive_seed, Stream};
use crate::simbench::{run_benchmark, BenchMethod, BenchmarkSettings, ScenarioSpec};
use crate::validity::{
    histogram, run_sbc, run_split_demo, DemoEstimator, Miscalibration, SbcDesign, SbcSettings,
    SplitDemoConfig,
};

fn parse_divergence(cfg: &RunConfig) -> Result<DivergenceSpec> {
    if let Some(lambda) = cfg.lambda {
        return DivergenceSpec::new(lambda);
    }
    match cfg.divergence.as_deref() {
        None => Ok(DivergenceSpec::EL),
        Some(name) => match name.to_ascii_lowercase().as_str() {
            "el" => Ok(DivergenceSpec::EL),
            "etel" => Ok(DivergenceSpec::ETEL),
            "hd" => Ok(DivergenceSpec::HD),
            other => other
                .parse::<f64>()
                .map_err(|_| {
                    Error::Config(format!(
                        "unknown divergence '{other}' (use el, etel, hd, or a number)"
                    ))
                })
                .and_then(DivergenceSpec::new),
        },
    }
}

fn parse_family(name: &str) -> Result<Family> {
    match name.to_ascii_lowercase().as_str() {
        "lasso" => Ok(Family::Lasso),
        "forest" | "rf" | "random-forest" | "random_forest" => {
            Ok(Family::RandomForest(Default::default()))
        }
        "nn" | "neural-net" | "neural-network" | "neural_net" => {
            Ok(Family::NeuralNet(Default::default()))
        }
        other => Err(Error::Config(format!(
            "unknown learner '{other}' (use lasso, forest, or nn)"
        ))),
    }
}

fn parse_method(text: &str) -> Result<BenchMethod> {
    let (head, learner) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("method '{text}' is not divergence:learner")))?;
    let learner = parse_family(learner.trim())?;
    match head.trim().to_ascii_lowercase().as_str() {
        "dml" => Ok(BenchMethod::Dml { learner }),
        "el" => Ok(BenchMethod::Bayes {
            div: DivergenceSpec::EL,
            learner,
        }),
        "etel" => Ok(BenchMethod::Bayes {
            div: DivergenceSpec::ETEL,
            learner,
        }),
        "hd" => Ok(BenchMethod::Bayes {
            div: DivergenceSpec::HD,
            learner,
        }),
        other => Err(Error::Config(format!(
            "unknown estimator '{other}' (use el, etel, hd, or dml)"
        ))),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.out.clone().unwrap_or_else(|| "bdml-out".into()));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn config_block(lines: &[(&str, String)]) -> String {
    let mut s = String::from("resolved configuration:\n");
    for (k, v) in lines {
        let _ = writeln!(s, "  {k} = {v}");
    }
    s
}

/// Everything `fit` reports, serialized as JSON alongside the text report.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub data: String,
    pub n: usize,
    pub p: usize,
    pub divergence: String,
    pub lambda: f64,
    pub learner_pi: String,
    pub learner_g: String,
    pub folds: usize,
    pub draws: usize,
    pub burn_in: usize,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub seed: u64,
    pub posterior_mean: f64,
    pub posterior_sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub acceptance_rate: f64,
    pub dml_estimate: f64,
    pub dml_se: f64,
    pub dml_ci_lo: f64,
    pub dml_ci_hi: f64,
}

/// Loads the borough table, cross-fits the nuisances, samples the profile
/// posterior and writes the text + JSON report pair.
pub fn run_fit(cfg: &RunConfig) -> Result<String> {
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("fit needs a data path (config key 'data')".into()))?;
    let div = parse_divergence(cfg)?;
    let pi_family = parse_family(cfg.learner_pi.as_deref().unwrap_or("forest"))?;
    let g_family = parse_family(cfg.learner_g.as_deref().unwrap_or("forest"))?;
    let folds_k = cfg.folds.unwrap_or(2);
    let draws = cfg.draws.unwrap_or(10_000);
    let burn_in = cfg.burn_in.unwrap_or(1000);
    let prior = PriorSpec::new(cfg.prior_mean.unwrap_or(0.0), cfg.prior_var.unwrap_or(2.0))?;
    let seed = cfg.seed.unwrap_or(0);

    let table = load_borough_csv(Path::new(&data))?;
    let obs = table.to_observations()?;
    let folds = make_folds(obs.n(), folds_k, derive_seed(seed, Stream::Folds, 0))?;
    let pi_task = if obs.treatment_is_binary() {
        Task::BinaryProbability
    } else {
        Task::Regression
    };
    let spec_pi = LearnerSpec {
        family: pi_family,
        task: pi_task,
        seed: derive_seed(seed, Stream::LearnerPi, 0),
    };
    let spec_g = LearnerSpec {
        family: g_family,
        task: Task::Regression,
        seed: derive_seed(seed, Stream::LearnerG, 0),
    };
    let nuis = crossfit_nuisance(&obs, &folds, &spec_pi, &spec_g)?;
    let sc = build_score_components(&obs, &nuis)?;
    let freq = dml_estimate(&sc)?;
    let mcmc = McmcConfig {
        draws,
        burn_in,
        initial_beta: None,
        step_scale: None,
        adapt: true,
        seed: derive_seed(seed, Stream::Chain, 0),
    };
    let posterior = run_chain(&sc, div, &prior, &mcmc)?;

    let report = FitReport {
        data: data.clone(),
        n: obs.n(),
        p: obs.p(),
        divergence: div.name(),
        lambda: div.lambda(),
        learner_pi: pi_family.label().into(),
        learner_g: g_family.label().into(),
        folds: folds_k,
        draws,
        burn_in,
        prior_mean: prior.mean,
        prior_var: prior.variance,
        seed,
        posterior_mean: posterior.mean,
        posterior_sd: posterior.sd,
        ci_lo: posterior.equal_tailed_95.0,
        ci_hi: posterior.equal_tailed_95.1,
        acceptance_rate: posterior.acceptance_rate,
        dml_estimate: freq.beta_hat,
        dml_se: freq.se,
        dml_ci_lo: freq.ci95.0,
        dml_ci_hi: freq.ci95.1,
    };

    let mut text = String::from("treatment-effect fit\n====================\n");
    text += &config_block(&[
        ("data", report.data.clone()),
        ("n", report.n.to_string()),
        ("p", report.p.to_string()),
        ("divergence", format!("{} (lambda = {})", report.divergence, report.lambda)),
        ("learner_pi", report.learner_pi.clone()),
        ("learner_g", report.learner_g.clone()),
        ("folds", report.folds.to_string()),
        ("draws", report.draws.to_string()),
        ("burn_in", report.burn_in.to_string()),
        (
            "prior",
            format!("N({}, {})", report.prior_mean, report.prior_var),
        ),
        ("seed", report.seed.to_string()),
    ]);
    let _ = writeln!(text, "\nposterior mean     {:>12.6}", report.posterior_mean);
    let _ = writeln!(text, "posterior sd       {:>12.6}", report.posterior_sd);
    let _ = writeln!(
        text,
        "95% interval       ({:.6}, {:.6})",
        report.ci_lo, report.ci_hi
    );
    let _ = writeln!(text, "acceptance rate    {:>12.6}", report.acceptance_rate);
    let _ = writeln!(text, "\nfrequentist comparator");
    let _ = writeln!(text, "point estimate     {:>12.6}", report.dml_estimate);
    let _ = writeln!(text, "standard error     {:>12.6}", report.dml_se);
    let _ = writeln!(
        text,
        "95% interval       ({:.6}, {:.6})",
        report.dml_ci_lo, report.dml_ci_hi
    );
    text += "\nnote: estimates are specific to the input file; published results\n\
             from other datasets cannot be reproduced from this output.\n";

    let dir = out_dir(cfg)?;
    write_text(&dir.join("fit_report.txt"), &text)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    write_text(&dir.join("fit_report.json"), &(json + "\n"))?;
    Ok(text)
}

/// Runs the benchmark replicate loop and writes the metrics CSV.
pub fn run_simulate(cfg: &RunConfig) -> Result<String> {
    let scenario = resolve_scenario(cfg, "continuous")?;
    let methods_text = cfg.methods.clone().unwrap_or_else(|| {
        vec![
            "etel:lasso".into(),
            "el:lasso".into(),
            "hd:lasso".into(),
            "dml:lasso".into(),
        ]
    });
    let methods = methods_text
        .iter()
        .map(|m| parse_method(m))
        .collect::<Result<Vec<_>>>()?;
    let replicates = cfg.replicates.unwrap_or(200);
    let seed = cfg.seed.unwrap_or(0);
    // vague prior for the binary design, informative for the continuous one
    let default_prior = match scenario.kind {
        crate::simbench::ScenarioKind::BinaryExposure => (0.0, 10_000.0),
        _ => (1.0, 2.0),
    };
    let prior = PriorSpec::new(
        cfg.prior_mean.unwrap_or(default_prior.0),
        cfg.prior_var.unwrap_or(default_prior.1),
    )?;
    let mut settings = BenchmarkSettings::new(prior);
    settings.folds = cfg.folds.unwrap_or(2);
    settings.draws = cfg.draws.unwrap_or(5000);
    settings.burn_in = cfg.burn_in.unwrap_or(1000);

    let started = Instant::now();
    let rows = run_benchmark(&scenario, &methods, replicates, seed, &settings)?;
    let runtime = if cfg.timing.unwrap_or(false) {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };

    let mut csv_text = String::from("method,bias,rmse,coverage,replicates,runtime_seconds\n");
    for row in &rows {
        let _ = writeln!(
            csv_text,
            "{},{},{},{},{},{}",
            row.method,
            fmt_g12(row.bias),
            fmt_g12(row.rmse),
            fmt_g12(row.coverage),
            row.replicates,
            fmt_g12(runtime)
        );
    }
    let dir = out_dir(cfg)?;
    write_text(&dir.join("metrics.csv"), &csv_text)?;

    let mut text = String::from("simulation benchmark\n====================\n");
    text += &config_block(&[
        ("scenario", format!("{:?}", scenario.kind)),
        ("n", scenario.n.to_string()),
        ("p", scenario.p.to_string()),
        ("replicates", replicates.to_string()),
        ("methods", methods_text.join(",")),
        ("folds", settings.folds.to_string()),
        ("draws", settings.draws.to_string()),
        ("burn_in", settings.burn_in.to_string()),
        ("prior", format!("N({}, {})", prior.mean, prior.variance)),
        ("seed", seed.to_string()),
    ]);
    let _ = writeln!(
        text,
        "\n{:<28} {:>9} {:>9} {:>9} {:>6}",
        "method", "bias", "rmse", "coverage", "reps"
    );
    for row in &rows {
        let _ = writeln!(
            text,
            "{:<28} {:>9.3} {:>9.3} {:>9.1} {:>6}",
            row.method, row.bias, row.rmse, row.coverage, row.replicates
        );
    }
    Ok(text)
}

fn resolve_scenario(cfg: &RunConfig, default_kind: &str) -> Result<ScenarioSpec> {
    let kind = cfg
        .scenario
        .clone()
        .unwrap_or_else(|| default_kind.to_string());
    let mut scenario = match kind.to_ascii_lowercase().as_str() {
        "binary" => ScenarioSpec::binary(cfg.n.unwrap_or(200), cfg.p.unwrap_or(500)),
        "continuous" => ScenarioSpec::continuous(cfg.n.unwrap_or(40), cfg.p.unwrap_or(40)),
        "split" | "split-demo" | "split_demo" => ScenarioSpec::split_demo(cfg.n.unwrap_or(500)),
        other => {
            return Err(Error::Config(format!(
                "unknown scenario '{other}' (use binary, continuous, or split)"
            )))
        }
    };
    if let Some(n) = cfg.n {
        scenario.n = n;
    }
    scenario.validate()?;
    Ok(scenario)
}

/// Runs the posterior-validity harness and writes the H artifacts.
pub fn run_validate(cfg: &RunConfig) -> Result<String> {
    let m = cfg.replicates.unwrap_or(200);
    let seed = cfg.seed.unwrap_or(0);
    let div = parse_divergence(cfg)?;
    let prior = PriorSpec::new(cfg.prior_mean.unwrap_or(1.0), cfg.prior_var.unwrap_or(2.0))?;
    let scenario_name = cfg.scenario.clone().unwrap_or_else(|| "split".into());
    let design = match scenario_name.to_ascii_lowercase().as_str() {
        "degenerate" | "zero" => SbcDesign::ZeroScore {
            n: cfg.n.unwrap_or(10),
        },
        "split" | "split-demo" | "split_demo" => SbcDesign::SplitNuisance {
            n: cfg.n.unwrap_or(500),
        },
        "binary" | "continuous" => SbcDesign::Learned {
            scenario: resolve_scenario(cfg, "continuous")?,
            learner: parse_family(cfg.learner_pi.as_deref().unwrap_or("lasso"))?,
            folds: cfg.folds.unwrap_or(2),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown validation scenario '{other}' (use degenerate, split, binary, continuous)"
            )))
        }
    };
    let settings = SbcSettings {
        draws: cfg.draws.unwrap_or(5000),
        burn_in: cfg.burn_in.unwrap_or(1000),
        miscalibration: if cfg.miscalibrate.unwrap_or(false) {
            Miscalibration::HalveVariance
        } else {
            Miscalibration::None
        },
        max_failure_fraction: 0.05,
    };
    let report = run_sbc(m, &prior, &design, div, &settings, seed)?;

    let dir = out_dir(cfg)?;
    let mut values = String::from("replicate,h\n");
    for (i, h) in report.h_values.iter().enumerate() {
        let _ = writeln!(values, "{i},{}", fmt_g12(*h));
    }
    write_text(&dir.join("h_values.csv"), &values)?;
    let mut hist = String::from("bin_left,bin_right,count\n");
    for (lo, hi, count) in histogram(&report.h_values, 20, 0.0, 1.0) {
        let _ = writeln!(hist, "{},{},{count}", fmt_g12(lo), fmt_g12(hi));
    }
    write_text(&dir.join("h_histogram.csv"), &hist)?;

    let mut text = String::from("posterior validity check\n========================\n");
    text += &config_block(&[
        ("scenario", scenario_name.clone()),
        ("replicates", m.to_string()),
        ("divergence", div.name()),
        ("prior", format!("N({}, {})", prior.mean, prior.variance)),
        ("draws", settings.draws.to_string()),
        ("burn_in", settings.burn_in.to_string()),
        (
            "miscalibrated",
            (settings.miscalibration != Miscalibration::None).to_string(),
        ),
        ("seed", seed.to_string()),
    ]);
    let _ = writeln!(text, "\nks_statistic = {}", fmt_g12(report.ks_statistic));
    let _ = writeln!(text, "ks_p_value   = {}", fmt_g12(report.ks_p_value));
    let _ = writeln!(text, "replicates   = {} ({} failed)", report.m, report.failures);
    write_text(&dir.join("validate_report.txt"), &text)?;
    Ok(text)
}

/// Runs both arms of the splitting demonstration for the frequentist
/// estimator and all three named divergences.
pub fn run_split_demo_cmd(cfg: &RunConfig) -> Result<String> {
    let mut demo = SplitDemoConfig::new(
        cfg.replicates.unwrap_or(1000),
        cfg.n.unwrap_or(500),
        cfg.seed.unwrap_or(0),
    );
    if let Some(draws) = cfg.draws {
        demo.draws = draws;
    }
    if let Some(burn_in) = cfg.burn_in {
        demo.burn_in = burn_in;
    }
    demo.prior = PriorSpec::new(
        cfg.prior_mean.unwrap_or(0.0),
        cfg.prior_var.unwrap_or(10_000.0),
    )?;
    let estimators = [
        DemoEstimator::Dml,
        DemoEstimator::Bayes(DivergenceSpec::EL),
        DemoEstimator::Bayes(DivergenceSpec::ETEL),
        DemoEstimator::Bayes(DivergenceSpec::HD),
    ];
    let reports = run_split_demo(&demo, &estimators)?;

    let dir = out_dir(cfg)?;
    let mut estimates = String::from("method,arm,replicate,value\n");
    let mut hist = String::from("method,arm,bin_left,bin_right,count\n");
    for r in &reports {
        for (arm, values) in [
            ("full", &r.standardized_estimates_full),
            ("split", &r.standardized_estimates_split),
        ] {
            for (i, v) in values.iter().enumerate() {
                let _ = writeln!(estimates, "{},{arm},{i},{}", r.estimator, fmt_g12(*v));
            }
            for (lo, hi, count) in histogram(values, 48, -8.0, 8.0) {
                let _ = writeln!(
                    hist,
                    "{},{arm},{},{},{count}",
                    r.estimator,
                    fmt_g12(lo),
                    fmt_g12(hi)
                );
            }
        }
    }
    write_text(&dir.join("split_demo_estimates.csv"), &estimates)?;
    write_text(&dir.join("split_demo_histogram.csv"), &hist)?;

    let mut text = String::from("sample-splitting demonstration\n==============================\n");
    text += &config_block(&[
        ("replicates", demo.replicates.to_string()),
        ("n", demo.n.to_string()),
        ("draws", demo.draws.to_string()),
        ("burn_in", demo.burn_in.to_string()),
        (
            "prior",
            format!("N({}, {})", demo.prior.mean, demo.prior.variance),
        ),
        ("seed", demo.seed.to_string()),
    ]);
    let _ = writeln!(
        text,
        "\n{:<8} {:>12} {:>12}",
        "method", "mean(full)", "mean(split)"
    );
    for r in &reports {
        let _ = writeln!(
            text,
            "{:<8} {:>12.4} {:>12.4}",
            r.estimator, r.mean_full, r.mean_split
        );
    }
    write_text(&dir.join("split_demo_report.txt"), &text)?;
    Ok(text)
}

/// Solves the weight problem on a score column read from a CSV file and
/// prints weights, multipliers and residuals.
pub fn run_gel_debug(cfg: &RunConfig) -> Result<String> {
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("gel-debug needs a data path".into()))?;
    let column = cfg.column.clone().unwrap_or_else(|| "psi".into());
    let div = parse_divergence(cfg)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(Path::new(&data))
        .map_err(|e| Error::Config(format!("cannot open {data}: {e}")))?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(&column))
        .ok_or_else(|| Error::Data {
            row: 0,
            column: Some(column.clone()),
            message: "score column not found".into(),
        })?;
    let mut psi = Vec::new();
    for (r, row) in reader.records().enumerate() {
        let row = row?;
        let raw = row.get(col).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| Error::Data {
            row: r + 1,
            column: Some(column.clone()),
            message: format!("not numeric: '{raw}'"),
        })?;
        psi.push(v);
    }

    let sol = solve_weights(&psi, div)?;
    let mut text = format!("weight solve ({}, n = {})\n", div.name(), psi.len());
    let _ = writeln!(
        text,
        "tilt = {}  normalizer = {}",
        fmt_g12(sol.tilt),
        sol.normalizer.map(fmt_g12).unwrap_or_else(|| "-".into())
    );
    let _ = writeln!(text, "log_profile = {}", fmt_g12(sol.log_profile));
    let _ = writeln!(
        text,
        "residuals: mass = {}, moment = {}  (iterations = {})",
        fmt_g12(sol.residuals.0),
        fmt_g12(sol.residuals.1),
        sol.iterations
    );
    let _ = writeln!(text, "\n{:>6} {:>18} {:>18}", "index", "psi", "weight");
    for (i, (v, w)) in psi.iter().zip(&sol.weights).enumerate() {
        let _ = writeln!(text, "{i:>6} {:>18} {:>18}", fmt_g12(*v), fmt_g12(*w));
    }

    if cfg.out.is_some() {
        let dir = out_dir(cfg)?;
        let mut csv_text = String::from("index,psi,weight\n");
        for (i, (v, w)) in psi.iter().zip(&sol.weights).enumerate() {
            let _ = writeln!(csv_text, "{i},{},{}", fmt_g12(*v), fmt_g12(*w));
        }
        write_text(&dir.join("gel_weights.csv"), &csv_text)?;
    }
    Ok(text)
}
