//! Acceptance suite: every release gate runs here with pinned tolerances,
//! one PASS line per criterion.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use bdml::cli;
use bdml::dml::dml_estimate;
use bdml::gel::{solve_weights, DivergenceSpec};
use bdml::io::RunConfig;
use bdml::learn::Family;
use bdml::mcmc::{effective_sample_size, run_chain, McmcConfig, PriorSpec};
use bdml::score::ScoreComponents;
use bdml::seeding::{derive_seed, Stream};
use bdml::simbench::{run_benchmark, simulate, BenchMethod, BenchmarkSettings, ScenarioSpec};
use bdml::validity::{
    contaminated_components, run_sbc, run_split_demo, DemoEstimator, Miscalibration, SbcDesign,
    SbcSettings, SplitDemoConfig,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data_file() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/synthetic_boroughs.csv")
        .to_string_lossy()
        .into_owned()
}

#[test]
fn criterion_01_gel_grid_oracle_optimality() {
    let started = Instant::now();
    let lambdas = [0.0, -1.0, -0.5, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    // 500 random feasible vectors, spread over the sizes so the n = 6
    // enumerations stay within the runtime budget
    let sizes: [(usize, usize); 4] = [(3, 200), (4, 150), (5, 100), (6, 50)];
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_residual = 0.0f64;
    for (n, count) in sizes {
        for _ in 0..count {
            let mut psi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            psi[0] = -rng.random_range(0.05..2.0);
            psi[1] = rng.random_range(0.05..2.0);
            let span = psi.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
                - psi.iter().fold(f64::INFINITY, |m, &v| m.min(v));

            let mut corrections = Vec::new();
            let mut solved = Vec::new();
            for &lambda in &lambdas {
                let div = DivergenceSpec::new(lambda).unwrap();
                let sol = solve_weights(&psi, div).unwrap();
                assert!(sol.residuals.0 <= 1e-8, "mass residual {}", sol.residuals.0);
                assert!(
                    sol.residuals.1 <= 1e-8,
                    "moment residual {}",
                    sol.residuals.1
                );
                worst_residual = worst_residual.max(sol.residuals.0).max(sol.residuals.1);
                // first-order slack coefficient: grid points inside the
                // residual slab can undercut the constrained optimum by the
                // multiplier times their moment, so the comparison adds the
                // exact linear term back
                let c = if lambda == -1.0 {
                    -2.0 * n as f64 * sol.tilt
                } else {
                    2.0 * n as f64 * sol.tilt / (1.0 + lambda)
                };
                corrections.push(c);
                solved.push(common::oracle_cr(&sol.weights, lambda));
            }
            let oracle =
                common::grid_oracle(&psi, &lambdas, &corrections, 100, 1e-2 * span);
            for (l, &solved_cr) in solved.iter().enumerate() {
                let gap = solved_cr - oracle[l];
                worst_gap = worst_gap.max(gap);
                assert!(
                    gap <= 1e-6,
                    "solver divergence exceeded the grid oracle by {gap} \
                     (lambda {}, psi {psi:?})",
                    lambdas[l]
                );
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeded 1 min");
    println!(
        "acceptance 01 PASS gel grid-oracle optimality: worst gap {worst_gap:.2e} \
         (limit 1e-6), worst residual {worst_residual:.2e} (limit 1e-8), {elapsed:.1}s"
    );
}

#[test]
fn criterion_02_two_point_forcing() {
    for div in [DivergenceSpec::EL, DivergenceSpec::ETEL, DivergenceSpec::HD] {
        let sol = solve_weights(&[-1.0, 2.0], div).unwrap();
        assert!(
            (sol.weights[0] - 2.0 / 3.0).abs() <= 1e-10,
            "{div}: w0 = {}",
            sol.weights[0]
        );
        assert!((sol.weights[1] - 1.0 / 3.0).abs() <= 1e-10);
    }
    println!("acceptance 02 PASS two-point forcing: p = (2/3, 1/3) within 1e-10 for EL, ETEL, HD");
}

#[test]
fn criterion_03_derived_scalar_root_cases() {
    // EL: tilt is the positive root of 3t^2 + t - 1 = 0
    let t_star = (-1.0 + 13.0f64.sqrt()) / 6.0;
    let el = solve_weights(&[-1.0, 1.0, 2.0], DivergenceSpec::EL).unwrap();
    assert!(
        (el.tilt - t_star).abs() <= 1e-6,
        "EL tilt {} vs {t_star}",
        el.tilt
    );

    // ETEL: e^t is the positive root of 2u^3 + u^2 - 1 = 0 (bisection oracle)
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 2.0 * mid.powi(3) + mid.powi(2) - 1.0 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u_star = 0.5 * (lo + hi);
    let etel = solve_weights(&[-1.0, 1.0, 2.0], DivergenceSpec::ETEL).unwrap();
    assert!(
        (etel.tilt.exp() - u_star).abs() <= 1e-6,
        "ETEL e^t {} vs {u_star}",
        etel.tilt.exp()
    );
    println!(
        "acceptance 03 PASS derived scalar-root cases: EL tilt {:.6} (oracle {:.6}), \
         ETEL e^t {:.6} (oracle {:.6})",
        el.tilt,
        t_star,
        etel.tilt.exp(),
        u_star
    );
}

#[test]
fn criterion_04_posterior_equals_prior_degeneracy() {
    let started = Instant::now();
    let sc = ScoreComponents::new(vec![0.0; 12], vec![0.0; 12]).unwrap();
    let prior = PriorSpec::new(1.0, 2.0).unwrap();
    let cfg = McmcConfig {
        draws: 5000,
        burn_in: 1000,
        seed: 404,
        ..Default::default()
    };
    let out = run_chain(&sc, DivergenceSpec::ETEL, &prior, &cfg).unwrap();
    let ess = effective_sample_size(&out.chain);
    let mc_err = (2.0 / ess).sqrt();
    assert!(
        (out.mean - 1.0).abs() < 3.0 * mc_err,
        "chain mean {} differs from 1 by more than 3 x {mc_err:.4}",
        out.mean
    );
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "runtime {elapsed:.1}s exceeded 10 s");
    println!(
        "acceptance 04 PASS posterior = prior degeneracy: mean {:.4} within 3x{:.4} of 1, \
         ESS {:.0}, {elapsed:.1}s",
        out.mean, mc_err, ess
    );
}

#[test]
fn criterion_05_splitting_bias_reproduction() {
    let started = Instant::now();
    let cfg = SplitDemoConfig {
        draws: 2000,
        burn_in: 500,
        ..SplitDemoConfig::new(1000, 500, 505)
    };
    let estimators = [
        DemoEstimator::Dml,
        DemoEstimator::Bayes(DivergenceSpec::EL),
        DemoEstimator::Bayes(DivergenceSpec::ETEL),
        DemoEstimator::Bayes(DivergenceSpec::HD),
    ];
    let reports = run_split_demo(&cfg, &estimators).unwrap();
    let mut summary = String::new();
    for r in &reports {
        assert!(
            r.mean_split.abs() < 0.15,
            "{}: split-arm mean {} not within 0.15 of 0",
            r.estimator,
            r.mean_split
        );
        assert!(
            r.mean_full > r.mean_split + 0.1,
            "{}: full-arm mean {} does not exceed split-arm mean {} by 0.1",
            r.estimator,
            r.mean_full,
            r.mean_split
        );
        summary += &format!(
            " {}: full {:.3}/split {:.3};",
            r.estimator, r.mean_full, r.mean_split
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1200.0, "runtime {elapsed:.1}s exceeded 20 min");
    println!("acceptance 05 PASS splitting-bias reproduction:{summary} {elapsed:.1}s");
}

#[test]
fn criterion_06_posterior_validity_sbc() {
    let started = Instant::now();
    let prior = PriorSpec::new(1.0, 2.0).unwrap();
    let mut summary = String::new();
    for div in [DivergenceSpec::EL, DivergenceSpec::ETEL, DivergenceSpec::HD] {
        let settings = SbcSettings::default();
        let report = run_sbc(
            200,
            &prior,
            &SbcDesign::SplitNuisance { n: 500 },
            div,
            &settings,
            606,
        )
        .unwrap();
        assert!(
            report.ks_p_value > 0.01,
            "{div}: KS p-value {} fails the 0.01 floor",
            report.ks_p_value
        );
        summary += &format!(" {div}: p {:.3};", report.ks_p_value);
    }

    // negative control: a posterior reported with half its variance must
    // be caught
    let settings = SbcSettings {
        miscalibration: Miscalibration::HalveVariance,
        ..Default::default()
    };
    let control = run_sbc(
        500,
        &prior,
        &SbcDesign::ZeroScore { n: 10 },
        DivergenceSpec::EL,
        &settings,
        607,
    )
    .unwrap();
    assert!(
        control.ks_p_value < 0.01,
        "miscalibrated control was not detected: p {}",
        control.ks_p_value
    );
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 3600.0, "runtime {elapsed:.1}s exceeded 60 min");
    println!(
        "acceptance 06 PASS posterior validity:{summary} negative control p {:.1e} < 0.01, \
         {elapsed:.1}s",
        control.ks_p_value
    );
}

fn parse_metrics_csv(path: &Path) -> BTreeMap<String, (f64, f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        out.insert(
            cells[0].to_string(),
            (
                cells[1].parse().unwrap(),
                cells[2].parse().unwrap(),
                cells[3].parse().unwrap(),
            ),
        );
    }
    out
}

#[test]
fn criterion_07_continuous_exposure_benchmark() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        scenario: Some("continuous".into()),
        n: Some(40),
        p: Some(40),
        replicates: Some(200),
        methods: Some(vec!["el:lasso".into(), "dml:lasso".into()]),
        prior_mean: Some(1.0),
        prior_var: Some(2.0),
        draws: Some(5000),
        burn_in: Some(1000),
        seed: Some(707),
        out: Some(dir.path().to_string_lossy().into_owned()),
        ..Default::default()
    };
    cli::run_simulate(&cfg).unwrap();
    let rows = parse_metrics_csv(&dir.path().join("metrics.csv"));

    let (bias, rmse, coverage) = rows["EL (Lasso)"];
    assert!(
        (-0.06..=0.10).contains(&bias),
        "EL (Lasso) bias {bias} outside [-0.06, 0.10]"
    );
    assert!(rmse < 0.20, "EL (Lasso) RMSE {rmse} not below 0.20");
    assert!(
        (87.0..=99.0).contains(&coverage),
        "EL (Lasso) coverage {coverage} outside [87, 99]"
    );
    let (dml_bias, _, dml_cov) = rows["DML (Lasso)"];
    assert!(
        (-0.08..=0.08).contains(&dml_bias),
        "DML (Lasso) bias {dml_bias} outside [-0.08, 0.08]"
    );
    assert!(
        (84.0..=97.0).contains(&dml_cov),
        "DML (Lasso) coverage {dml_cov} outside [84, 97]"
    );
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 2700.0, "runtime {elapsed:.1}s exceeded 45 min");
    println!(
        "acceptance 07 PASS continuous benchmark: EL(Lasso) bias {bias:.3} rmse {rmse:.3} \
         cov {coverage:.1}; DML(Lasso) bias {dml_bias:.3} cov {dml_cov:.1}; {elapsed:.1}s"
    );
}

#[test]
fn criterion_08_binary_exposure_benchmark() {
    let started = Instant::now();
    let scenario = ScenarioSpec::binary(200, 500);
    let methods = [
        BenchMethod::Bayes {
            div: DivergenceSpec::ETEL,
            learner: Family::Lasso,
        },
        BenchMethod::Bayes {
            div: DivergenceSpec::EL,
            learner: Family::NeuralNet(Default::default()),
        },
        BenchMethod::Bayes {
            div: DivergenceSpec::ETEL,
            learner: Family::NeuralNet(Default::default()),
        },
        BenchMethod::Bayes {
            div: DivergenceSpec::HD,
            learner: Family::NeuralNet(Default::default()),
        },
    ];
    let settings = BenchmarkSettings::new(PriorSpec::new(0.0, 10_000.0).unwrap());
    let rows = run_benchmark(&scenario, &methods, 200, 808, &settings).unwrap();

    let lasso = &rows[0];
    assert!(
        (0.0..=0.16).contains(&lasso.bias),
        "ETEL (Lasso) bias {} outside [0, 0.16]",
        lasso.bias
    );
    assert!(lasso.rmse < 0.30, "ETEL (Lasso) RMSE {} not below 0.30", lasso.rmse);
    assert!(
        (87.0..=99.0).contains(&lasso.coverage),
        "ETEL (Lasso) coverage {} outside [87, 99]",
        lasso.coverage
    );
    let mut summary = format!(
        "ETEL(Lasso) bias {:.3} rmse {:.3} cov {:.1};",
        lasso.bias, lasso.rmse, lasso.coverage
    );
    for row in &rows[1..] {
        assert!(
            row.coverage >= 82.0,
            "{} coverage {} below 82",
            row.method,
            row.coverage
        );
        summary += &format!(" {} cov {:.1};", row.method, row.coverage);
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 7200.0, "runtime {elapsed:.1}s exceeded 2 h");
    println!("acceptance 08 PASS binary benchmark: {summary} {elapsed:.1}s");
}

#[test]
fn criterion_09_flat_prior_agreement() {
    let started = Instant::now();
    let scenario = ScenarioSpec::split_demo(500);
    let prior = PriorSpec::new(0.0, 10_000.0).unwrap();
    let mut agreements = 0;
    for k in 0..50u64 {
        let obs = simulate(&scenario, None, derive_seed(909, Stream::Replicate, k)).unwrap();
        let sc = contaminated_components(&scenario, &obs, None, false).unwrap();
        let freq = dml_estimate(&sc).unwrap();
        let cfg = McmcConfig {
            draws: 5000,
            burn_in: 1000,
            seed: derive_seed(909, Stream::Chain, k),
            ..Default::default()
        };
        let posterior = run_chain(&sc, DivergenceSpec::EL, &prior, &cfg).unwrap();
        if (posterior.mean - freq.beta_hat).abs() < 2.0 * posterior.sd {
            agreements += 1;
        }
    }
    assert!(
        agreements >= 45,
        "flat-prior posterior mean agreed with the point estimate on only {agreements}/50 data sets"
    );
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "acceptance 09 PASS flat-prior agreement: {agreements}/50 within 2 posterior SDs, \
         {elapsed:.1}s"
    );
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        out.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    out
}

#[test]
fn criterion_10_cli_determinism() {
    let started = Instant::now();
    let psi_file = tempfile::NamedTempFile::with_suffix(".csv").unwrap();
    std::fs::write(psi_file.path(), "psi\n-1.0\n0.4\n2.0\n-0.3\n").unwrap();

    type Runner = (&'static str, Box<dyn Fn(&RunConfig) -> bdml::Result<String>>, RunConfig);
    let commands: Vec<Runner> = vec![
        (
            "fit",
            Box::new(cli::run_fit),
            RunConfig {
                data: Some(data_file()),
                divergence: Some("etel".into()),
                learner_pi: Some("lasso".into()),
                learner_g: Some("lasso".into()),
                draws: Some(400),
                burn_in: Some(100),
                seed: Some(11),
                ..Default::default()
            },
        ),
        (
            "simulate",
            Box::new(cli::run_simulate),
            RunConfig {
                scenario: Some("continuous".into()),
                n: Some(40),
                p: Some(12),
                replicates: Some(4),
                methods: Some(vec!["el:lasso".into(), "dml:lasso".into()]),
                draws: Some(300),
                burn_in: Some(100),
                seed: Some(12),
                ..Default::default()
            },
        ),
        (
            "validate",
            Box::new(cli::run_validate),
            RunConfig {
                scenario: Some("degenerate".into()),
                replicates: Some(25),
                draws: Some(400),
                burn_in: Some(100),
                seed: Some(13),
                ..Default::default()
            },
        ),
        (
            "split-demo",
            Box::new(cli::run_split_demo_cmd),
            RunConfig {
                replicates: Some(6),
                n: Some(120),
                draws: Some(300),
                burn_in: Some(100),
                seed: Some(14),
                ..Default::default()
            },
        ),
        (
            "gel-debug",
            Box::new(cli::run_gel_debug),
            RunConfig {
                data: Some(psi_file.path().to_string_lossy().into_owned()),
                divergence: Some("hd".into()),
                ..Default::default()
            },
        ),
    ];

    for (name, runner, base) in &commands {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = base.clone();
        cfg_a.out = Some(dir_a.path().to_string_lossy().into_owned());
        let mut cfg_b = base.clone();
        cfg_b.out = Some(dir_b.path().to_string_lossy().into_owned());
        let text_a = runner(&cfg_a).unwrap();
        let text_b = runner(&cfg_b).unwrap();
        assert_eq!(text_a, text_b, "{name}: stdout differs between runs");
        let files_a = read_dir_bytes(dir_a.path());
        let files_b = read_dir_bytes(dir_b.path());
        assert_eq!(
            files_a.keys().collect::<Vec<_>>(),
            files_b.keys().collect::<Vec<_>>(),
            "{name}: artifact sets differ"
        );
        for (file, bytes) in &files_a {
            assert_eq!(
                bytes, &files_b[file],
                "{name}: artifact {file} is not byte-identical"
            );
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "acceptance 10 PASS determinism: fit, simulate, validate, split-demo and gel-debug \
         are byte-identical across reruns, {elapsed:.1}s"
    );
}

#[test]
fn criterion_11_application_format_check() {
    let started = Instant::now();
    let mut completed = 0;
    for divergence in ["el", "etel", "hd"] {
        for learner in ["lasso", "forest", "nn"] {
            let dir = tempfile::tempdir().unwrap();
            let cfg = RunConfig {
                data: Some(data_file()),
                divergence: Some(divergence.into()),
                learner_pi: Some(learner.into()),
                learner_g: Some(learner.into()),
                draws: Some(1500),
                burn_in: Some(300),
                prior_mean: Some(0.0),
                prior_var: Some(2.0),
                seed: Some(1111),
                out: Some(dir.path().to_string_lossy().into_owned()),
                ..Default::default()
            };
            let text = cli::run_fit(&cfg).unwrap();
            // a posterior mean with its 95% interval plus the comparator
            assert!(text.contains("posterior mean"), "{divergence}/{learner}");
            assert!(text.contains("95% interval"));
            assert!(text.contains("frequentist comparator"));
            assert!(text.contains("cannot be reproduced"));
            let json: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(dir.path().join("fit_report.json")).unwrap(),
            )
            .unwrap();
            assert_eq!(json["n"], 33);
            assert_eq!(json["p"], 31);
            assert!(json["posterior_mean"].is_number());
            assert!(json["ci_lo"].as_f64().unwrap() <= json["ci_hi"].as_f64().unwrap());
            completed += 1;
        }
    }
    assert_eq!(completed, 9);
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "acceptance 11 PASS application format check: 9/9 divergence-learner combinations \
         completed on the shipped 33x31 table, {elapsed:.1}s"
    );
}
