use bdml::gel::DivergenceSpec;
use bdml::learn::Family;
use bdml::mcmc::PriorSpec;
use bdml::simbench::{run_benchmark, BenchMethod, BenchmarkSettings, ScenarioSpec};
use std::time::Instant;

fn main() {
    let scenario = ScenarioSpec::continuous(40, 40);
    let methods = [
        BenchMethod::Bayes { div: DivergenceSpec::EL, learner: Family::Lasso },
        BenchMethod::Dml { learner: Family::Lasso },
    ];
    for k in [10usize, 20, 40] {
        let t = Instant::now();
        let mut settings = BenchmarkSettings::new(PriorSpec::new(1.0, 2.0).unwrap());
        settings.folds = k;
        settings.draws = 2500;
        settings.burn_in = 500;
        let rows = run_benchmark(&scenario, &methods, 100, 707, &settings).unwrap();
        for r in &rows {
            println!(
                "K={k} {:<12} bias {:+.4} rmse {:.4} cov {:.1}  [{:.0?}]",
                r.method, r.bias, r.rmse, r.coverage, t.elapsed()
            );
        }
    }
}
