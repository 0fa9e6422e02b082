// timing probe for the heavy acceptance pieces
use bdml::learn::{fit, LearnerSpec, Task};
use bdml::simbench::{simulate, ScenarioSpec};
use bdml::crossfit::make_folds;
use std::time::Instant;

fn main() {
    let sc = ScenarioSpec::binary(200, 500);
    let obs = simulate(&sc, None, 1).unwrap();
    let folds = make_folds(200, 2, 0).unwrap();
    let (train, _) = folds.split_indices(0);
    let mut x = ndarray::Array2::zeros((train.len(), 500));
    for (r, &i) in train.iter().enumerate() { x.row_mut(r).assign(&obs.x().row(i)); }
    let d: Vec<f64> = train.iter().map(|&i| obs.d()[i]).collect();
    let y: Vec<f64> = train.iter().map(|&i| obs.y()[i]).collect();

    let t = Instant::now();
    let _m = fit(&LearnerSpec::neural_net(Task::Regression, 3), &x.view(), &y).unwrap();
    println!("mlp regression fit (n=100, p=500): {:.2?}", t.elapsed());

    let t = Instant::now();
    let _m = fit(&LearnerSpec::neural_net(Task::BinaryProbability, 3), &x.view(), &d).unwrap();
    println!("mlp logistic fit: {:.2?}", t.elapsed());

    let t = Instant::now();
    let _m = fit(&LearnerSpec::lasso(Task::Regression, 3), &x.view(), &y).unwrap();
    println!("lasso regression fit: {:.2?}", t.elapsed());

    let t = Instant::now();
    let _m = fit(&LearnerSpec::lasso(Task::BinaryProbability, 3), &x.view(), &d).unwrap();
    println!("lasso logistic fit: {:.2?}", t.elapsed());

    let t = Instant::now();
    let _m = fit(&LearnerSpec::forest(Task::Regression, 3), &x.view(), &y).unwrap();
    println!("forest regression fit: {:.2?}", t.elapsed());

    // chain timing at n=200 and n=500
    use bdml::score::ScoreComponents;
    use bdml::mcmc::{run_chain, McmcConfig, PriorSpec};
    use bdml::gel::DivergenceSpec;
    for n in [200usize, 500] {
        let slope: Vec<f64> = (0..n).map(|i| 0.5 + 0.01*(i as f64 % 7.0)).collect();
        let offset: Vec<f64> = slope.iter().enumerate().map(|(i, b)| b + 0.3*((i as f64 * 0.77).sin())).collect();
        let sc = ScoreComponents::new(offset, slope).unwrap();
        for div in [DivergenceSpec::EL, DivergenceSpec::ETEL, DivergenceSpec::HD] {
            let t = Instant::now();
            let cfg = McmcConfig { draws: 5000, burn_in: 1000, seed: 1, ..Default::default() };
            let out = run_chain(&sc, div, &PriorSpec::new(0.0, 10000.0).unwrap(), &cfg).unwrap();
            println!("chain n={n} {div:?}: {:.2?} (acc {:.2})", t.elapsed(), out.acceptance_rate);
        }
    }
}
