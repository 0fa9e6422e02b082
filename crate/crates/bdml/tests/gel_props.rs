//! Property tests for the weight solver and the factored score.

use bdml::gel::{check_feasibility, solve_weights, DivergenceSpec, CONSTRAINT_TOL};
use bdml::score::{evaluate_score, ScoreComponents};
use proptest::prelude::*;

fn feasible_psi() -> impl Strategy<Value = Vec<f64>> {
    // at least one strictly negative and one strictly positive entry
    (
        prop::collection::vec(-3.0f64..3.0, 1..10),
        0.05f64..3.0,
        0.05f64..3.0,
    )
        .prop_map(|(mut tail, neg, pos)| {
            tail.push(-neg);
            tail.push(pos);
            tail
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_meets_constraints_on_feasible_input(psi in feasible_psi(), lambda in prop_oneof![
        Just(0.0), Just(-1.0), Just(-0.5), Just(0.5)
    ]) {
        prop_assert!(check_feasibility(&psi).feasible);
        let div = DivergenceSpec::new(lambda).unwrap();
        let sol = solve_weights(&psi, div).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(sol.residuals.0 <= CONSTRAINT_TOL);
        prop_assert!(sol.residuals.1 <= CONSTRAINT_TOL);
        prop_assert!(sol.weights.iter().all(|&w| w > 0.0));
        // uniform weights are the unconstrained optimum, so the profile is
        // bounded above by -n log n
        let n = psi.len() as f64;
        prop_assert!(sol.log_profile <= -n * n.ln() + 1e-9);
    }

    #[test]
    fn weights_ignore_positive_rescaling(psi in feasible_psi(), c in 0.01f64..100.0) {
        let div = DivergenceSpec::HD;
        let base = solve_weights(&psi, div).unwrap();
        let scaled: Vec<f64> = psi.iter().map(|&v| c * v).collect();
        let sol = solve_weights(&scaled, div).unwrap();
        for (a, b) in base.weights.iter().zip(&sol.weights) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn score_is_exactly_linear_in_beta(
        offset in prop::collection::vec(-5.0f64..5.0, 2..12),
        slope_seed in prop::collection::vec(-5.0f64..5.0, 2..12),
        b1 in -4.0f64..4.0,
        b2 in -4.0f64..4.0,
        mix in 0.0f64..1.0,
    ) {
        let n = offset.len().min(slope_seed.len());
        let sc = ScoreComponents::new(offset[..n].to_vec(), slope_seed[..n].to_vec()).unwrap();
        let at_mix = evaluate_score(&sc, mix * b1 + (1.0 - mix) * b2);
        let e1 = evaluate_score(&sc, b1);
        let e2 = evaluate_score(&sc, b2);
        for i in 0..n {
            let combined = mix * e1[i] + (1.0 - mix) * e2[i];
            prop_assert!((at_mix[i] - combined).abs() <= 1e-9 * (1.0 + combined.abs()));
        }
    }
}
