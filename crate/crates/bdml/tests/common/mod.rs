//! Shared test oracles: an independent Cressie-Read evaluator and a pruned
//! simplex-grid search used to verify solver optimality.

/// Cressie-Read divergence evaluated independently of the library,
/// including the boundary limits (zero weights are +inf for lambda >= 0
/// and finite for the tilt and Hellinger members).
pub fn oracle_cr(weights: &[f64], lambda: f64) -> f64 {
    let n = weights.len() as f64;
    if lambda == 0.0 {
        let mut s = 0.0;
        for &w in weights {
            if w <= 0.0 {
                return f64::INFINITY;
            }
            s += (n * w).ln();
        }
        -2.0 * s
    } else if lambda == -1.0 {
        let mut s = 0.0;
        for &w in weights {
            if w > 0.0 {
                s += w * (n * w).ln();
            }
        }
        2.0 * n * s
    } else {
        let c = 2.0 / (lambda * (1.0 + lambda));
        let mut s = 0.0;
        for &w in weights {
            if w <= 0.0 {
                if -lambda < 0.0 {
                    return f64::INFINITY;
                }
                s += -1.0; // (n*0)^(-lambda) = 0 for lambda < 0
            } else {
                s += (n * w).powf(-lambda) - 1.0;
            }
        }
        c * s
    }
}

/// Minimum of `CR_lambda(q) + correction_lambda * (sum q psi)` over all
/// grid points of the probability simplex (step `1/steps`) whose moment
/// residual lies within `slab`. The linear correction is the exact
/// first-order term that accounts for the residual slack, so the minimum
/// can never fall below the true constrained optimum.
///
/// Every divergence is separable over units, so each grid point is scored
/// through per-count lookup tables; partial sums accumulate down the
/// recursion.
pub fn grid_oracle(
    psi: &[f64],
    lambdas: &[f64],
    corrections: &[f64],
    steps: usize,
    slab: f64,
) -> Vec<f64> {
    let n = psi.len();
    let mut suffix_min = vec![0.0f64; n + 1];
    let mut suffix_max = vec![0.0f64; n + 1];
    suffix_min[n] = f64::INFINITY;
    suffix_max[n] = f64::NEG_INFINITY;
    for k in (0..n).rev() {
        suffix_min[k] = psi[k].min(suffix_min[k + 1]);
        suffix_max[k] = psi[k].max(suffix_max[k + 1]);
    }
    // tables[l][c] = per-unit divergence term at weight c/steps
    let tables: Vec<Vec<f64>> = lambdas
        .iter()
        .map(|&lambda| {
            (0..=steps)
                .map(|c| oracle_cr_term(c as f64 / steps as f64, n as f64, lambda))
                .collect()
        })
        .collect();
    let mut state = Search {
        psi,
        suffix_min: &suffix_min,
        suffix_max: &suffix_max,
        corrections,
        tables: &tables,
        steps,
        slab,
        mins: vec![f64::INFINITY; lambdas.len()],
        partial_terms: vec![0.0; lambdas.len()],
    };
    state.recurse(0, steps, 0.0);
    state.mins
}

/// One unit's contribution to CR at weight `w` out of `n` units, with the
/// boundary limits (zero weight is +inf for lambda >= 0 and finite for the
/// tilt and Hellinger members).
fn oracle_cr_term(w: f64, n: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        if w <= 0.0 {
            f64::INFINITY
        } else {
            -2.0 * (n * w).ln()
        }
    } else if lambda == -1.0 {
        if w <= 0.0 {
            0.0
        } else {
            2.0 * n * w * (n * w).ln()
        }
    } else {
        let c = 2.0 / (lambda * (1.0 + lambda));
        if w <= 0.0 {
            if -lambda < 0.0 {
                f64::INFINITY
            } else {
                -c
            }
        } else {
            c * ((n * w).powf(-lambda) - 1.0)
        }
    }
}

struct Search<'a> {
    psi: &'a [f64],
    suffix_min: &'a [f64],
    suffix_max: &'a [f64],
    corrections: &'a [f64],
    tables: &'a [Vec<f64>],
    steps: usize,
    slab: f64,
    mins: Vec<f64>,
    partial_terms: Vec<f64>,
}

impl Search<'_> {
    fn recurse(&mut self, depth: usize, remaining: usize, partial_moment: f64) {
        let n = self.psi.len();
        if depth == n - 1 {
            let moment = partial_moment + (remaining as f64 / self.steps as f64) * self.psi[depth];
            if moment.abs() <= self.slab {
                for l in 0..self.mins.len() {
                    let value = self.partial_terms[l]
                        + self.tables[l][remaining]
                        + self.corrections[l] * moment;
                    if value < self.mins[l] {
                        self.mins[l] = value;
                    }
                }
            }
            return;
        }
        for c in 0..=remaining {
            let new_partial = partial_moment + (c as f64 / self.steps as f64) * self.psi[depth];
            let rest = (remaining - c) as f64 / self.steps as f64;
            let lo = new_partial + rest * self.suffix_min[depth + 1];
            let hi = new_partial + rest * self.suffix_max[depth + 1];
            if lo > self.slab || hi < -self.slab {
                continue;
            }
            for l in 0..self.partial_terms.len() {
                self.partial_terms[l] += self.tables[l][c];
            }
            self.recurse(depth + 1, remaining - c, new_partial);
            for l in 0..self.partial_terms.len() {
                self.partial_terms[l] -= self.tables[l][c];
            }
        }
    }
}

/// Standard normal CDF used to map standardized estimates onto [0,1]
/// before a uniformity test.
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
