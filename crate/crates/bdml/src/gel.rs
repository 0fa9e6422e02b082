//! Constrained Cressie-Read weight optimization via the Lagrange dual.
//!
//! Given per-unit score values `psi`, find weights `p` minimizing the
//! Cressie-Read divergence from uniform subject to `sum p = 1`, `p > 0`,
//! `sum p*psi = 0`. The stationarity conditions give
//!
//!   p_i = (1/n) * (1 + s + t*psi_i)^(-1/(1+lambda))   for lambda != -1
//!   p_i = exp(t*psi_i) / sum_j exp(t*psi_j)           for lambda == -1
//!
//! For lambda = 0 the mass constraint is satisfied automatically once the
//! moment equation holds (multiply stationarity by p_i and sum), so `s = 0`
//! and the problem reduces to a scalar root find; the same is true for the
//! exponential-tilt case. General lambda needs the full 2x2 system in
//! (s, t).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{evaluate_score, ScoreComponents};

/// Both constraint residuals must sit below this for a solve to count as
/// converged.
pub const CONSTRAINT_TOL: f64 = 1e-8;

const MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 30;
/// Lower bound kept on `1 + s + t*psi` during Newton steps (scale-normalized
/// units): the dual form is only valid on the positive domain.
const DOMAIN_FLOOR: f64 = 1e-12;

/// Cressie-Read family member, indexed by `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    lambda: f64,
}

impl DivergenceSpec {
    /// Empirical likelihood, `lambda = 0`.
    pub const EL: Self = Self { lambda: 0.0 };
    /// Exponentially tilted empirical likelihood, `lambda = -1`.
    pub const ETEL: Self = Self { lambda: -1.0 };
    /// Hellinger distance, `lambda = -1/2`.
    pub const HD: Self = Self { lambda: -0.5 };

    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "divergence parameter must be finite, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_tilt(&self) -> bool {
        self.lambda == -1.0
    }

    pub fn name(&self) -> String {
        if self.lambda == 0.0 {
            "EL".into()
        } else if self.lambda == -1.0 {
            "ETEL".into()
        } else if self.lambda == -0.5 {
            "HD".into()
        } else {
            format!("CR({})", self.lambda)
        }
    }
}

impl std::fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Whether zero sits strictly inside the convex hull of the score values.
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub min_psi: f64,
    pub max_psi: f64,
}

/// Feasible iff the signs are strictly mixed; an all-zero score vector is
/// the one tie case that still admits (uniform) weights.
pub fn check_feasibility(psi: &[f64]) -> FeasibilityReport {
    if psi.is_empty() {
        return FeasibilityReport {
            feasible: false,
            min_psi: f64::NAN,
            max_psi: f64::NAN,
        };
    }
    let mut min_psi = f64::INFINITY;
    let mut max_psi = f64::NEG_INFINITY;
    for &v in psi {
        min_psi = min_psi.min(v);
        max_psi = max_psi.max(v);
    }
    let feasible = (min_psi < 0.0 && max_psi > 0.0) || (min_psi == 0.0 && max_psi == 0.0);
    FeasibilityReport {
        feasible,
        min_psi,
        max_psi,
    }
}

/// Solved weights together with the dual multipliers and diagnostics.
#[derive(Debug, Clone)]
pub struct GelSolution {
    pub weights: Vec<f64>,
    /// Mass multiplier `s`; `None` for the exponential-tilt case where the
    /// normalization is absorbed into the softmax.
    pub normalizer: Option<f64>,
    /// Moment multiplier `t`.
    pub tilt: f64,
    /// `sum_i log p_i`.
    pub log_profile: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `(|sum p - 1|, |sum p*psi|)`.
    pub residuals: (f64, f64),
}

/// Sum of logs through chunked products; one `ln` per ~60 factors instead
/// of one per factor.
fn sum_ln(values: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut prod = 1.0f64;
    for &v in values {
        prod *= v;
        if !(1e-280..=1e280).contains(&prod) {
            total += prod.ln();
            prod = 1.0;
        }
    }
    total + prod.ln()
}

fn uniform_solution(n: usize, div: DivergenceSpec) -> GelSolution {
    let w = 1.0 / n as f64;
    GelSolution {
        weights: vec![w; n],
        normalizer: if div.is_tilt() { None } else { Some(0.0) },
        tilt: 0.0,
        log_profile: -(n as f64) * (n as f64).ln(),
        converged: true,
        iterations: 0,
        residuals: (0.0, 0.0),
    }
}

/// Solves the constrained Cressie-Read problem for one score vector.
pub fn solve_weights(psi: &[f64], div: DivergenceSpec) -> Result<GelSolution> {
    let report = check_feasibility(psi);
    if !report.feasible {
        return Err(Error::InfeasibleMoment);
    }
    let n = psi.len();
    if report.min_psi == 0.0 && report.max_psi == 0.0 {
        // The dual system is degenerate at psi = 0; uniform weights satisfy
        // both constraints and minimize every family member.
        return Ok(uniform_solution(n, div));
    }

    // Solve in scale-normalized units so the weights (which depend on psi
    // only through t*psi) are invariant under positive rescaling.
    let scale = psi.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let psi_n: Vec<f64> = psi.iter().map(|&v| v / scale).collect();

    let (mut weights, normalizer, tilt_n, iterations): (Vec<f64>, _, _, _) = if div.is_tilt() {
        let (t, iters) = solve_tilt(&psi_n)?;
        (tilt_weights(&psi_n, t), None, t, iters)
    } else if div.lambda == 0.0 {
        let (t, iters) = solve_el(&psi_n)?;
        let w = psi_n
            .iter()
            .map(|&v| 1.0 / (n as f64 * (1.0 + t * v)))
            .collect();
        (w, Some(0.0), t, iters)
    } else {
        let (s, t, iters) = solve_general(&psi_n, div.lambda)?;
        let expo = -1.0 / (1.0 + div.lambda);
        let w = psi_n
            .iter()
            .map(|&v| (1.0 + s + t * v).powf(expo) / n as f64)
            .collect();
        (w, Some(s), t, iters)
    };

    // Near a feasibility boundary the tilt is only loosely determined and
    // the reconstructed mass drifts with it; renormalizing restores the
    // mass constraint exactly and rescales the moment residual by the same
    // (near-one) factor.
    let raw_mass: f64 = weights.iter().sum();
    if raw_mass.is_finite() && raw_mass > 0.0 {
        for w in weights.iter_mut() {
            *w /= raw_mass;
        }
    }

    let mass: f64 = weights.iter().sum();
    let moment: f64 = weights.iter().zip(psi).map(|(&w, &v)| w * v).sum();
    let residuals = ((mass - 1.0).abs(), moment.abs());
    let converged = residuals.0 <= CONSTRAINT_TOL
        && residuals.1 <= CONSTRAINT_TOL
        && weights.iter().all(|&w| w > 0.0 && w.is_finite());
    if !converged {
        return Err(Error::NonConvergence {
            mass_residual: residuals.0,
            moment_residual: residuals.1,
        });
    }
    let log_profile = sum_ln(&weights);
    Ok(GelSolution {
        weights,
        normalizer,
        tilt: tilt_n / scale,
        log_profile,
        converged,
        iterations,
        residuals,
    })
}

fn tilt_weights(psi: &[f64], t: f64) -> Vec<f64> {
    let m = psi.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(t * v));
    let mut w: Vec<f64> = psi.iter().map(|&v| (t * v - m).exp()).collect();
    let z: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= z;
    }
    w
}

/// Empirical likelihood moment equation `g(t) = sum psi/(1 + t*psi)`,
/// strictly decreasing on the open domain between the poles.
fn solve_el(psi: &[f64]) -> Result<(f64, usize)> {
    let g = |t: f64| -> (f64, f64) {
        let mut g = 0.0;
        let mut dg = 0.0;
        for &v in psi {
            let u = 1.0 + t * v;
            if u <= 0.0 {
                // outside the dual domain; report the one-sided limit so the
                // bracket logic keeps the iterate interior
                let limit = if v > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
                return (limit, f64::NEG_INFINITY);
            }
            let r = v / u;
            g += r;
            dg -= r * r;
        }
        (g, dg)
    };
    let report = check_feasibility(psi);
    // Domain walls: 1 + t*psi > 0 for every unit.
    let lo = -1.0 / report.max_psi;
    let hi = -1.0 / report.min_psi;
    let floor = 1e-14 * psi.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    scalar_root(g, 0.0, lo, hi, floor)
}

/// Exponential-tilt moment equation `h(t) = sum psi*exp(t*psi)`, strictly
/// increasing; evaluated with the max exponent subtracted (a positive
/// rescaling, so the Newton step is unchanged).
fn solve_tilt(psi: &[f64]) -> Result<(f64, usize)> {
    let h = |t: f64| -> (f64, f64) {
        let m = psi.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(t * v));
        let mut h = 0.0;
        let mut dh = 0.0;
        for &v in psi {
            let e = (t * v - m).exp();
            h += v * e;
            dh += v * v * e;
        }
        // negate so the function is decreasing like the EL equation
        (-h, -dh)
    };
    let floor = 1e-14 * psi.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let (t, iters) = scalar_root(h, 0.0, f64::NEG_INFINITY, f64::INFINITY, floor)?;
    Ok((t, iters))
}

/// Safeguarded Newton for a strictly decreasing scalar function: a bracket
/// is grown geometrically from `start` toward the domain walls, then Newton
/// steps are taken with bisection whenever they leave the bracket.
fn scalar_root(
    f: impl Fn(f64) -> (f64, f64),
    start: f64,
    lo: f64,
    hi: f64,
    floor: f64,
) -> Result<(f64, usize)> {
    let mut iterations = 0usize;
    let (g0, _) = f(start);
    if g0 == 0.0 {
        return Ok((start, 0));
    }
    // Grow a bracket [a, b] with f(a) > 0 > f(b); the function is
    // decreasing, so a < b.
    let mut a = start;
    let mut b = start;
    let grow_up = g0 > 0.0;
    let mut k = 0;
    loop {
        k += 1;
        if k > 200 {
            return Err(Error::NonConvergence {
                mass_residual: f64::NAN,
                moment_residual: g0.abs(),
            });
        }
        let cand = if grow_up {
            if hi.is_finite() {
                hi - (hi - start) * 0.5f64.powi(k)
            } else {
                start + 0.25 * 2.0f64.powi(k)
            }
        } else if lo.is_finite() {
            lo - (lo - start) * 0.5f64.powi(k)
        } else {
            start - 0.25 * 2.0f64.powi(k)
        };
        iterations += 1;
        let (gc, _) = f(cand);
        if grow_up {
            if gc <= 0.0 {
                b = cand;
                break;
            }
            a = cand;
        } else {
            if gc >= 0.0 {
                a = cand;
                break;
            }
            b = cand;
        }
    }

    let mut t = 0.5 * (a + b);
    let (mut gt, mut dgt) = f(t);
    iterations += 1;
    while iterations < MAX_ITER {
        if gt.abs() <= floor {
            break;
        }
        if gt > 0.0 {
            a = t;
        } else {
            b = t;
        }
        if (b - a).abs() <= f64::EPSILON * t.abs().max(1.0) {
            break;
        }
        let newton = t - gt / dgt;
        t = if newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        let (g, d) = f(t);
        iterations += 1;
        gt = g;
        dgt = d;
    }
    Ok((t, iterations))
}

/// Damped Newton on the 2x2 normalization system for general lambda.
fn solve_general(psi: &[f64], lambda: f64) -> Result<(f64, f64, usize)> {
    let n = psi.len() as f64;
    let expo = -1.0 / (1.0 + lambda);
    if !expo.is_finite() {
        return Err(Error::InvalidArgument(
            "lambda = -1 must use the exponential-tilt path".into(),
        ));
    }
    // integer exponents (e.g. -2 at the Hellinger member) avoid powf in
    // the hot loop
    let int_expo = if expo.fract() == 0.0 && expo.abs() <= 8.0 {
        Some(expo as i32)
    } else {
        None
    };
    let upow = move |u: f64| -> f64 {
        match int_expo {
            Some(k) => u.powi(k),
            None => u.powf(expo),
        }
    };
    let upow_minus1 = move |u: f64| -> f64 {
        match int_expo {
            Some(k) => u.powi(k - 1),
            None => u.powf(expo - 1.0),
        }
    };
    // F1 = mean(u^expo) - 1, F2 = mean(u^expo * psi), u = 1 + s + t*psi
    let eval = |s: f64, t: f64| -> Option<(f64, f64)> {
        let mut f1 = 0.0;
        let mut f2 = 0.0;
        for &v in psi {
            let u = 1.0 + s + t * v;
            if u <= DOMAIN_FLOOR {
                return None;
            }
            let w = upow(u);
            f1 += w;
            f2 += w * v;
        }
        Some((f1 / n - 1.0, f2 / n))
    };

    let (mut s, mut t) = (0.0f64, 0.0f64);
    let (mut f1, mut f2) = eval(s, t).expect("origin is always in the domain");
    let mut iterations = 0usize;
    while iterations < MAX_ITER {
        let fnorm = f1.hypot(f2);
        if fnorm <= 1e-15 {
            break;
        }
        // Jacobian of (F1, F2) w.r.t. (s, t); symmetric in the off-diagonal.
        let mut j11 = 0.0;
        let mut j12 = 0.0;
        let mut j22 = 0.0;
        for &v in psi {
            let u = 1.0 + s + t * v;
            let d = expo * upow_minus1(u);
            j11 += d;
            j12 += d * v;
            j22 += d * v * v;
        }
        j11 /= n;
        j12 /= n;
        j22 /= n;
        let det = j11 * j22 - j12 * j12;
        if det.abs() < 1e-300 {
            break;
        }
        let ds = -(j22 * f1 - j12 * f2) / det;
        let dt = -(-j12 * f1 + j11 * f2) / det;

        let mut accepted = false;
        let mut step = 1.0;
        for _ in 0..=MAX_HALVINGS {
            if let Some((g1, g2)) = eval(s + step * ds, t + step * dt) {
                if g1.hypot(g2) < fnorm {
                    s += step * ds;
                    t += step * dt;
                    f1 = g1;
                    f2 = g2;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    Ok((s, t, iterations))
}

/// Cressie-Read divergence of `weights` from uniform, with the log forms at
/// the `lambda = 0` and `lambda = -1` limits.
pub fn cr_divergence(weights: &[f64], div: DivergenceSpec) -> Result<f64> {
    let n = weights.len() as f64;
    if let Some((index, _)) = weights.iter().enumerate().find(|(_, w)| **w <= 0.0) {
        return Err(Error::NonFinite {
            context: "nonpositive weight".into(),
            index,
        });
    }
    let lambda = div.lambda();
    let value = if lambda == 0.0 {
        -2.0 * weights.iter().map(|&w| (n * w).ln()).sum::<f64>()
    } else if lambda == -1.0 {
        2.0 * n * weights.iter().map(|&w| w * (n * w).ln()).sum::<f64>()
    } else {
        let c = 2.0 / (lambda * (1.0 + lambda));
        c * weights
            .iter()
            .map(|&w| (n * w).powf(-lambda) - 1.0)
            .sum::<f64>()
    };
    Ok(value)
}

/// Log profile likelihood `sum_i log p_i` at a given beta; negative
/// infinity when the moment condition is infeasible there.
pub fn log_profile_likelihood(sc: &ScoreComponents, beta: f64, div: DivergenceSpec) -> Result<f64> {
    let psi = evaluate_score(sc, beta);
    log_profile_from_psi(&psi, div)
}

/// Same as [`log_profile_likelihood`] but on an already-evaluated score
/// vector; this is the MCMC hot path, so the full weight vector is only
/// materialized once per call and reused for the log sum.
pub fn log_profile_from_psi(psi: &[f64], div: DivergenceSpec) -> Result<f64> {
    match solve_weights(psi, div) {
        Ok(sol) => Ok(sol.log_profile),
        Err(Error::InfeasibleMoment) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}
