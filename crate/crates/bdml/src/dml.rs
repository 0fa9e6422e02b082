//! Frequentist double-ML comparator: closed-form Z-estimator for the
//! treatment effect from the orthogonal score, sandwich variance, Wald
//! intervals.

use crate::error::{Error, Result};
use crate::score::{evaluate_score, ScoreComponents};

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959964;

#[derive(Debug, Clone, Copy)]
pub struct DmlEstimate {
    pub beta_hat: f64,
    pub se: f64,
    pub ci95: (f64, f64),
}

/// Root of the pooled empirical moment: since the score is linear in beta,
/// `sum(offset - beta*slope) = 0` solves in closed form.
pub fn dml_point(sc: &ScoreComponents) -> Result<f64> {
    let sum_a: f64 = sc.offset.iter().sum();
    let sum_b: f64 = sc.slope.iter().sum();
    let floor = f64::EPSILON * sc.slope.iter().map(|b| b.abs()).sum::<f64>();
    if sum_b.abs() <= floor {
        return Err(Error::DegenerateDesign(
            "score slope sums to zero; the moment equation has no root".into(),
        ));
    }
    Ok(sum_a / sum_b)
}

/// Sandwich variance `mean(psi(beta_hat)^2) / mean(slope)^2`; the reported
/// squared standard error is this divided by n.
pub fn dml_variance(sc: &ScoreComponents, beta_hat: f64) -> Result<f64> {
    let n = sc.len() as f64;
    if sc.len() < 2 {
        return Err(Error::InvalidArgument(
            "variance needs at least two units".into(),
        ));
    }
    let mean_b: f64 = sc.slope.iter().sum::<f64>() / n;
    if mean_b == 0.0 {
        return Err(Error::DegenerateDesign("mean slope is zero".into()));
    }
    let psi = evaluate_score(sc, beta_hat);
    let mean_psi_sq: f64 = psi.iter().map(|v| v * v).sum::<f64>() / n;
    Ok(mean_psi_sq / (mean_b * mean_b))
}

pub fn dml_estimate(sc: &ScoreComponents) -> Result<DmlEstimate> {
    let beta_hat = dml_point(sc)?;
    let v = dml_variance(sc, beta_hat)?;
    let se = (v / sc.len() as f64).sqrt();
    Ok(DmlEstimate {
        beta_hat,
        se,
        ci95: (beta_hat - Z_975 * se, beta_hat + Z_975 * se),
    })
}
