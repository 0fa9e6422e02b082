//! Random-walk Metropolis sampling of the treatment effect from the GEL
//! profile posterior, with burn-in step-size adaptation, chain summaries
//! and an autocorrelation-based effective sample size.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dml::dml_point;
use crate::error::{Error, Result};
use crate::gel::{log_profile_from_psi, DivergenceSpec};
use crate::score::{evaluate_score, ScoreComponents};

/// Gaussian prior on the treatment effect.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: f64,
    pub variance: f64,
}

impl PriorSpec {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "prior needs finite mean and positive variance, got N({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, beta: f64) -> f64 {
        let d = beta - self.mean;
        -0.5 * d * d / self.variance
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Stored draws after burn-in.
    pub draws: usize,
    pub burn_in: usize,
    /// Starting point; when `None` the frequentist point estimate is used,
    /// with a feasibility line search as fallback.
    pub initial_beta: Option<f64>,
    /// Initial random-walk scale; `None` picks one from the initial point.
    pub step_scale: Option<f64>,
    /// Adapt the step scale toward 44% acceptance during burn-in.
    pub adapt: bool,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            draws: 5000,
            burn_in: 1000,
            initial_beta: None,
            step_scale: None,
            adapt: true,
            seed: 0,
        }
    }
}

/// Post-burn-in chain with diagnostics and summaries.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub chain: Vec<f64>,
    pub acceptance_rate: f64,
    pub mean: f64,
    pub sd: f64,
    pub equal_tailed_95: (f64, f64),
    pub final_step_scale: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ChainSummary {
    pub mean: f64,
    pub sd: f64,
    pub equal_tailed_95: (f64, f64),
}

/// Log posterior: Gaussian log prior (unnormalized) plus the GEL log
/// profile likelihood; negative infinity marks infeasible betas.
pub fn log_posterior(
    sc: &ScoreComponents,
    beta: f64,
    div: DivergenceSpec,
    prior: &PriorSpec,
) -> Result<f64> {
    let psi = evaluate_score(sc, beta);
    let lp = log_profile_from_psi(&psi, div)?;
    Ok(prior.log_density(beta) + lp)
}

const TARGET_ACCEPTANCE: f64 = 0.44;

/// Runs a random-walk Metropolis chain on the profile posterior.
///
/// During burn-in the log step scale follows a Robbins-Monro recursion
/// toward 44% acceptance; adaptation is frozen afterwards so the stored
/// chain is a valid Metropolis chain. Deterministic given the seed.
pub fn run_chain(
    sc: &ScoreComponents,
    div: DivergenceSpec,
    prior: &PriorSpec,
    cfg: &McmcConfig,
) -> Result<PosteriorDraws> {
    if cfg.draws == 0 {
        return Err(Error::InvalidArgument("draws must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut psi_buf = vec![0.0; sc.len()];
    let mut log_post = |beta: f64| -> Result<f64> {
        for (slot, (a, b)) in psi_buf.iter_mut().zip(sc.offset.iter().zip(&sc.slope)) {
            *slot = a - beta * b;
        }
        let lp = log_profile_from_psi(&psi_buf, div)?;
        Ok(prior.log_density(beta) + lp)
    };

    let (mut beta, mut current) = find_start(sc, prior, cfg, &mut log_post)?;
    let mut step = cfg
        .step_scale
        .unwrap_or_else(|| (0.1 * beta.abs()).max(0.1));
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step scale must be positive, got {step}"
        )));
    }

    let mut log_step = step.ln();
    for j in 1..=cfg.burn_in {
        let proposal = beta + step * rng.sample::<f64, _>(StandardNormal);
        let cand = log_post(proposal)?;
        let accept_prob = (cand - current).exp().min(1.0);
        let u: f64 = rng.random();
        let accepted = cand > f64::NEG_INFINITY && u < accept_prob;
        if accepted {
            beta = proposal;
            current = cand;
        }
        if cfg.adapt {
            let gain = (j as f64).powf(-0.6);
            let observed = if cand == f64::NEG_INFINITY { 0.0 } else { accept_prob };
            log_step += gain * (observed - TARGET_ACCEPTANCE);
            step = log_step.exp();
        }
    }

    let mut chain = Vec::with_capacity(cfg.draws);
    let mut accepted_count = 0usize;
    for _ in 0..cfg.draws {
        let proposal = beta + step * rng.sample::<f64, _>(StandardNormal);
        let cand = log_post(proposal)?;
        let u: f64 = rng.random();
        if cand > f64::NEG_INFINITY && u < (cand - current).exp() {
            beta = proposal;
            current = cand;
            accepted_count += 1;
        }
        chain.push(beta);
    }

    let summary = summarize(&chain);
    Ok(PosteriorDraws {
        chain,
        acceptance_rate: accepted_count as f64 / cfg.draws as f64,
        mean: summary.mean,
        sd: summary.sd,
        equal_tailed_95: summary.equal_tailed_95,
        final_step_scale: step,
    })
}

/// Picks a starting point with finite log posterior: the configured value,
/// then the frequentist point estimate, then a line search over ratio
/// candidates and expanding offsets.
fn find_start(
    sc: &ScoreComponents,
    prior: &PriorSpec,
    cfg: &McmcConfig,
    log_post: &mut impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let mut candidates: Vec<f64> = Vec::new();
    if let Some(b0) = cfg.initial_beta {
        candidates.push(b0);
    }
    if let Ok(point) = dml_point(sc) {
        candidates.push(point);
    }
    // median of per-unit ratios splits the score signs roughly in half
    let mut ratios: Vec<f64> = sc
        .offset
        .iter()
        .zip(&sc.slope)
        .filter(|(_, b)| b.abs() > 1e-300)
        .map(|(a, b)| a / b)
        .filter(|r| r.is_finite())
        .collect();
    if !ratios.is_empty() {
        ratios.sort_by(|a, b| a.total_cmp(b));
        candidates.push(ratios[ratios.len() / 2]);
    }
    candidates.push(prior.mean);
    candidates.push(0.0);

    let spread = prior.variance.sqrt().max(0.1);
    for &center in &candidates {
        if !center.is_finite() {
            continue;
        }
        let lp = log_post(center)?;
        if lp > f64::NEG_INFINITY {
            return Ok((center, lp));
        }
        for k in 0..24 {
            let offset = spread * 2.0f64.powi(k) / 256.0;
            for cand in [center + offset, center - offset] {
                let lp = log_post(cand)?;
                if lp > f64::NEG_INFINITY {
                    return Ok((cand, lp));
                }
            }
        }
    }
    Err(Error::InvalidArgument(
        "no feasible starting point found; supply initial_beta inside the \
         feasible interval of the score"
            .into(),
    ))
}

/// Mean, sample SD and equal-tailed 95% interval (linear-interpolation
/// quantiles).
pub fn summarize(chain: &[f64]) -> ChainSummary {
    assert!(!chain.is_empty(), "cannot summarize an empty chain");
    let n = chain.len() as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let sd = if chain.len() > 1 {
        (chain.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = chain.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    ChainSummary {
        mean,
        sd,
        equal_tailed_95: (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975)),
    }
}

/// Linear-interpolation quantile on pre-sorted data: index `(n-1)*q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Effective sample size via Geyer's initial positive sequence on the
/// sample autocorrelations.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let nf = n as f64;
    let mean = chain.iter().sum::<f64>() / nf;
    let var0: f64 = chain.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    if var0 == 0.0 {
        return nf;
    }
    let autocorr = |k: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - k {
            s += (chain[i] - mean) * (chain[i + k] - mean);
        }
        s / nf / var0
    };
    let mut tau = 1.0;
    let mut k = 1;
    while k + 1 < n {
        let gamma = autocorr(k) + autocorr(k + 1);
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        k += 2;
    }
    (nf / tau).clamp(1.0, nf)
}
