//! Observational data model and the orthogonal score for the partially
//! linear regression model `Y = mu(X) + beta*D + U`.
//!
//! The per-unit score is `(D - pi(X)) * (Y - beta*D - mu(X))`, which is
//! linear in `beta` and therefore stored in factored form: a per-unit
//! offset and slope with `psi_i(beta) = offset_i - beta * slope_i`.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Propensity predictions are clipped into this band when the treatment is
/// binary, enforcing positivity.
pub const PROPENSITY_CLIP: f64 = 1e-6;

/// Minimum number of units: two-fold cross-fitting needs at least two
/// units on each side.
pub const MIN_UNITS: usize = 4;

/// The (outcome, treatment, confounder) triple for `n` units.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    y: Vec<f64>,
    d: Vec<f64>,
    x: Array2<f64>,
}

impl ObservationSet {
    /// Validates shapes and finiteness; rejects `n < 4` and `p < 1`.
    pub fn new(y: Vec<f64>, d: Vec<f64>, x: Array2<f64>) -> Result<Self> {
        let n = y.len();
        if d.len() != n || x.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "y has {} rows, d has {}, x has {}",
                n,
                d.len(),
                x.nrows()
            )));
        }
        if n < MIN_UNITS {
            return Err(Error::InvalidArgument(format!(
                "need at least {MIN_UNITS} units, got {n}"
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "need at least one confounder column".into(),
            ));
        }
        check_finite(&y, "outcome y")?;
        check_finite(&d, "treatment d")?;
        if let Some((index, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "confounder matrix x (flat index)".into(),
                index,
            });
        }
        Ok(Self { y, d, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    /// True when every treatment value is exactly 0.0 or 1.0.
    pub fn treatment_is_binary(&self) -> bool {
        self.d.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if let Some((index, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: context.into(),
            index,
        });
    }
    Ok(())
}

/// What the outcome-side nuisance predictions estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceKind {
    /// `g_hat` estimates `E[Y|X]`; nuisance fitting is free of beta.
    PartiallingOut,
    /// `g_hat` estimates `mu(X)` directly (used when mu is supplied
    /// analytically, e.g. in the sample-splitting demonstration).
    DirectMu,
}

/// Out-of-fold (or analytic) nuisance predictions for each unit.
#[derive(Debug, Clone)]
pub struct NuisancePredictions {
    pi_hat: Vec<f64>,
    g_hat: Vec<f64>,
    kind: NuisanceKind,
}

impl NuisancePredictions {
    pub fn new(pi_hat: Vec<f64>, g_hat: Vec<f64>, kind: NuisanceKind) -> Result<Self> {
        if pi_hat.len() != g_hat.len() {
            return Err(Error::ShapeMismatch(format!(
                "pi_hat has {} entries, g_hat has {}",
                pi_hat.len(),
                g_hat.len()
            )));
        }
        check_finite(&pi_hat, "pi_hat")?;
        check_finite(&g_hat, "g_hat")?;
        Ok(Self {
            pi_hat,
            g_hat,
            kind,
        })
    }

    /// Builds predictions for `obs`, clipping the propensity into
    /// `[PROPENSITY_CLIP, 1 - PROPENSITY_CLIP]` when the treatment is binary.
    pub fn for_observations(
        obs: &ObservationSet,
        mut pi_hat: Vec<f64>,
        g_hat: Vec<f64>,
        kind: NuisanceKind,
    ) -> Result<Self> {
        if pi_hat.len() != obs.n() || g_hat.len() != obs.n() {
            return Err(Error::ShapeMismatch(format!(
                "predictions have lengths {}/{}, observations have {}",
                pi_hat.len(),
                g_hat.len(),
                obs.n()
            )));
        }
        if obs.treatment_is_binary() {
            for v in pi_hat.iter_mut() {
                *v = v.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP);
            }
        }
        Self::new(pi_hat, g_hat, kind)
    }

    pub fn pi_hat(&self) -> &[f64] {
        &self.pi_hat
    }

    pub fn g_hat(&self) -> &[f64] {
        &self.g_hat
    }

    pub fn kind(&self) -> NuisanceKind {
        self.kind
    }
}

/// Factored per-unit score: `psi_i(beta) = offset_i - beta * slope_i`.
///
/// The linearity is definitional, so evaluating the score at any beta is a
/// single fused multiply-subtract per unit.
#[derive(Debug, Clone)]
pub struct ScoreComponents {
    pub offset: Vec<f64>,
    pub slope: Vec<f64>,
}

impl ScoreComponents {
    pub fn new(offset: Vec<f64>, slope: Vec<f64>) -> Result<Self> {
        if offset.len() != slope.len() {
            return Err(Error::ShapeMismatch(format!(
                "offset has {} entries, slope has {}",
                offset.len(),
                slope.len()
            )));
        }
        check_finite(&offset, "score offset")?;
        check_finite(&slope, "score slope")?;
        Ok(Self { offset, slope })
    }

    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }
}

/// Factors the orthogonal score into offset/slope form.
///
/// With partialling out (`g_hat ~ E[Y|X]`) the slope is the squared
/// treatment residual; with a direct `mu` estimate the slope is the
/// treatment residual times the treatment.
pub fn build_score_components(
    obs: &ObservationSet,
    nuis: &NuisancePredictions,
) -> Result<ScoreComponents> {
    let n = obs.n();
    if nuis.pi_hat.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "nuisance predictions have {} entries, observations have {n}",
            nuis.pi_hat.len()
        )));
    }
    let mut offset = Vec::with_capacity(n);
    let mut slope = Vec::with_capacity(n);
    for i in 0..n {
        let resid_d = obs.d[i] - nuis.pi_hat[i];
        let a = resid_d * (obs.y[i] - nuis.g_hat[i]);
        let b = match nuis.kind {
            NuisanceKind::PartiallingOut => resid_d * resid_d,
            NuisanceKind::DirectMu => resid_d * obs.d[i],
        };
        if !a.is_finite() {
            return Err(Error::NonFinite {
                context: "score offset".into(),
                index: i,
            });
        }
        if !b.is_finite() {
            return Err(Error::NonFinite {
                context: "score slope".into(),
                index: i,
            });
        }
        offset.push(a);
        slope.push(b);
    }
    Ok(ScoreComponents { offset, slope })
}

/// Evaluates `psi_i(beta) = offset_i - beta * slope_i` for every unit.
pub fn evaluate_score(sc: &ScoreComponents, beta: f64) -> Vec<f64> {
    debug_assert!(beta.is_finite());
    sc.offset
        .iter()
        .zip(&sc.slope)
        .map(|(&a, &b)| a - beta * b)
        .collect()
}

/// Ratio of a borough rate to the city-wide rate; 1 means no
/// disproportionality.
pub fn disproportionality_index(borough_rate: f64, city_rate: f64) -> Result<f64> {
    if !city_rate.is_finite() || city_rate <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "city rate must be positive, got {city_rate}"
        )));
    }
    if !borough_rate.is_finite() || borough_rate < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "borough rate must be nonnegative, got {borough_rate}"
        )));
    }
    Ok(borough_rate / city_rate)
}
