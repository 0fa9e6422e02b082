//! K-fold partitioning and out-of-fold nuisance prediction: for each unit,
//! both nuisance predictions come from learners fitted on all data except
//! that unit's fold.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learn::{self, LearnerSpec};
use crate::score::{NuisanceKind, NuisancePredictions, ObservationSet};
use crate::seeding::{derive_seed, Stream};

/// A balanced random partition of `0..n` into `k` folds.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    k: usize,
    assignment: Vec<usize>,
    pub seed: u64,
}

/// Uniformly random partition with fold sizes differing by at most one;
/// deterministic given the seed.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count must satisfy 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &unit) in order.iter().enumerate() {
        assignment[unit] = pos % k;
    }
    Ok(FoldAssignment {
        k,
        assignment,
        seed,
    })
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Fold id of each unit, in `0..k`.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// (train, held-out) unit indices for one fold.
    pub fn split_indices(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::with_capacity(self.n());
        let mut held = Vec::new();
        for (unit, &f) in self.assignment.iter().enumerate() {
            if f == fold {
                held.push(unit);
            } else {
                train.push(unit);
            }
        }
        (train, held)
    }
}

fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Pooled out-of-fold predictions of one target under an arbitrary
/// fit-then-predict routine; the routine never sees the fold it predicts.
pub fn crossfit_predictions<F>(
    x: &Array2<f64>,
    target: &[f64],
    folds: &FoldAssignment,
    fit_predict: F,
) -> Result<Vec<f64>>
where
    F: Fn(&Array2<f64>, &[f64], &Array2<f64>, usize) -> Result<Vec<f64>> + Sync,
{
    if folds.n() != x.nrows() || target.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "folds cover {} units, data has {}",
            folds.n(),
            x.nrows()
        )));
    }
    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..folds.k())
        .into_par_iter()
        .map(|fold| {
            let (train_idx, held_idx) = folds.split_indices(fold);
            let x_train = select_rows(x, &train_idx);
            let t_train: Vec<f64> = train_idx.iter().map(|&i| target[i]).collect();
            let x_held = select_rows(x, &held_idx);
            let preds = fit_predict(&x_train, &t_train, &x_held, fold).map_err(|e| {
                Error::FoldFailure {
                    fold,
                    source: Box::new(e),
                }
            })?;
            if preds.len() != held_idx.len() {
                return Err(Error::FoldFailure {
                    fold,
                    source: Box::new(Error::ShapeMismatch(format!(
                        "fold produced {} predictions for {} units",
                        preds.len(),
                        held_idx.len()
                    ))),
                });
            }
            Ok((held_idx, preds))
        })
        .collect::<Result<_>>()?;

    let mut out = vec![f64::NAN; x.nrows()];
    for (held_idx, preds) in per_fold {
        for (unit, pred) in held_idx.into_iter().zip(preds) {
            out[unit] = pred;
        }
    }
    Ok(out)
}

/// Cross-fitted nuisance predictions with the in-house learners: the
/// treatment model for `E[D|X]` and the outcome model for `E[Y|X]`
/// (partialling out). Per-fold learner seeds derive from each spec's seed.
pub fn crossfit_nuisance(
    obs: &ObservationSet,
    folds: &FoldAssignment,
    spec_pi: &LearnerSpec,
    spec_g: &LearnerSpec,
) -> Result<NuisancePredictions> {
    if folds.n() != obs.n() {
        return Err(Error::ShapeMismatch(format!(
            "folds cover {} units, observations have {}",
            folds.n(),
            obs.n()
        )));
    }
    let fit_with = |spec: LearnerSpec, stream: Stream| {
        move |x_train: &Array2<f64>, t_train: &[f64], x_held: &Array2<f64>, fold: usize| {
            let spec = spec.with_seed(derive_seed(spec.seed, stream, fold as u64));
            let model = learn::fit(&spec, &x_train.view(), t_train)?;
            learn::predict(&model, &x_held.view())
        }
    };
    let pi_hat = crossfit_predictions(
        obs.x(),
        obs.d(),
        folds,
        fit_with(*spec_pi, Stream::LearnerPi),
    )?;
    let g_hat =
        crossfit_predictions(obs.x(), obs.y(), folds, fit_with(*spec_g, Stream::LearnerG))?;
    NuisancePredictions::for_observations(obs, pi_hat, g_hat, NuisanceKind::PartiallingOut)
}
