//! In-house machine learners for the two nuisance functions, behind one
//! uniform fit/predict interface: cross-validated lasso (linear/logistic),
//! random forest (regression/probability) and a small fixed neural net.

pub mod forest;
pub mod lasso;
pub mod mlp;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::PROPENSITY_CLIP;

/// What the learner predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    /// Probability of a {0,1}-coded target; predictions stay in [0, 1].
    BinaryProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestHyper {
    pub n_trees: usize,
    /// Split candidates per node; `None` uses p/3 (regression) or sqrt(p).
    pub mtry: Option<usize>,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_trees: forest::N_TREES,
            mtry: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpHyper {
    pub hidden: usize,
    pub epochs: usize,
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self {
            hidden: mlp::HIDDEN_UNITS,
            epochs: mlp::EPOCHS,
        }
    }
}

/// Learner family with its settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Lasso,
    RandomForest(ForestHyper),
    NeuralNet(MlpHyper),
}

impl Family {
    pub fn label(&self) -> &'static str {
        match self {
            Family::Lasso => "Lasso",
            Family::RandomForest(_) => "Random forest",
            Family::NeuralNet(_) => "Neural network",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    pub task: Task,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn lasso(task: Task, seed: u64) -> Self {
        Self {
            family: Family::Lasso,
            task,
            seed,
        }
    }

    pub fn forest(task: Task, seed: u64) -> Self {
        Self {
            family: Family::RandomForest(ForestHyper::default()),
            task,
            seed,
        }
    }

    pub fn neural_net(task: Task, seed: u64) -> Self {
        Self {
            family: Family::NeuralNet(MlpHyper::default()),
            task,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
enum ModelState {
    /// Constant-target fallback; forests and lasso degenerate gracefully.
    Constant(f64),
    Lasso(lasso::LassoModel),
    Forest(forest::ForestModel),
    Mlp(mlp::MlpModel),
}

/// A fitted learner ready for prediction.
#[derive(Debug, Clone)]
pub struct FittedLearner {
    pub spec: LearnerSpec,
    pub train_n: usize,
    pub train_p: usize,
    /// CV-selected penalty (lasso only).
    pub chosen_penalty: Option<f64>,
    /// Set when the target was constant and a constant predictor was
    /// returned instead of a real fit.
    pub constant_fallback: bool,
    state: ModelState,
}

/// Fits a learner; deterministic given the seed.
pub fn fit(spec: &LearnerSpec, x: &ArrayView2<f64>, target: &[f64]) -> Result<FittedLearner> {
    let n = x.nrows();
    if target.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} targets",
            n,
            target.len()
        )));
    }
    if n == 0 || x.ncols() == 0 {
        return Err(Error::Learner("empty design matrix".into()));
    }
    if let Some((index, _)) = target.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "learner target".into(),
            index,
        });
    }
    if spec.task == Task::BinaryProbability && target.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Learner(
            "binary-probability task needs a {0,1}-coded target".into(),
        ));
    }

    if target.iter().all(|&v| v == target[0]) {
        let value = match spec.task {
            Task::Regression => target[0],
            Task::BinaryProbability => target[0].clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP),
        };
        return Ok(FittedLearner {
            spec: *spec,
            train_n: n,
            train_p: x.ncols(),
            chosen_penalty: None,
            constant_fallback: true,
            state: ModelState::Constant(value),
        });
    }

    let (state, chosen_penalty) = match spec.family {
        Family::Lasso => {
            let model = lasso::fit(x, target, spec.task, spec.seed)?;
            let penalty = model.penalty;
            (ModelState::Lasso(model), Some(penalty))
        }
        Family::RandomForest(hyper) => {
            let model = forest::fit(x, target, spec.task, hyper.mtry, hyper.n_trees, spec.seed);
            (ModelState::Forest(model), None)
        }
        Family::NeuralNet(hyper) => {
            let model = mlp::fit(x, target, spec.task, hyper.hidden, hyper.epochs, spec.seed);
            (ModelState::Mlp(model), None)
        }
    };
    Ok(FittedLearner {
        spec: *spec,
        train_n: n,
        train_p: x.ncols(),
        chosen_penalty,
        constant_fallback: false,
        state,
    })
}

/// Predicts on new rows; the column count must match the training matrix.
pub fn predict(model: &FittedLearner, x_new: &ArrayView2<f64>) -> Result<Vec<f64>> {
    if x_new.ncols() != model.train_p {
        return Err(Error::ShapeMismatch(format!(
            "model trained on {} columns, got {}",
            model.train_p,
            x_new.ncols()
        )));
    }
    let mut out = match &model.state {
        ModelState::Constant(v) => vec![*v; x_new.nrows()],
        ModelState::Lasso(m) => m.predict(x_new),
        ModelState::Forest(m) => m.predict(x_new),
        ModelState::Mlp(m) => m.predict(x_new),
    };
    if model.spec.task == Task::BinaryProbability {
        for v in out.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    if let Some((index, _)) = out.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "learner prediction".into(),
            index,
        });
    }
    Ok(out)
}

/// Numerically stable logistic function.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Column-standardizes a matrix with population moments; zero-variance
/// columns keep sd 1 so they contribute nothing after centering.
pub(crate) fn standardize_columns(x: &ArrayView2<f64>) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut mean = Vec::with_capacity(p);
    let mut sd = Vec::with_capacity(p);
    let mut out = x.to_owned();
    for j in 0..p {
        let col = x.column(j);
        let m = col.sum() / n;
        let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = if var > 0.0 { var.sqrt() } else { 1.0 };
        mean.push(m);
        sd.push(s);
        out.column_mut(j).mapv_inplace(|v| (v - m) / s);
    }
    (out, mean, sd)
}
