//! Small fixed multilayer perceptron: one hidden layer of rectified-linear
//! units, linear (or logistic) output, full-batch gradient descent on
//! squared-error (or log) loss, standardized inputs, seeded fan-in-scaled
//! uniform initialization.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::learn::{expit, standardize_columns, Task};

pub const HIDDEN_UNITS: usize = 16;
pub const EPOCHS: usize = 2000;
pub const LEARNING_RATE: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct MlpModel {
    w1: Array2<f64>, // p x h
    b1: Array1<f64>, // h
    w2: Array1<f64>, // h
    b2: f64,
    col_mean: Vec<f64>,
    col_sd: Vec<f64>,
    logistic: bool,
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

impl MlpModel {
    fn forward(&self, xs: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let mut hidden = xs.dot(&self.w1);
        hidden += &self.b1;
        relu_inplace(&mut hidden);
        let mut out = hidden.dot(&self.w2);
        out += self.b2;
        if self.logistic {
            out.mapv_inplace(expit);
        }
        (hidden, out)
    }

    pub fn predict(&self, x: &ArrayView2<f64>) -> Vec<f64> {
        let xs = apply_standardization(x, &self.col_mean, &self.col_sd);
        let (_, out) = self.forward(&xs);
        out.to_vec()
    }
}

fn apply_standardization(x: &ArrayView2<f64>, mean: &[f64], sd: &[f64]) -> Array2<f64> {
    let mut xs = x.to_owned();
    for (j, mut col) in xs.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| (v - mean[j]) / sd[j]);
    }
    xs
}

/// Loss on standardized inputs: `(1/2n) sum (out - y)^2` for regression,
/// mean negative log likelihood for probabilities. Exposed for the
/// finite-difference gradient check.
pub fn loss(model: &MlpModel, xs: &Array2<f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let (_, out) = model.forward(xs);
    if model.logistic {
        let mut total = 0.0;
        for (o, &yi) in out.iter().zip(y) {
            let p = o.clamp(1e-12, 1.0 - 1e-12);
            total -= yi * p.ln() + (1.0 - yi) * (1.0 - p).ln();
        }
        total / n
    } else {
        out.iter()
            .zip(y)
            .map(|(o, &yi)| (o - yi) * (o - yi))
            .sum::<f64>()
            / (2.0 * n)
    }
}

struct Gradients {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array1<f64>,
    b2: f64,
}

/// Backprop on the full batch; both losses share the residual form
/// `(out - y)/n` at the output.
fn gradients(model: &MlpModel, xs: &Array2<f64>, y: &[f64]) -> Gradients {
    let n = y.len() as f64;
    let (hidden, out) = model.forward(xs);
    let mut delta_out = Array1::zeros(y.len());
    for (slot, (o, &yi)) in delta_out.iter_mut().zip(out.iter().zip(y)) {
        *slot = (o - yi) / n;
    }
    let grad_w2 = hidden.t().dot(&delta_out);
    let grad_b2 = delta_out.sum();
    // d hidden = delta_out (outer) w2, masked by the active units
    let mut delta_hidden = Array2::zeros(hidden.raw_dim());
    for (i, &d) in delta_out.iter().enumerate() {
        if d != 0.0 {
            for (k, &w) in model.w2.iter().enumerate() {
                if hidden[(i, k)] > 0.0 {
                    delta_hidden[(i, k)] = d * w;
                }
            }
        }
    }
    let grad_w1 = xs.t().dot(&delta_hidden);
    let grad_b1 = delta_hidden.sum_axis(Axis(0));
    Gradients {
        w1: grad_w1,
        b1: grad_b1,
        w2: grad_w2,
        b2: grad_b2,
    }
}

pub fn fit(
    x: &ArrayView2<f64>,
    y: &[f64],
    task: Task,
    hidden: usize,
    epochs: usize,
    seed: u64,
) -> MlpModel {
    let (xs, col_mean, col_sd) = standardize_columns(x);
    let p = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale1 = 1.0 / (p as f64).sqrt();
    let scale2 = 1.0 / (hidden as f64).sqrt();
    let w1 = Array2::from_shape_fn((p, hidden), |_| rng.random_range(-scale1..scale1));
    let w2 = Array1::from_shape_fn(hidden, |_| rng.random_range(-scale2..scale2));
    let mut model = MlpModel {
        w1,
        b1: Array1::zeros(hidden),
        w2,
        b2: 0.0,
        col_mean,
        col_sd,
        logistic: task == Task::BinaryProbability,
    };
    for _ in 0..epochs {
        let g = gradients(&model, &xs, y);
        model.w1.scaled_add(-LEARNING_RATE, &g.w1);
        model.b1.scaled_add(-LEARNING_RATE, &g.b1);
        model.w2.scaled_add(-LEARNING_RATE, &g.w2);
        model.b2 -= LEARNING_RATE * g.b2;
    }
    model
}

#[cfg(test)]
pub(crate) fn gradient_check(seed: u64) -> f64 {
    // 5-unit toy net, both losses: compare analytic gradients against
    // central finite differences entry by entry.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let p = 3;
    let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0f64));
    let mut worst = 0.0f64;
    for task in [Task::Regression, Task::BinaryProbability] {
        let y: Vec<f64> = (0..n)
            .map(|_| match task {
                Task::Regression => rng.random_range(-2.0..2.0),
                Task::BinaryProbability => f64::from(rng.random_range(0..2)),
            })
            .collect();
        let mut model = fit(&x.view(), &y, task, 5, 3, seed);
        let xs = apply_standardization(
            &x.view(),
            &model.col_mean.clone(),
            &model.col_sd.clone(),
        );
        let analytic = gradients(&model, &xs, &y);
        let h = 1e-5;
        let mut check = |get: &mut dyn FnMut(&mut MlpModel) -> &mut f64, grad: f64| {
            let orig = *get(&mut model);
            *get(&mut model) = orig + h;
            let up = loss(&model, &xs, &y);
            *get(&mut model) = orig - h;
            let down = loss(&model, &xs, &y);
            *get(&mut model) = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad).abs() / grad.abs().max(1e-6);
            worst = worst.max(rel);
        };
        for a in 0..p {
            for b in 0..5 {
                check(&mut |m| &mut m.w1[(a, b)], analytic.w1[(a, b)]);
            }
        }
        for b in 0..5 {
            check(&mut |m| &mut m.b1[b], analytic.b1[b]);
            check(&mut |m| &mut m.w2[b], analytic.w2[b]);
        }
        check(&mut |m| &mut m.b2, analytic.b2);
    }
    worst
}
