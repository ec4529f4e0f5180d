//! Binary pair classifiers: L2-penalized logistic regression and a
//! two-hidden-layer perceptron.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{tensors, Activation, Dense, Mlp};
use super::TrainConfig;
use crate::error::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit against a label.
fn bce_logit(z: f64, y: bool) -> f64 {
    softplus(z) - if y { z } else { 0.0 }
}

fn check_labels(x: ArrayView2<'_, f64>, y: &[bool]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::dims(x.nrows(), y.len()));
    }
    if !y.contains(&true) || !y.contains(&false) {
        return Err(Error::Validation("training labels contain a single class".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite training feature".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Inverse regularization strength; the penalty on the mean loss is
    /// `‖w‖² / (2·C·n)`.
    pub c: f64,
    /// Stop when the largest gradient component falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: Array1::zeros(dim),
            bias: 0.0,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::dims(self.weights.len(), x.len()));
        }
        let z: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        Ok(sigmoid(z))
    }
}

/// Mean logistic loss plus `λ/2·‖w‖²` and its gradient. `theta` holds the
/// weights followed by the unpenalized bias.
pub fn logistic_objective(theta: &[f64], x: ArrayView2<'_, f64>, y: &[bool], lambda: f64) -> (f64, Vec<f64>) {
    let d = x.ncols();
    let n = x.nrows() as f64;
    let (w, b) = (&theta[..d], theta[d]);
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (row, &label) in x.axis_iter(Axis(0)).zip(y) {
        let z: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        loss += bce_logit(z, label);
        let r = sigmoid(z) - if label { 1.0 } else { 0.0 };
        for (g, v) in grad[..d].iter_mut().zip(row) {
            *g += r * v;
        }
        grad[d] += r;
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g += lambda * wi;
    }
    loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Limited-memory BFGS with Armijo backtracking. Returns the minimizer.
fn lbfgs<F>(x0: Vec<f64>, mut f: F, tolerance: f64, max_iterations: usize) -> Vec<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const MEMORY: usize = 10;
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for _ in 0..max_iterations {
        if max_abs(&g) <= tolerance {
            break;
        }
        // Two-loop recursion for d = −H·g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut step = if history.is_empty() { 1.0 / max_abs(&g).max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    x
}

/// Fits L2-penalized logistic regression from zero initialization.
pub fn train_logistic(x: ArrayView2<'_, f64>, y: &[bool], config: &LogisticConfig) -> Result<LogisticModel> {
    check_labels(x, y)?;
    if !(config.c > 0.0) {
        return Err(Error::InvalidArgument("C must be positive".into()));
    }
    let d = x.ncols();
    let lambda = 1.0 / (config.c * x.nrows() as f64);
    let theta = lbfgs(
        vec![0.0; d + 1],
        |t| logistic_objective(t, x, y, lambda),
        config.tolerance,
        config.max_iterations,
    );
    Ok(LogisticModel {
        weights: Array1::from(theta[..d].to_vec()),
        bias: theta[d],
    })
}

/// Hidden width presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MlpArch {
    S,
    M,
    L,
}

impl MlpArch {
    pub fn hidden_units(self) -> usize {
        match self {
            MlpArch::S => 50,
            MlpArch::M => 100,
            MlpArch::L => 500,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S" => Ok(MlpArch::S),
            "M" => Ok(MlpArch::M),
            "L" => Ok(MlpArch::L),
            _ => Err(Error::InvalidArgument(format!("unknown MLP size {s:?}"))),
        }
    }
}

/// Mean binary cross-entropy of the network's logit output and its
/// parameter gradients.
pub fn bce_loss_and_grad(mlp: &Mlp, x: ArrayView2<'_, f64>, y: &[bool]) -> Result<(f64, Vec<Dense>)> {
    if mlp.output_dim() != 1 {
        return Err(Error::dims(1, mlp.output_dim()));
    }
    if x.nrows() != y.len() {
        return Err(Error::dims(x.nrows(), y.len()));
    }
    let n = x.nrows() as f64;
    let (out, tape) = mlp.forward_tape(x)?;
    let mut loss = 0.0;
    let mut d_out = Array2::zeros((x.nrows(), 1));
    for (r, (&z, &label)) in out.column(0).iter().zip(y).enumerate() {
        loss += bce_logit(z, label);
        d_out[[r, 0]] = (sigmoid(z) - if label { 1.0 } else { 0.0 }) / n;
    }
    Ok((loss / n, mlp.backward(&tape, d_out)))
}

/// Trains `input → h → h → 1` with ReLU hidden units, a sigmoid output,
/// binary cross-entropy and mini-batch Adam.
pub fn train_mlp_classifier(x: ArrayView2<'_, f64>, y: &[bool], arch: MlpArch, config: &TrainConfig) -> Result<Mlp> {
    check_labels(x, y)?;
    config.validate()?;
    let h = arch.hidden_units();
    let mut mlp = Mlp::new(&[x.ncols(), h, h, 1], Activation::Relu, config.seed)?;
    let mut opt = Adam::new(mlp.param_count(), config.learning_rate, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<bool> = batch.iter().map(|&i| y[i]).collect();
            let (_, grads) = bce_loss_and_grad(&mlp, xb.view(), &yb)?;
            opt.step(mlp.tensors_mut(), tensors(&grads))?;
        }
    }
    Ok(mlp)
}
