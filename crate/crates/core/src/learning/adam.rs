use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`, both terms evaluated at the old `θ`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dims(params.len(), grads.len().min(state.m.len()).min(state.v.len())));
    }
    state.t += 1;
    update(params, grads, &mut state.m, &mut state.v, state.t, lr, weight_decay);
    Ok(())
}

fn update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, wd: f64) {
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let step = (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        *p -= lr * step + lr * wd * *p;
    }
}

/// Adam over a fixed list of parameter tensors sharing one step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    state: AdamState,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            state: AdamState::new(param_count),
        }
    }

    /// Updates each tensor in order; total length must match the optimizer.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != self.state.m.len() || params.len() != grads.len() {
            return Err(Error::dims(self.state.m.len(), total));
        }
        self.state.t += 1;
        let mut offset = 0;
        for (p, g) in params.into_iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::dims(p.len(), g.len()));
            }
            let end = offset + p.len();
            update(
                p,
                g,
                &mut self.state.m[offset..end],
                &mut self.state.v[offset..end],
                self.state.t,
                self.lr,
                self.weight_decay,
            );
            offset = end;
        }
        Ok(())
    }
}
