//! Embedded oracle suite: known values for IoU, AP, cosine and the losses,
//! plus finite-difference checks of every hand-written gradient.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::datastore::{BitMask, MaskSet};
use crate::error::Result;
use crate::evaluation::average_precision;
use crate::flow::{block_matching_flow, BlockMatchParams, FrameGray};
use crate::learning::{
    adam_step, bce_loss_and_grad, flatten, logistic_objective, ntxent_loss, Activation, AdamState, Mlp, PairTuples,
};
use crate::scoring::{instance_iou, mask_iou};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn close(got: f64, want: f64, tol: f64) -> (bool, String) {
    ((got - want).abs() <= tol, format!("got {got}, expected {want} ± {tol:e}"))
}

fn run_one(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check { name, passed, detail }
}

fn masks(w: u32, h: u32, instances: &[&[(u32, u32)]]) -> Result<MaskSet> {
    let bits = instances
        .iter()
        .map(|px| BitMask::from_pixels(w, h, px))
        .collect::<Result<Vec<_>>>()?;
    MaskSet::new("selfcheck", 1, w, h, bits)
}

/// Worst relative error between `analytic` and central differences of `f`.
fn fd_error(theta: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst = 0f64;
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = f(&probe);
        probe[i] = theta[i] - h;
        let down = f(&probe);
        probe[i] = theta[i];
        let fd = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(fd.abs()).max(1e-3);
        worst = worst.max((analytic[i] - fd).abs() / scale);
    }
    worst
}

fn gradient_verdict(err: f64) -> (bool, String) {
    (err <= 1e-4, format!("max relative error {err:.2e}"))
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn run() -> Vec<Check> {
    vec![
        run_one("mask_iou: 2 of 6 pixels", || {
            let a = masks(4, 4, &[&[(0, 0), (1, 0), (0, 1), (1, 1)]])?;
            let b = masks(4, 4, &[&[(1, 0), (2, 0), (1, 1), (2, 1)]])?;
            Ok(close(mask_iou(&a, &b)?, 1.0 / 3.0, 1e-12))
        }),
        run_one("mask_iou: empty set", || {
            let a = masks(4, 4, &[])?;
            let b = masks(4, 4, &[&[(1, 1)]])?;
            Ok(close(mask_iou(&a, &b)?, 0.0, 0.0))
        }),
        run_one("instance_iou: like-with-like fixture", || {
            let a = masks(4, 4, &[&[(0, 0), (0, 1)], &[(3, 3)]])?;
            let b = masks(4, 4, &[&[(0, 1), (0, 2)], &[(3, 3)]])?;
            Ok(close(instance_iou(&a, &b)?, 0.5, 1e-12))
        }),
        run_one("average_precision: perfect ranking", || {
            Ok(close(average_precision(&[true, false, true], &[0.9, 0.1, 0.8])?, 1.0, 0.0))
        }),
        run_one("average_precision: one negative interleaved", || {
            Ok(close(average_precision(&[true, false, true], &[0.9, 0.8, 0.7])?, (1.0 + 2.0 / 3.0) / 2.0, 1e-9))
        }),
        run_one("cosine([1,2],[3,4])", || {
            Ok(close(crate::dedup::cosine(&[1.0, 2.0], &[3.0, 4.0])?, 0.98386991009990743, 1e-5))
        }),
        run_one("block matching: square shifted by (2,1)", || {
            let square = |ox: u32, oy: u32| {
                FrameGray::from_fn(16, 16, |x, y| {
                    if (ox..ox + 4).contains(&x) && (oy..oy + 4).contains(&y) {
                        1.0
                    } else {
                        0.0
                    }
                })
            };
            let params = BlockMatchParams {
                block: 4,
                search_radius: 3,
            };
            let flow = block_matching_flow(&square(4, 4)?, &square(6, 5)?, params)?;
            let ok = (4..8).all(|y| (4..8).all(|x| flow.at(x, y) == (2.0, 1.0)));
            Ok((ok, format!("vector at (4,4) = {:?}", flow.at(4, 4))))
        }),
        run_one("adam: three steps on a quadratic", || {
            let expected = [1.0999999995000000025, 1.1998335133789078636, 1.2993766071878868157];
            let mut theta = [1.0];
            let mut state = AdamState::new(1);
            let mut worst = 0f64;
            for want in expected {
                let g = [theta[0] - 3.0];
                adam_step(&mut theta, &g, &mut state, 0.1, 0.0)?;
                worst = worst.max((theta[0] - want).abs());
            }
            Ok((worst < 1e-14, format!("max deviation {worst:e}")))
        }),
        run_one("nt-xent: closed form", || {
            let e = ndarray::array![[1.0, 0.0], [2.0, 0.0], [0.0, 3.0]];
            let tuples = PairTuples {
                positive: vec![(0, 1)],
                negative: vec![(0, 2)],
            };
            Ok(close(ntxent_loss(e.view(), &tuples, 1.0)?.0, (1.0 + (-1.0f64).exp()).ln(), 1e-12))
        }),
        run_one("gradient: logistic objective", || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let x = normal(12, 3, &mut rng);
            let y: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
            let theta: Vec<f64> = normal(1, 4, &mut rng).into_iter().collect();
            let (_, grad) = logistic_objective(&theta, x.view(), &y, 0.1);
            Ok(gradient_verdict(fd_error(&theta, &grad, |t| logistic_objective(t, x.view(), &y, 0.1).0)))
        }),
        run_one("gradient: mlp binary cross-entropy", || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let x = normal(8, 3, &mut rng);
            let y: Vec<bool> = (0..8).map(|i| i % 2 == 0).collect();
            let mlp = Mlp::new(&[3, 5, 5, 1], Activation::LeakyRelu, 2)?;
            let (_, grads) = bce_loss_and_grad(&mlp, x.view(), &y)?;
            let err = fd_error(&mlp.flat_params(), &flatten(&grads), |p| {
                let mut m = mlp.clone();
                m.set_flat_params(p).expect("same shape");
                bce_loss_and_grad(&m, x.view(), &y).expect("valid batch").0
            });
            Ok(gradient_verdict(err))
        }),
        run_one("gradient: nt-xent embeddings", || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let e = normal(6, 3, &mut rng);
            let tuples = PairTuples {
                positive: vec![(0, 1), (2, 3), (1, 0)],
                negative: vec![(0, 2), (0, 4), (2, 5), (1, 3), (1, 5)],
            };
            let (_, grad) = ntxent_loss(e.view(), &tuples, 0.5)?;
            let flat: Vec<f64> = e.iter().copied().collect();
            let err = fd_error(&flat, grad.as_slice().expect("standard layout"), |p| {
                let m = Array2::from_shape_vec((6, 3), p.to_vec()).expect("same shape");
                ntxent_loss(m.view(), &tuples, 0.5).expect("valid tuples").0
            });
            Ok(gradient_verdict(err))
        }),
    ]
}
