//! Central finite-difference gradient checks shared by the integration tests.

use kfac_bench::data::Targets;
use kfac_bench::model::{Activation, LossKind, Network};
use kfac_bench::rng;
use kfac_bench::Matrix;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
/// Gradients below this magnitude are compared on an absolute scale.
pub const FLOOR: f64 = 1e-4;

pub struct Case {
    pub net: Network,
    pub x: Matrix,
    pub y: Targets,
}

/// A random net of depth ≤ 3 and width ≤ 8 with inputs kept away from ReLU
/// kinks, so the finite difference never straddles one.
pub fn random_case(seed: u64, loss: LossKind, act: Activation) -> Case {
    let mut r = rng::stream("gradcheck", seed, 0);
    let depth = r.random_range(1..=3);
    let mut dims = vec![r.random_range(1..=8)];
    for _ in 0..depth {
        dims.push(r.random_range(1..=8));
    }
    // regression targets are scalar
    dims[depth] = match loss {
        LossKind::SoftmaxCrossEntropy => dims[depth].max(2),
        LossKind::Mse => 1,
    };
    let mut net = Network::init(&dims, act, loss, seed).unwrap();
    for i in 0..depth {
        let (rows, cols) = net.weights(i).shape();
        for a in 0..rows {
            for b in 0..cols {
                net.weights_mut(i).set(a, b, r.random_range(-1.0..1.0));
            }
        }
    }
    let batch = 5;
    let n_out = dims[depth];
    let y = match loss {
        LossKind::SoftmaxCrossEntropy => Targets::Classes((0..batch).map(|_| r.random_range(0..n_out)).collect()),
        LossKind::Mse => Targets::Values((0..batch).map(|_| r.random_range(-1.0..1.0)).collect()),
    };
    loop {
        let x = Matrix::from_fn(batch, dims[0], |_, _| r.random_range(-1.5..1.5));
        let fwd = net.forward(&x).unwrap();
        let safe = act != Activation::Relu
            || fwd.pre[..depth - 1]
                .iter()
                .all(|p| p.as_slice().iter().all(|z| z.abs() > 1e-3));
        if safe {
            return Case { net, x, y };
        }
    }
}

fn loss_at(net: &Network, case: &Case) -> f64 {
    net.loss_and_backward(net.forward(&case.x).unwrap(), &case.y, None, 0)
        .unwrap()
        .loss
}

/// Worst relative error over every weight of the case.
pub fn worst_error(case: &Case) -> f64 {
    let bw = case
        .net
        .loss_and_backward(case.net.forward(&case.x).unwrap(), &case.y, None, 0)
        .unwrap();
    let mut worst: f64 = 0.0;
    let mut net = case.net.clone();
    for (i, g) in bw.grads.iter().enumerate() {
        let (rows, cols) = g.shape();
        for a in 0..rows {
            for b in 0..cols {
                let w = net.weights(i).get(a, b);
                net.weights_mut(i).set(a, b, w + STEP);
                let plus = loss_at(&net, case);
                net.weights_mut(i).set(a, b, w - STEP);
                let minus = loss_at(&net, case);
                net.weights_mut(i).set(a, b, w);
                let numeric = (plus - minus) / (2.0 * STEP);
                let analytic = g.get(a, b);
                let err = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
                worst = worst.max(err);
            }
        }
    }
    worst
}
