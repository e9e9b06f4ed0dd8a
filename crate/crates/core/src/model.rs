//! A dense multilayer perceptron whose backward pass exposes, per layer, the
//! homogeneous layer inputs and the per-sample gradients with respect to the
//! pre-activation outputs. Those two matrices are all K-FAC needs.
//!
//! Conventions:
//! - layer `i` has weights `W_i` of shape `out × (in + 1)`; the last column is the bias,
//!   multiplied by a constant 1 appended to the layer input;
//! - the batch loss is the *mean* of per-sample losses, while captured `g_out` rows
//!   are per-sample gradients (no `1/|B|` factor);
//! - `mse` is the Gaussian negative log-likelihood up to a constant, `½‖z − y‖²`.

use rand::Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets, Task};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    Mse,
}

/// Which targets drive the captured `g_out` statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherMode {
    /// Training labels.
    Empirical,
    /// Targets drawn from the model's own predictive distribution, one draw per
    /// sample. For `mse` the draw is a Rademacher probe: it has the same second
    /// moment as the unit Gaussian, so the expected statistic is unchanged.
    #[default]
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub activation: Activation,
}

impl Layer {
    pub fn n_in(&self) -> usize {
        self.weights.cols() - 1
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    loss: LossKind,
}

/// Output of [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub outputs: Matrix,
    /// Per layer, `batch × (in + 1)`, last column ones.
    pub a_in: Vec<Matrix>,
    /// Per layer pre-activations, `batch × out`.
    pub pre: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct LayerCapture {
    pub a_in: Vec<Matrix>,
    pub g_out: Vec<Matrix>,
}

impl LayerCapture {
    pub fn batch_size(&self) -> usize {
        self.a_in.first().map_or(0, Matrix::rows)
    }
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    /// Per layer, same shape as the weights; mean over the batch.
    pub grads: Vec<Matrix>,
    /// Present when a Fisher mode was requested.
    pub capture: Option<LayerCapture>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mean_loss: f64,
    /// `None` for regression.
    pub accuracy: Option<f64>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, loss: LossKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("layers", "network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].n_in() != pair[0].n_out() {
                return Err(Error::dim(format!(
                    "layer {} expects {} inputs but layer {i} has {} outputs",
                    i + 1,
                    pair[1].n_in(),
                    pair[0].n_out()
                )));
            }
        }
        if let Some(l) = layers.iter().find(|l| l.weights.cols() < 1 || l.weights.rows() < 1) {
            return Err(Error::dim(format!("empty layer {:?}", l.weights.shape())));
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::param("activation", "final layer must be identity"));
        }
        Ok(Self { layers, loss })
    }

    /// Uniform `±√(6/(fan_in+fan_out))` weights, zero biases.
    ///
    /// `dims` lists widths from input to output; every hidden layer uses `hidden`.
    pub fn init(dims: &[usize], hidden: Activation, loss: LossKind, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::param("dims", format!("{dims:?}")));
        }
        let mut r = rng::stream("init", seed, 0);
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Matrix::from_fn(fan_out, fan_in + 1, |_, j| {
                    if j == fan_in {
                        0.0
                    } else {
                        r.random_range(-limit..limit)
                    }
                });
                let activation = if i + 1 == n_layers { Activation::Identity } else { hidden };
                Layer { weights, activation }
            })
            .collect();
        Self::new(layers, loss)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("non-empty").n_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.rows() * l.weights.cols()).sum()
    }

    pub fn weights(&self, i: usize) -> &Matrix {
        &self.layers[i].weights
    }

    pub fn weights_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.layers[i].weights
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite())
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardPass> {
        if x.cols() != self.n_inputs() {
            return Err(Error::dim(format!(
                "batch has {} features, network expects {}",
                x.cols(),
                self.n_inputs()
            )));
        }
        let batch = x.rows();
        let mut a_in = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let a = append_ones(&h);
            let z = a.matmul_t(&layer.weights)?;
            let act = layer.activation;
            h = Matrix::from_vec_unchecked(
                batch,
                z.cols(),
                z.as_slice().iter().map(|&v| act.apply(v)).collect(),
            );
            a_in.push(a);
            pre.push(z);
        }
        Ok(ForwardPass { outputs: h, a_in, pre })
    }

    /// Mean loss, mean gradients, and (when `fisher_mode` is set) the per-layer
    /// capture used for the Kronecker factors. `seed` feeds the sampled mode.
    pub fn loss_and_backward(
        &self,
        fwd: ForwardPass,
        targets: &Targets,
        fisher_mode: Option<FisherMode>,
        seed: u64,
    ) -> Result<Backward> {
        let batch = fwd.outputs.rows();
        if targets.len() != batch {
            return Err(Error::dim(format!("{batch} outputs but {} targets", targets.len())));
        }
        let (losses, delta) = self.output_gradient(&fwd.outputs, targets)?;
        let loss = losses.iter().sum::<f64>() / batch as f64;

        let g_true = self.backprop(&fwd, delta);
        let inv_b = 1.0 / batch as f64;
        let grads = g_true
            .iter()
            .zip(&fwd.a_in)
            .map(|(g, a)| g.t_matmul(a).map(|m| m.scale(inv_b)))
            .collect::<Result<Vec<_>>>()?;

        let capture = match fisher_mode {
            None => None,
            Some(FisherMode::Empirical) => Some(LayerCapture {
                a_in: fwd.a_in.clone(),
                g_out: g_true,
            }),
            Some(FisherMode::Sampled) => {
                let delta = self.sampled_output_gradient(&fwd.outputs, seed);
                let g_out = self.backprop(&fwd, delta);
                Some(LayerCapture {
                    a_in: fwd.a_in.clone(),
                    g_out,
                })
            }
        };
        Ok(Backward { loss, grads, capture })
    }

    /// Per-sample losses and `∂ℓ/∂z` at the output layer.
    fn output_gradient(&self, outputs: &Matrix, targets: &Targets) -> Result<(Vec<f64>, Matrix)> {
        let (batch, k) = outputs.shape();
        let mut losses = Vec::with_capacity(batch);
        let mut delta = Matrix::zeros(batch, k);
        match (self.loss, targets) {
            (LossKind::SoftmaxCrossEntropy, Targets::Classes(labels)) => {
                for (i, &y) in labels.iter().enumerate() {
                    if y >= k {
                        return Err(Error::param("label", format!("{y} out of range for {k} outputs")));
                    }
                    let z = outputs.row(i);
                    let (lse, probs) = softmax(z);
                    losses.push(lse - z[y]);
                    let row = delta.row_mut(i);
                    row.copy_from_slice(&probs);
                    row[y] -= 1.0;
                }
            }
            (LossKind::Mse, Targets::Values(values)) => {
                if k != 1 {
                    return Err(Error::dim(format!("mse on scalar targets needs 1 output, got {k}")));
                }
                for (i, &y) in values.iter().enumerate() {
                    let r = outputs.get(i, 0) - y;
                    losses.push(0.5 * r * r);
                    delta.set(i, 0, r);
                }
            }
            (loss, _) => {
                return Err(Error::param("targets", format!("target kind does not match {loss:?}")));
            }
        }
        Ok((losses, delta))
    }

    fn sampled_output_gradient(&self, outputs: &Matrix, seed: u64) -> Matrix {
        let (batch, k) = outputs.shape();
        let mut r = rng::stream("fisher", seed, 0);
        let mut delta = Matrix::zeros(batch, k);
        match self.loss {
            LossKind::SoftmaxCrossEntropy => {
                for i in 0..batch {
                    let (_, probs) = softmax(outputs.row(i));
                    let drawn = WeightedIndex::new(&probs)
                        .map(|w| w.sample(&mut r))
                        .unwrap_or(0);
                    let row = delta.row_mut(i);
                    row.copy_from_slice(&probs);
                    row[drawn] -= 1.0;
                }
            }
            LossKind::Mse => {
                for v in delta.as_mut_slice() {
                    *v = if r.random::<bool>() { 1.0 } else { -1.0 };
                }
            }
        }
        delta
    }

    /// Backpropagates output deltas; returns per-layer `∂ℓ/∂z_i` rows.
    fn backprop(&self, fwd: &ForwardPass, mut delta: Matrix) -> Vec<Matrix> {
        let n = self.layers.len();
        let mut out = vec![Matrix::zeros(0, 0); n];
        for i in (0..n).rev() {
            if i > 0 {
                let w = &self.layers[i].weights;
                let n_in = w.cols() - 1;
                // δ_{i-1} = (δ_i · W_i[:, :in]) ⊙ σ'(z_{i-1})
                let full = delta.mul_unchecked(w);
                let prev_act = self.layers[i - 1].activation;
                let z_prev = &fwd.pre[i - 1];
                let batch = delta.rows();
                let mut next = Matrix::zeros(batch, n_in);
                for r in 0..batch {
                    let src = &full.row(r)[..n_in];
                    let z = z_prev.row(r);
                    for ((o, s), zv) in next.row_mut(r).iter_mut().zip(src).zip(z) {
                        *o = s * prev_act.derivative(*zv);
                    }
                }
                out[i] = std::mem::replace(&mut delta, next);
            } else {
                out[0] = std::mem::replace(&mut delta, Matrix::zeros(0, 0));
            }
        }
        out
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<Evaluation> {
        const CHUNK: usize = 2048;
        let n = ds.len();
        if n == 0 {
            return Ok(Evaluation {
                mean_loss: f64::NAN,
                accuracy: None,
            });
        }
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(CHUNK) {
            let (x, y) = ds.gather(chunk);
            let fwd = self.forward(&x)?;
            let (losses, _) = self.output_gradient(&fwd.outputs, &y)?;
            total_loss += losses.iter().sum::<f64>();
            if let Targets::Classes(labels) = &y {
                for (r, &label) in labels.iter().enumerate() {
                    if argmax(fwd.outputs.row(r)) == label {
                        correct += 1;
                    }
                }
            }
        }
        let accuracy = match ds.task() {
            Task::Classification => Some(correct as f64 / n as f64),
            Task::Regression => None,
        };
        Ok(Evaluation {
            mean_loss: total_loss / n as f64,
            accuracy,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            loss: self.loss,
            layers: self
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    n_out: l.n_out(),
                    n_in_plus_bias: l.weights.cols(),
                    activation: l.activation,
                    weights: l.weights.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let layers = c
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weights: Matrix::new(l.n_out, l.n_in_plus_bias, l.weights.clone())?,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, c.loss)
    }
}

/// JSON checkpoint: layer dims, activation names, row-major weights, loss kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub loss: LossKind,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCheckpoint {
    pub n_out: usize,
    pub n_in_plus_bias: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
}

fn append_ones(h: &Matrix) -> Matrix {
    let (n, d) = h.shape();
    let mut data = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        data.extend_from_slice(h.row(i));
        data.push(1.0);
    }
    Matrix::from_vec_unchecked(n, d + 1, data)
}

/// `(logsumexp(z), softmax(z))`.
fn softmax(z: &[f64]) -> (f64, Vec<f64>) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    (m + s.ln(), exps.into_iter().map(|e| e / s).collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: Vec<Vec<f64>>, loss: LossKind) -> Network {
        Network::new(
            vec![Layer {
                weights: Matrix::from_rows(&w),
                activation: Activation::Identity,
            }],
            loss,
        )
        .unwrap()
    }

    #[test]
    fn affine_forward() {
        let net = single(vec![vec![1.0, 0.0]], LossKind::Mse);
        let f = net.forward(&Matrix::from_rows(&[vec![3.0]])).unwrap();
        assert_eq!(f.outputs, Matrix::from_rows(&[vec![3.0]]));

        let net = single(vec![vec![2.0, 1.0]], LossKind::Mse);
        let f = net.forward(&Matrix::from_rows(&[vec![3.0]])).unwrap();
        assert_eq!(f.outputs, Matrix::from_rows(&[vec![7.0]]));
        assert_eq!(f.a_in[0].row(0), &[3.0, 1.0]);
    }

    #[test]
    fn capture_structure() {
        let net = Network::init(&[3, 6, 2], Activation::Relu, LossKind::SoftmaxCrossEntropy, 4).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_fn(5, 3, |_, _| r.random_range(-1.0..1.0));
        let f = net.forward(&x).unwrap();
        for a in &f.a_in {
            assert_eq!(a.rows(), 5);
            assert!((0..5).all(|i| a.get(i, a.cols() - 1) == 1.0));
        }
        let b = net
            .loss_and_backward(f, &Targets::Classes(vec![0, 1, 0, 1, 1]), Some(FisherMode::Sampled), 0)
            .unwrap();
        let cap = b.capture.unwrap();
        assert!(cap.g_out.iter().all(|g| g.rows() == 5));
        assert_eq!(cap.g_out[0].cols(), 6);
        assert_eq!(cap.g_out[1].cols(), 2);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = single(vec![vec![1.0, 0.0]], LossKind::Mse);
        assert!(matches!(net.forward(&Matrix::zeros(1, 2)), Err(Error::Dimension(_))));
    }

    #[test]
    fn network_validates_structure() {
        let l = |r, c, a| Layer { weights: Matrix::zeros(r, c), activation: a };
        assert!(Network::new(vec![l(2, 3, Activation::Relu)], LossKind::Mse).is_err());
        assert!(Network::new(
            vec![l(2, 3, Activation::Relu), l(1, 4, Activation::Identity)],
            LossKind::Mse
        )
        .is_err());
        assert!(Network::new(
            vec![l(2, 3, Activation::Relu), l(1, 3, Activation::Identity)],
            LossKind::Mse
        )
        .is_ok());
    }

    #[test]
    fn mse_at_optimum() {
        let net = single(vec![vec![1.0, 0.0]], LossKind::Mse);
        let f = net.forward(&Matrix::from_rows(&[vec![2.0]])).unwrap();
        let b = net.loss_and_backward(f, &Targets::Values(vec![2.0]), None, 0).unwrap();
        assert_eq!(b.loss, 0.0);
        assert!(b.grads[0].as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn softmax_cross_entropy_hand_values() {
        let net = single(vec![vec![0.0, 0.0], vec![0.0, 0.0]], LossKind::SoftmaxCrossEntropy);
        let f = net.forward(&Matrix::from_rows(&[vec![1.0]])).unwrap();
        let b = net
            .loss_and_backward(f, &Targets::Classes(vec![0]), Some(FisherMode::Empirical), 0)
            .unwrap();
        assert!((b.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(b.capture.unwrap().g_out[0].row(0), &[-0.5, 0.5]);
    }

    #[test]
    fn label_out_of_range_and_kind_mismatch() {
        let net = single(vec![vec![0.0, 0.0], vec![0.0, 0.0]], LossKind::SoftmaxCrossEntropy);
        let f = net.forward(&Matrix::from_rows(&[vec![1.0]])).unwrap();
        assert!(net.loss_and_backward(f.clone(), &Targets::Classes(vec![2]), None, 0).is_err());
        assert!(net.loss_and_backward(f.clone(), &Targets::Values(vec![1.0]), None, 0).is_err());
        assert!(net.loss_and_backward(f, &Targets::Classes(vec![0, 1]), None, 0).is_err());
    }

    #[test]
    fn empirical_statistic_equals_gradient() {
        let net = Network::init(&[4, 5, 3], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 9).unwrap();
        let ds = gen_blobs(1, 12, 4, 3, 0.5).unwrap();
        let f = net.forward(&ds.x).unwrap();
        let b = net.loss_and_backward(f, &ds.y, Some(FisherMode::Empirical), 0).unwrap();
        let cap = b.capture.unwrap();
        for (i, g) in b.grads.iter().enumerate() {
            let stat = cap.g_out[i].t_matmul(&cap.a_in[i]).unwrap().scale(1.0 / 12.0);
            assert_eq!(&stat, g);
        }
    }

    #[test]
    fn softmax_g_out_rows_sum_to_zero() {
        let net = Network::init(&[2, 4], Activation::Relu, LossKind::SoftmaxCrossEntropy, 3).unwrap();
        let ds = gen_blobs(2, 40, 2, 4, 0.5).unwrap();
        for mode in [FisherMode::Empirical, FisherMode::Sampled] {
            let f = net.forward(&ds.x).unwrap();
            let b = net.loss_and_backward(f, &ds.y, Some(mode), 5).unwrap();
            let g = &b.capture.unwrap().g_out[0];
            for r in 0..g.rows() {
                assert!(g.row(r).iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampled_mse_probe_has_unit_square() {
        let net = single(vec![vec![0.3, 0.1]], LossKind::Mse);
        let x = Matrix::from_fn(20, 1, |i, _| i as f64);
        let f = net.forward(&x).unwrap();
        let b = net
            .loss_and_backward(f, &Targets::Values(vec![0.0; 20]), Some(FisherMode::Sampled), 1)
            .unwrap();
        let g = &b.capture.unwrap().g_out[0];
        assert!(g.as_slice().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn evaluate_tie_break_and_separator() {
        let ds = gen_blobs(3, 100, 2, 2, 0.2).unwrap();
        let zero = Network::init(&[2, 2], Activation::Relu, LossKind::SoftmaxCrossEntropy, 0).unwrap();
        let mut zero = zero;
        *zero.weights_mut(0) = Matrix::zeros(2, 3);
        let e = zero.evaluate(&ds).unwrap();
        assert_eq!(e.accuracy, Some(0.5));
        assert!((e.mean_loss - std::f64::consts::LN_2).abs() < 1e-15);

        // The two classes differ only along feature 0 (lattice digit), which is
        // standardized: class 0 negative, class 1 positive.
        let mut sep = zero.clone();
        *sep.weights_mut(0) = Matrix::from_rows(&[vec![-10.0, 0.0, 0.0], vec![10.0, 0.0, 0.0]]);
        assert_eq!(sep.evaluate(&ds).unwrap().accuracy, Some(1.0));
    }

    #[test]
    fn evaluate_matches_per_sample_loop() {
        let ds = gen_blobs(5, 37, 3, 3, 0.5).unwrap();
        let net = Network::init(&[3, 7, 3], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 8).unwrap();
        let e = net.evaluate(&ds).unwrap();
        let Targets::Classes(labels) = &ds.y else { unreachable!() };
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            // independent scalar forward pass
            let mut h: Vec<f64> = ds.x.row(i).to_vec();
            for layer in net.layers() {
                let w = &layer.weights;
                h = (0..w.rows())
                    .map(|o| {
                        let z = (0..h.len()).map(|j| w.get(o, j) * h[j]).sum::<f64>() + w.get(o, h.len());
                        layer.activation.apply(z)
                    })
                    .collect();
            }
            let m = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - h[y];
        }
        assert!((e.mean_loss - total / 37.0).abs() < 1e-12);
    }

    #[test]
    fn regression_reports_no_accuracy() {
        let ds = crate::data::gen_linreg(1, 20, 2, 0.1).unwrap().dataset;
        let net = Network::init(&[2, 1], Activation::Relu, LossKind::Mse, 0).unwrap();
        assert_eq!(net.evaluate(&ds).unwrap().accuracy, None);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Network::init(&[3, 4, 2], Activation::Relu, LossKind::SoftmaxCrossEntropy, 1).unwrap();
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        assert!(json.contains("\"activation\":\"relu\""));
        let back = Network::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let a = Network::init(&[3, 4, 2], Activation::Relu, LossKind::SoftmaxCrossEntropy, 1).unwrap();
        let b = Network::init(&[3, 4, 2], Activation::Relu, LossKind::SoftmaxCrossEntropy, 1).unwrap();
        assert_eq!(a, b);
        let w = a.weights(0);
        let limit = (6.0f64 / 7.0).sqrt();
        for r in 0..4 {
            assert_eq!(w.get(r, 3), 0.0);
            assert!(w.row(r)[..3].iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
