//! SGD with heavy-ball momentum and damped K-FAC, plus the training loop that
//! produces a [`RunRecord`].

use serde::{Deserialize, Serialize};

use crate::budget::{Budget, LrSchedule};
use crate::data::{batches, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::fisher::{DampingKind, FisherState};
use crate::linalg::Matrix;
use crate::model::{FisherMode, LayerCapture, Network};
use crate::rng;

pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_STAT_DECAY: f64 = 0.9;
pub const DEFAULT_CLIP_KAPPA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", format!("{} not in [0, 1)", self.momentum)));
        }
        check_weight_decay(self.weight_decay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KfacConfig {
    pub lr: f64,
    /// λ.
    pub damping: f64,
    /// Running-average decay of the Kronecker factors.
    pub decay: f64,
    /// `None` disables update clipping.
    pub clip_kappa: Option<f64>,
    pub scheme: DampingKind,
    pub fisher_mode: FisherMode,
    /// Factor updates between eigendecompositions.
    pub t_inv: usize,
    pub weight_decay: f64,
}

impl KfacConfig {
    pub fn new(lr: f64, damping: f64) -> Self {
        Self {
            lr,
            damping,
            decay: DEFAULT_STAT_DECAY,
            clip_kappa: Some(DEFAULT_CLIP_KAPPA),
            scheme: DampingKind::Normal,
            fisher_mode: FisherMode::Sampled,
            t_inv: 1,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::param("damping", format!("{} must be positive", self.damping)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::param("decay", format!("{} not in (0, 1)", self.decay)));
        }
        if let Some(k) = self.clip_kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::param("clip_kappa", format!("{k} must be positive")));
            }
        }
        if self.t_inv == 0 {
            return Err(Error::param("t_inv", "must be at least 1"));
        }
        check_weight_decay(self.weight_decay)
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::param("lr", format!("{lr} must be non-negative")));
    }
    Ok(())
}

fn check_weight_decay(wd: f64) -> Result<()> {
    if !(wd >= 0.0 && wd.is_finite()) {
        return Err(Error::param("weight_decay", format!("{wd} must be non-negative")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Kfac(KfacConfig),
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd(c) => c.lr,
            OptimizerConfig::Kfac(c) => c.lr,
        }
    }

    pub fn method(&self) -> Method {
        match self {
            OptimizerConfig::Sgd(_) => Method::Sgd,
            OptimizerConfig::Kfac(_) => Method::Kfac,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Sgd(c) => c.validate(),
            OptimizerConfig::Kfac(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Kfac,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Kfac => "kfac",
        }
    }
}

/// Mutable optimizer state for one run.
#[derive(Debug, Clone)]
pub struct OptState {
    pub velocities: Vec<Matrix>,
    pub fisher: Option<FisherState>,
}

impl OptState {
    pub fn new(net: &Network, cfg: &OptimizerConfig) -> Result<Self> {
        let velocities = net
            .layers()
            .iter()
            .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
            .collect();
        let fisher = match cfg {
            OptimizerConfig::Sgd(_) => None,
            OptimizerConfig::Kfac(k) => Some(FisherState::new(net, k.t_inv)?),
        };
        Ok(Self { velocities, fisher })
    }
}

fn check_grads(net: &Network, grads: &[Matrix]) -> Result<()> {
    if grads.len() != net.layers().len()
        || grads
            .iter()
            .zip(net.layers())
            .any(|(g, l)| g.shape() != l.weights.shape())
    {
        return Err(Error::dim("gradients do not match the network"));
    }
    Ok(())
}

fn decayed(grad: &Matrix, w: &Matrix, wd: f64) -> Matrix {
    if wd == 0.0 {
        grad.clone()
    } else {
        let mut g = grad.clone();
        g.axpy(wd, w).expect("shapes checked");
        g
    }
}

/// `g̃ = g + wd·W; v ← μ·v + g̃; W ← W − η·v`.
pub fn sgd_step(
    net: &mut Network,
    state: &mut OptState,
    grads: &[Matrix],
    cfg: &SgdConfig,
    lr_now: f64,
) -> Result<()> {
    check_grads(net, grads)?;
    if state.velocities.len() != grads.len() {
        return Err(Error::dim("velocity state does not match the network"));
    }
    for (i, g) in grads.iter().enumerate() {
        let g = decayed(g, net.weights(i), cfg.weight_decay);
        let v = &mut state.velocities[i];
        *v = v.scale(cfg.momentum);
        v.axpy(1.0, &g)?;
        net.weights_mut(i).axpy(-lr_now, v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfacStepInfo {
    /// Clip scale ν applied to the whole update.
    pub nu: f64,
    /// `η² · Σ_i ⟨V_i, F̂_i V_i⟩` before clipping.
    pub quadratic: f64,
}

/// Clip scale `min(1, √(κ / q))` with `q = η²·Σ⟨V, F̂V⟩`.
pub fn clip_scale(kappa: Option<f64>, scaled_quadratic: f64) -> f64 {
    match kappa {
        Some(k) if scaled_quadratic > k => (k / scaled_quadratic).sqrt(),
        _ => 1.0,
    }
}

/// One K-FAC update. A non-finite update is reported as a numerical error and
/// leaves the weights untouched.
pub fn kfac_step(
    net: &mut Network,
    state: &mut OptState,
    grads: &[Matrix],
    capture: &LayerCapture,
    cfg: &KfacConfig,
    lr_now: f64,
) -> Result<KfacStepInfo> {
    check_grads(net, grads)?;
    let fisher = state
        .fisher
        .as_mut()
        .ok_or_else(|| Error::param("optimizer state", "K-FAC step without Fisher state"))?;
    fisher.update_factors(capture, cfg.decay)?;

    let mut updates = Vec::with_capacity(grads.len());
    let mut quad = 0.0;
    for (i, g) in grads.iter().enumerate() {
        let g = decayed(g, net.weights(i), cfg.weight_decay);
        let layer = &mut fisher.layers[i];
        let v = layer.precondition(&g, cfg.scheme, cfg.damping)?;
        quad += layer.damped_quadratic(&v, cfg.scheme, cfg.damping)?;
        updates.push(v);
    }
    let quadratic = lr_now * lr_now * quad;
    let nu = clip_scale(cfg.clip_kappa, quadratic);
    if !nu.is_finite() || !quadratic.is_finite() || updates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite K-FAC update".into()));
    }
    for (i, v) in updates.iter().enumerate() {
        net.weights_mut(i).axpy(-lr_now * nu, v)?;
    }
    Ok(KfacStepInfo { nu, quadratic })
}

/// Everything that determines a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub budget: Budget,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Keep every k-th training loss.
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub replica: usize,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.budget.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Hash of everything except the seed; names the record on disk.
    pub fn key_hash(&self) -> String {
        let mut key = self.clone();
        key.seed = 0;
        let json = serde_json::to_vec(&key).expect("config serializes");
        rng::short_hash(&json, 8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

pub const RECORD_SCHEMA: u32 = 1;

/// Full trace of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub n_train: usize,
    pub iterations_per_epoch: usize,
    pub total_epochs: usize,
    /// Iterations actually performed.
    pub iterations: usize,
    pub status: RunStatus,
    /// Iteration whose loss or update was non-finite.
    pub diverged_at: Option<usize>,
    /// Mini-batch loss measured before update `k · record_every`.
    pub train_loss: Vec<f64>,
    /// After each completed epoch; empty for regression.
    pub test_accuracy: Vec<f64>,
    pub test_loss: Vec<f64>,
}

impl RunRecord {
    pub fn method(&self) -> Method {
        self.config.optimizer.method()
    }

    pub fn diverged(&self) -> bool {
        self.status == RunStatus::Diverged
    }

    /// Iteration index of the k-th recorded train loss.
    pub fn loss_iteration(&self, k: usize) -> usize {
        k * self.config.record_every
    }

    /// Number of updates performed when the test metrics of `epoch` were taken.
    pub fn epoch_end_iteration(&self, epoch: usize) -> usize {
        (epoch + 1) * self.iterations_per_epoch
    }
}

/// Trains `net0` on `train` and evaluates on `test` once per epoch.
///
/// Divergence (a non-finite loss or update) stops the run and is recorded in
/// the returned record; only configuration problems are errors.
pub fn train_run(net0: &Network, train: &Dataset, test: &Dataset, cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let n_train = train.len();
    let plan = BatchPlan {
        batch_size: cfg.batch_size,
        seed: rng::derive_seed(cfg.seed, "batches"),
        drop_last: true,
    };
    plan.validate(n_train)?;
    let ipe = plan.batches_per_epoch(n_train);
    let total = cfg.budget.total_epochs(cfg.batch_size, n_train)?;
    let fisher_seed = rng::derive_seed(cfg.seed, "fisher");
    let capture_mode = match &cfg.optimizer {
        OptimizerConfig::Sgd(_) => None,
        OptimizerConfig::Kfac(k) => Some(k.fisher_mode),
    };

    let mut net = net0.clone();
    let mut state = OptState::new(&net, &cfg.optimizer)?;
    let mut rec = RunRecord {
        schema: RECORD_SCHEMA,
        config_hash: cfg.key_hash(),
        config: cfg.clone(),
        n_train,
        iterations_per_epoch: ipe,
        total_epochs: total,
        iterations: 0,
        status: RunStatus::Completed,
        diverged_at: None,
        train_loss: Vec::new(),
        test_accuracy: Vec::new(),
        test_loss: Vec::new(),
    };

    let mut iter = 0usize;
    'epochs: for epoch in 0..total {
        let lr_now = cfg.optimizer.lr() * cfg.schedule.lr_multiplier(epoch, total);
        for idx in batches(n_train, &plan, epoch as u64) {
            let (x, y) = train.gather(&idx);
            let fwd = net.forward(&x)?;
            let bw = net.loss_and_backward(fwd, &y, capture_mode, fisher_seed.wrapping_add(iter as u64))?;
            if !bw.loss.is_finite() {
                rec.status = RunStatus::Diverged;
                rec.diverged_at = Some(iter);
                break 'epochs;
            }
            if iter.is_multiple_of(cfg.record_every) {
                rec.train_loss.push(bw.loss);
            }
            let stepped = match &cfg.optimizer {
                OptimizerConfig::Sgd(c) => sgd_step(&mut net, &mut state, &bw.grads, c, lr_now),
                OptimizerConfig::Kfac(c) => {
                    let cap = bw.capture.as_ref().expect("capture requested for K-FAC");
                    kfac_step(&mut net, &mut state, &bw.grads, cap, c, lr_now).map(|_| ())
                }
            };
            match stepped {
                Ok(()) => {}
                Err(Error::Numerical(_)) => {
                    rec.status = RunStatus::Diverged;
                    rec.diverged_at = Some(iter);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            iter += 1;
            rec.iterations = iter;
            if !net.is_finite() {
                rec.status = RunStatus::Diverged;
                rec.diverged_at = Some(iter);
                break 'epochs;
            }
        }
        let eval = net.evaluate(test)?;
        if !eval.mean_loss.is_finite() {
            rec.status = RunStatus::Diverged;
            rec.diverged_at = Some(iter);
            break;
        }
        rec.test_loss.push(eval.mean_loss);
        if let Some(acc) = eval.accuracy {
            rec.test_accuracy.push(acc);
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, gen_linreg, least_squares, Targets};
    use crate::model::{Activation, Layer, LossKind};

    fn scalar_net(w: f64) -> Network {
        Network::new(
            vec![Layer {
                weights: Matrix::from_rows(&[vec![w]]),
                activation: Activation::Identity,
            }],
            LossKind::Mse,
        )
        .unwrap()
    }

    fn scalar(v: f64) -> Vec<Matrix> {
        vec![Matrix::from_rows(&[vec![v]])]
    }

    fn sgd(lr: f64, momentum: f64, wd: f64) -> SgdConfig {
        SgdConfig { lr, momentum, weight_decay: wd }
    }

    #[test]
    fn sgd_plain_step() {
        let mut net = scalar_net(1.0);
        let cfg = OptimizerConfig::Sgd(sgd(0.1, 0.0, 0.0));
        let mut st = OptState::new(&net, &cfg).unwrap();
        sgd_step(&mut net, &mut st, &scalar(0.5), &sgd(0.1, 0.0, 0.0), 0.1).unwrap();
        assert!((net.weights(0).get(0, 0) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let mut net = scalar_net(0.0);
        let c = sgd(1.0, 0.9, 0.0);
        let mut st = OptState::new(&net, &OptimizerConfig::Sgd(c)).unwrap();
        sgd_step(&mut net, &mut st, &scalar(1.0), &c, 1.0).unwrap();
        assert_eq!(st.velocities[0].get(0, 0), 1.0);
        assert_eq!(net.weights(0).get(0, 0), -1.0);
        sgd_step(&mut net, &mut st, &scalar(1.0), &c, 1.0).unwrap();
        assert!((st.velocities[0].get(0, 0) - 1.9).abs() < 1e-15);
        assert!((net.weights(0).get(0, 0) + 2.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut net = scalar_net(0.7);
        let c = sgd(0.3, 0.95, 0.0);
        let mut st = OptState::new(&net, &OptimizerConfig::Sgd(c)).unwrap();
        for _ in 0..5 {
            sgd_step(&mut net, &mut st, &scalar(0.0), &c, 0.3).unwrap();
        }
        assert_eq!(net.weights(0).get(0, 0), 0.7);
    }

    #[test]
    fn sgd_weight_decay_is_coupled() {
        let mut net = scalar_net(2.0);
        let c = sgd(0.5, 0.0, 0.1);
        let mut st = OptState::new(&net, &OptimizerConfig::Sgd(c)).unwrap();
        sgd_step(&mut net, &mut st, &scalar(1.0), &c, 0.5).unwrap();
        // 2 - 0.5 * (1 + 0.1 * 2)
        assert!((net.weights(0).get(0, 0) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn clip_scale_formula() {
        assert!((clip_scale(Some(0.1), 0.4) - 0.5).abs() < 1e-15);
        assert_eq!(clip_scale(Some(0.1), 0.1), 1.0);
        assert_eq!(clip_scale(Some(0.1), 0.05), 1.0);
        assert_eq!(clip_scale(None, 1e9), 1.0);
    }

    fn kfac_cfg(lr: f64, damping: f64, scheme: DampingKind, clip: Option<f64>) -> KfacConfig {
        KfacConfig {
            lr,
            damping,
            decay: 0.9,
            clip_kappa: clip,
            scheme,
            fisher_mode: FisherMode::Empirical,
            t_inv: 1,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn kfac_scalar_step() {
        // a_factor 4 (a = 2), g_factor 1 (g = 1), grad 8 → V = 2.
        let mut net = scalar_net(5.0);
        let cfg = kfac_cfg(1.0, 0.0, DampingKind::Approximated, None);
        let mut st = OptState::new(&net, &OptimizerConfig::Kfac(cfg)).unwrap();
        let cap = LayerCapture {
            a_in: vec![Matrix::from_rows(&[vec![2.0]])],
            g_out: vec![Matrix::from_rows(&[vec![1.0]])],
        };
        let info = kfac_step(&mut net, &mut st, &scalar(8.0), &cap, &cfg, 1.0).unwrap();
        assert_eq!(info.nu, 1.0);
        assert!((net.weights(0).get(0, 0) - 3.0).abs() < 1e-15);

        let mut net = scalar_net(5.0);
        let cfg = kfac_cfg(1.0, 0.0, DampingKind::Normal, None);
        let mut st = OptState::new(&net, &OptimizerConfig::Kfac(cfg)).unwrap();
        kfac_step(&mut net, &mut st, &scalar(8.0), &cap, &cfg, 1.0).unwrap();
        assert!((net.weights(0).get(0, 0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn kfac_clip_halves_update() {
        // Identity factors, λ→0: V = grad. q = lr²·⟨V, V⟩ = 0.4 with lr = 1, grad = √0.4.
        let g = 0.4f64.sqrt();
        let mut net = scalar_net(0.0);
        let cfg = kfac_cfg(1.0, 1e-300, DampingKind::Normal, Some(0.1));
        let mut st = OptState::new(&net, &OptimizerConfig::Kfac(cfg)).unwrap();
        let cap = LayerCapture {
            a_in: vec![Matrix::from_rows(&[vec![1.0]])],
            g_out: vec![Matrix::from_rows(&[vec![1.0]])],
        };
        let info = kfac_step(&mut net, &mut st, &scalar(g), &cap, &cfg, 1.0).unwrap();
        assert!((info.quadratic - 0.4).abs() < 1e-15);
        assert!((info.nu - 0.5).abs() < 1e-15);
        assert!((net.weights(0).get(0, 0) + 0.5 * g).abs() < 1e-15);
    }

    /// Capture whose batch factor estimates are exactly the identity.
    fn identity_capture(net: &Network) -> LayerCapture {
        let (a_in, g_out) = net
            .layers()
            .iter()
            .map(|l| {
                let (out, inb) = l.weights.shape();
                let root = (inb as f64).sqrt();
                let a = Matrix::identity(inb).scale(root);
                let g = Matrix::from_fn(inb, out, |i, j| if i == j { root } else { 0.0 });
                (a, g)
            })
            .unzip();
        LayerCapture { a_in, g_out }
    }

    #[test]
    fn kfac_identity_factors_match_gradient_descent() {
        let ds = gen_blobs(2, 64, 3, 3, 0.4).unwrap();
        // every layer has out <= in + 1 so the identity capture exists
        let net0 = Network::init(&[3, 4, 3], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 6).unwrap();
        let cfg = kfac_cfg(0.3, 1e-300, DampingKind::Normal, None);
        let sgd_cfg = sgd(0.3, 0.0, 0.0);
        let (mut a, mut b) = (net0.clone(), net0);
        let mut st_a = OptState::new(&a, &OptimizerConfig::Kfac(cfg)).unwrap();
        let mut st_b = OptState::new(&b, &OptimizerConfig::Sgd(sgd_cfg)).unwrap();
        for _ in 0..5 {
            let bw = a.loss_and_backward(a.forward(&ds.x).unwrap(), &ds.y, None, 0).unwrap();
            let cap = identity_capture(&a);
            kfac_step(&mut a, &mut st_a, &bw.grads, &cap, &cfg, 0.3).unwrap();

            let bw = b.loss_and_backward(b.forward(&ds.x).unwrap(), &ds.y, None, 0).unwrap();
            sgd_step(&mut b, &mut st_b, &bw.grads, &sgd_cfg, 0.3).unwrap();
        }
        // the identity estimate is exact only up to rounding of √n · √n / n
        for i in 0..2 {
            assert!(a.weights(i).max_abs_diff(b.weights(i)) < 1e-12);
        }
    }

    #[test]
    fn kfac_one_step_newton_on_linear_regression() {
        let lr = gen_linreg(11, 60, 4, 0.0).unwrap();
        let Targets::Values(y) = &lr.dataset.y else { unreachable!() };
        let w_ls = least_squares(&lr.dataset.x, y).unwrap();
        let net0 = Network::init(&[4, 1], Activation::Identity, LossKind::Mse, 3).unwrap();
        let cfg = RunConfig {
            optimizer: OptimizerConfig::Kfac(KfacConfig {
                fisher_mode: FisherMode::Sampled,
                ..kfac_cfg(1.0, 1e-8, DampingKind::Normal, None)
            }),
            batch_size: 60,
            budget: Budget::fixed_iterations(1),
            schedule: LrSchedule::constant(),
            seed: 1,
            record_every: 1,
            replica: 0,
        };
        let mut net = net0.clone();
        let mut st = OptState::new(&net, &cfg.optimizer).unwrap();
        let OptimizerConfig::Kfac(k) = cfg.optimizer else { unreachable!() };
        let bw = net
            .loss_and_backward(net.forward(&lr.dataset.x).unwrap(), &lr.dataset.y, Some(k.fisher_mode), 0)
            .unwrap();
        kfac_step(&mut net, &mut st, &bw.grads, bw.capture.as_ref().unwrap(), &k, 1.0).unwrap();
        for (a, b) in net.weights(0).as_slice().iter().zip(&w_ls) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn kfac_config_validation() {
        let mut c = KfacConfig::new(0.1, 1e-3);
        assert!(c.validate().is_ok());
        c.damping = -1.0;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("damping"), "{err}");
        c.damping = 1e-3;
        c.decay = 1.0;
        assert!(c.validate().is_err());
        assert!(sgd(0.1, 1.0, 0.0).validate().is_err());
        assert!(sgd(-0.1, 0.5, 0.0).validate().is_err());
        assert!(sgd(0.0, 0.5, 0.0).validate().is_ok());
    }

    fn blob_run(optimizer: OptimizerConfig, batch: usize) -> (Network, Dataset, Dataset, RunConfig) {
        let ds = gen_blobs(4, 200, 3, 3, 0.3).unwrap();
        let (train, test) = ds.split(1);
        let net = Network::init(&[3, 8, 3], Activation::Relu, LossKind::SoftmaxCrossEntropy, 2).unwrap();
        let cfg = RunConfig {
            optimizer,
            batch_size: batch,
            budget: Budget::fixed_epochs(3),
            schedule: LrSchedule::scaled(&[0.5], 10.0),
            seed: 9,
            record_every: 1,
            replica: 0,
        };
        (net, train, test, cfg)
    }

    #[test]
    fn zero_lr_full_batch_loss_is_constant() {
        let (net, train, test, cfg) = blob_run(OptimizerConfig::Sgd(sgd(0.0, 0.9, 5e-4)), 160);
        let rec = train_run(&net, &train, &test, &cfg).unwrap();
        assert_eq!(rec.status, RunStatus::Completed);
        assert_eq!(rec.train_loss.len(), 3);
        assert!(rec.train_loss.iter().all(|l| (l - rec.train_loss[0]).abs() < 1e-12));
    }

    #[test]
    fn runs_are_deterministic_and_shaped() {
        for opt in [
            OptimizerConfig::Sgd(sgd(0.1, 0.9, 5e-4)),
            OptimizerConfig::Kfac(KfacConfig::new(0.05, 1e-2)),
        ] {
            let (net, train, test, cfg) = blob_run(opt, 16);
            let a = train_run(&net, &train, &test, &cfg).unwrap();
            let b = train_run(&net, &train, &test, &cfg).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert_eq!(a.iterations_per_epoch, 10);
            assert_eq!(a.train_loss.len(), 30);
            assert_eq!(a.test_accuracy.len(), 3);
            assert!(a.test_accuracy.last().unwrap() > &0.9, "{:?}", a.test_accuracy);
        }
    }

    #[test]
    fn divergence_is_flagged_not_fatal() {
        let (net, train, test, cfg) = blob_run(OptimizerConfig::Sgd(sgd(1e200, 0.0, 0.0)), 16);
        let rec = train_run(&net, &train, &test, &cfg).unwrap();
        assert_eq!(rec.status, RunStatus::Diverged);
        assert!(rec.diverged_at.is_some());
        assert!(rec.train_loss.iter().all(|v| v.is_finite()));
        assert!(rec.iterations < 30);
    }

    #[test]
    fn record_every_thins_losses() {
        let (net, train, test, mut cfg) = blob_run(OptimizerConfig::Sgd(sgd(0.1, 0.9, 0.0)), 16);
        let full = train_run(&net, &train, &test, &cfg).unwrap();
        cfg.record_every = 4;
        let thin = train_run(&net, &train, &test, &cfg).unwrap();
        assert_eq!(thin.train_loss.len(), 8);
        for (k, v) in thin.train_loss.iter().enumerate() {
            assert_eq!(*v, full.train_loss[thin.loss_iteration(k)]);
        }
    }

    #[test]
    fn key_hash_ignores_seed() {
        let (_, _, _, cfg) = blob_run(OptimizerConfig::Sgd(sgd(0.1, 0.9, 0.0)), 16);
        let mut other = cfg.clone();
        other.seed = 1234;
        assert_eq!(cfg.key_hash(), other.key_hash());
        other.batch_size = 32;
        assert_ne!(cfg.key_hash(), other.key_hash());
    }
}
