//! Kronecker-factored Fisher blocks and their damped inverses.
//!
//! Each layer block is approximated as `F_i ≈ A ⊗ G` with `A = E[a aᵀ]` over
//! homogeneous layer inputs and `G = E[g gᵀ]` over per-sample pre-activation
//! gradients. Gradients are vectorized by stacking the columns of the
//! `out × (in+1)` weight gradient, so that `(A ⊗ G)·vec(X) = vec(G·X·A)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dense_inverse, sym_eig, sym_eig_from, Matrix, SymEig};
use crate::model::{LayerCapture, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingKind {
    /// Exact `(A ⊗ G + λI)⁻¹` through the factor eigendecompositions.
    #[default]
    Normal,
    /// `(A + √λ I)⁻¹ ⊗ (G + √λ I)⁻¹`.
    Approximated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingScheme {
    pub kind: DampingKind,
    pub lambda: f64,
}

impl DampingScheme {
    pub fn new(kind: DampingKind, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::param("damping", format!("{lambda} must be positive")));
        }
        Ok(Self { kind, lambda })
    }
}

#[derive(Debug, Clone)]
struct ApproxInverses {
    lambda: f64,
    a_inv: Matrix,
    g_inv: Matrix,
}

fn warm_eig(s: &Matrix, basis: Option<&Matrix>) -> Result<SymEig> {
    match basis {
        Some(q) => sym_eig_from(s, q),
        None => sym_eig(s),
    }
}

/// Running Kronecker factors for one layer.
#[derive(Debug, Clone)]
pub struct LayerFactors {
    pub a_factor: Matrix,
    pub g_factor: Matrix,
    eig_a: Option<SymEig>,
    eig_g: Option<SymEig>,
    /// Eigenbases from the last decomposition, kept after invalidation to
    /// warm-start the next one.
    basis_a: Option<Matrix>,
    basis_g: Option<Matrix>,
    approx: Option<ApproxInverses>,
    steps_since_inversion: usize,
    initialized: bool,
}

impl LayerFactors {
    pub fn new(n_in_plus_bias: usize, n_out: usize) -> Self {
        Self {
            a_factor: Matrix::zeros(n_in_plus_bias, n_in_plus_bias),
            g_factor: Matrix::zeros(n_out, n_out),
            eig_a: None,
            eig_g: None,
            basis_a: None,
            basis_g: None,
            approx: None,
            steps_since_inversion: 0,
            initialized: false,
        }
    }

    /// Factors set directly, as if initialized from a batch.
    pub fn from_factors(a_factor: Matrix, g_factor: Matrix) -> Result<Self> {
        if !a_factor.is_square() || !g_factor.is_square() {
            return Err(Error::dim("Kronecker factors must be square"));
        }
        Ok(Self {
            a_factor,
            g_factor,
            initialized: true,
            ..Self::new(0, 0)
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn has_cached_eig(&self) -> bool {
        self.eig_a.is_some() && self.eig_g.is_some()
    }

    pub fn steps_since_inversion(&self) -> usize {
        self.steps_since_inversion
    }

    fn update(&mut self, a_est: Matrix, g_est: Matrix, decay: f64, t_inv: usize) -> Result<()> {
        if a_est.shape() != self.a_factor.shape() || g_est.shape() != self.g_factor.shape() {
            return Err(Error::dim(format!(
                "batch factors {:?}/{:?} vs state {:?}/{:?}",
                a_est.shape(),
                g_est.shape(),
                self.a_factor.shape(),
                self.g_factor.shape()
            )));
        }
        if self.initialized {
            self.a_factor = self.a_factor.scale(decay);
            self.a_factor.axpy(1.0 - decay, &a_est)?;
            self.g_factor = self.g_factor.scale(decay);
            self.g_factor.axpy(1.0 - decay, &g_est)?;
        } else {
            self.a_factor = a_est;
            self.g_factor = g_est;
            self.initialized = true;
        }
        self.steps_since_inversion += 1;
        if self.steps_since_inversion >= t_inv {
            self.invalidate();
        }
        Ok(())
    }

    fn invalidate(&mut self) {
        self.eig_a = None;
        self.eig_g = None;
        self.approx = None;
    }

    fn ensure_eig(&mut self) -> Result<(&SymEig, &SymEig)> {
        if self.eig_a.is_none() || self.eig_g.is_none() {
            let ea = warm_eig(&self.a_factor, self.basis_a.as_ref())?;
            let eg = warm_eig(&self.g_factor, self.basis_g.as_ref())?;
            self.basis_a = Some(ea.q.clone());
            self.basis_g = Some(eg.q.clone());
            self.eig_a = Some(ea);
            self.eig_g = Some(eg);
            self.steps_since_inversion = 0;
        }
        Ok((
            self.eig_a.as_ref().expect("just computed"),
            self.eig_g.as_ref().expect("just computed"),
        ))
    }

    fn check_grad(&self, grad: &Matrix) -> Result<()> {
        if grad.rows() != self.g_factor.rows() || grad.cols() != self.a_factor.rows() {
            return Err(Error::dim(format!(
                "gradient {:?} vs factors A {:?}, G {:?}",
                grad.shape(),
                self.a_factor.shape(),
                self.g_factor.shape()
            )));
        }
        Ok(())
    }

    /// `V` with `vec(V) = (A ⊗ G + λI)⁻¹ vec(grad)`, computed as
    /// `Q_G · [(Q_Gᵀ·grad·Q_A) ⊘ (d_G d_Aᵀ + λ)] · Q_Aᵀ`.
    ///
    /// `λ = 0` is accepted as long as no shifted eigenvalue product vanishes.
    pub fn precondition_normal(&mut self, grad: &Matrix, lambda: f64) -> Result<Matrix> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param("damping", format!("{lambda} must be non-negative")));
        }
        self.check_grad(grad)?;
        let (ea, eg) = self.ensure_eig()?;
        let d_a: Vec<f64> = ea.d.iter().map(|v| v.max(0.0)).collect();
        let d_g: Vec<f64> = eg.d.iter().map(|v| v.max(0.0)).collect();

        let mut rotated = eg.q.t_matmul(grad)?.mul_unchecked(&ea.q);
        for (i, dg) in d_g.iter().enumerate() {
            for (v, da) in rotated.row_mut(i).iter_mut().zip(&d_a) {
                let denom = dg * da + lambda;
                if denom <= 0.0 {
                    return Err(Error::Numerical(
                        "singular damped Fisher block (zero eigenvalue with λ = 0)".into(),
                    ));
                }
                *v /= denom;
            }
        }
        eg.q.mul_unchecked(&rotated).matmul_t(&ea.q)
    }

    /// `V = (G + √λ I)⁻¹ · grad · (A + √λ I)⁻¹`.
    pub fn precondition_approx(&mut self, grad: &Matrix, lambda: f64) -> Result<Matrix> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param("damping", format!("{lambda} must be non-negative")));
        }
        self.check_grad(grad)?;
        let stale = self.approx.as_ref().is_none_or(|c| c.lambda != lambda);
        if stale {
            let shift = lambda.sqrt();
            let a_inv = dense_inverse(&self.a_factor.add_diag(shift))?;
            let g_inv = dense_inverse(&self.g_factor.add_diag(shift))?;
            self.approx = Some(ApproxInverses { lambda, a_inv, g_inv });
            self.steps_since_inversion = 0;
        }
        let c = self.approx.as_ref().expect("just computed");
        Ok(c.g_inv.mul_unchecked(grad).mul_unchecked(&c.a_inv))
    }

    pub fn precondition(&mut self, grad: &Matrix, kind: DampingKind, lambda: f64) -> Result<Matrix> {
        match kind {
            DampingKind::Normal => self.precondition_normal(grad, lambda),
            DampingKind::Approximated => self.precondition_approx(grad, lambda),
        }
    }

    /// `⟨V, F̂·V⟩` with `F̂` the damped Kronecker block of the given scheme,
    /// evaluated from the current factors.
    pub fn damped_quadratic(&self, v: &Matrix, kind: DampingKind, lambda: f64) -> Result<f64> {
        self.check_grad(v)?;
        match kind {
            DampingKind::Normal => {
                let fv = self.g_factor.mul_unchecked(v).mul_unchecked(&self.a_factor);
                Ok(v.dot(&fv)? + lambda * v.dot(v)?)
            }
            DampingKind::Approximated => {
                let s = lambda.sqrt();
                let fv = self
                    .g_factor
                    .add_diag(s)
                    .mul_unchecked(v)
                    .mul_unchecked(&self.a_factor.add_diag(s));
                v.dot(&fv)
            }
        }
    }
}

/// Per-layer factors for a whole network.
#[derive(Debug, Clone)]
pub struct FisherState {
    pub layers: Vec<LayerFactors>,
    t_inv: usize,
}

impl FisherState {
    pub fn new(net: &Network, t_inv: usize) -> Result<Self> {
        if t_inv == 0 {
            return Err(Error::param("t_inv", "inversion period must be at least 1"));
        }
        Ok(Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerFactors::new(l.weights.cols(), l.weights.rows()))
                .collect(),
            t_inv,
        })
    }

    pub fn t_inv(&self) -> usize {
        self.t_inv
    }

    /// Folds one batch of statistics into the running factors: the first call
    /// copies the batch estimates, later calls blend `decay·old + (1−decay)·new`.
    pub fn update_factors(&mut self, capture: &LayerCapture, decay: f64) -> Result<()> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::param("decay", format!("{decay} not in (0, 1)")));
        }
        if capture.a_in.len() != self.layers.len() || capture.g_out.len() != self.layers.len() {
            return Err(Error::dim(format!(
                "capture has {}/{} layers, state has {}",
                capture.a_in.len(),
                capture.g_out.len(),
                self.layers.len()
            )));
        }
        let t_inv = self.t_inv;
        for ((layer, a), g) in self.layers.iter_mut().zip(&capture.a_in).zip(&capture.g_out) {
            let (a_est, g_est) = batch_factors(a, g)?;
            layer.update(a_est, g_est, decay, t_inv)?;
        }
        Ok(())
    }

    /// Eigenvalue spectra of every factor, for conditioning diagnostics.
    pub fn spectra(&self) -> Result<Vec<LayerSpectrum>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let a = sym_eig(&l.a_factor)?.d;
                let g = sym_eig(&l.g_factor)?.d;
                Ok(LayerSpectrum {
                    layer: i,
                    a_condition: condition(&a),
                    g_condition: condition(&g),
                    a_eigenvalues: a,
                    g_eigenvalues: g,
                })
            })
            .collect()
    }
}

/// `(aᵀa / B, gᵀg / B)` for one layer's capture.
pub fn batch_factors(a_in: &Matrix, g_out: &Matrix) -> Result<(Matrix, Matrix)> {
    if a_in.rows() != g_out.rows() || a_in.rows() == 0 {
        return Err(Error::dim(format!(
            "capture rows {} vs {}",
            a_in.rows(),
            g_out.rows()
        )));
    }
    let inv_b = 1.0 / a_in.rows() as f64;
    Ok((
        a_in.t_matmul(a_in)?.scale(inv_b),
        g_out.t_matmul(g_out)?.scale(inv_b),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer: usize,
    pub a_eigenvalues: Vec<f64>,
    pub g_eigenvalues: Vec<f64>,
    /// Largest over smallest eigenvalue; `None` when the smallest is not positive.
    pub a_condition: Option<f64>,
    pub g_condition: Option<f64>,
}

fn condition(desc: &[f64]) -> Option<f64> {
    match (desc.first(), desc.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => Some(hi / lo),
        _ => None,
    }
}
