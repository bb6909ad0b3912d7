//! Squared-exponential covariance functions on the unit hypercube, their
//! Gram matrices, and the prior densities placed on every hyperparameter.
//!
//! Both kernels are written in the "correlation parameter" form
//! `c · Π_p β_p^{4Δ_p²}` with `c = (1 − s)/s`, which keeps every
//! hyperparameter inside `(0, 1]`: `β_p → 1` removes input `p`, and `s`
//! trades marginal variance for a bounded parameter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Lower clip applied to unit-interval hyperparameters inside samplers and
/// optimizers.
pub const UNIT_CLIP: f64 = 1e-6;

/// Second shape parameter of the Beta(1, b) prior on discrepancy ARD
/// parameters.
pub const ARD_BETA_B: f64 = 0.1;

/// Hyperparameters of the emulator covariance for one basis weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorKernelParams {
    /// Marginal-variance fraction σ².
    pub sigma2: f64,
    /// Residual-variance fraction η².
    pub eta2: f64,
    /// Correlation parameters, one per active input.
    pub beta: Vec<f64>,
}

/// Hyperparameters of the discrepancy covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyKernelParams {
    pub tau2: f64,
    /// One entry per boundary column, index 0 being the fictitious input.
    pub alpha: Vec<f64>,
}

fn open_unit(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} = {v} must lie strictly inside (0, 1)")))
    }
}

/// Emulator kernel with logarithms precomputed for repeated evaluation.
#[derive(Debug, Clone)]
pub(crate) struct PreparedRho {
    pub scale: f64,
    pub white: f64,
    pub log_beta: Vec<f64>,
}

impl PreparedRho {
    pub fn new(p: &EmulatorKernelParams) -> Result<Self> {
        open_unit(p.sigma2, "sigma2")?;
        open_unit(p.eta2, "eta2")?;
        for &b in &p.beta {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::InvalidInput(format!("beta = {b} must lie in (0, 1]")));
            }
        }
        Ok(Self::unchecked(p))
    }

    pub fn unchecked(p: &EmulatorKernelParams) -> Self {
        Self {
            scale: (1.0 - p.sigma2) / p.sigma2,
            white: (1.0 - p.eta2) / p.eta2,
            log_beta: p.beta.iter().map(|b| b.ln()).collect(),
        }
    }

    #[inline]
    pub fn correlated(&self, zi: &[f64], zj: &[f64]) -> f64 {
        let mut e = 0.0;
        for ((a, b), lb) in zi.iter().zip(zj).zip(&self.log_beta) {
            let d = a - b;
            e += 4.0 * d * d * lb;
        }
        self.scale * e.exp()
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let m = points.len();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            g[(i, i)] = self.scale + self.white;
            for j in 0..i {
                let v = self.correlated(&points[i], &points[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

/// Discrepancy kernel with logarithms precomputed.
#[derive(Debug, Clone)]
pub(crate) struct PreparedZeta {
    pub scale: f64,
    pub log_alpha: Vec<f64>,
}

impl PreparedZeta {
    pub fn new(p: &DiscrepancyKernelParams) -> Result<Self> {
        open_unit(p.tau2, "tau2")?;
        for &a in &p.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidInput(format!("alpha = {a} must lie in (0, 1]")));
            }
        }
        Ok(Self::unchecked(p))
    }

    pub fn unchecked(p: &DiscrepancyKernelParams) -> Self {
        Self {
            scale: (1.0 - p.tau2) / p.tau2,
            log_alpha: p.alpha.iter().map(|a| a.ln()).collect(),
        }
    }

    /// Gram matrix over the rows of `x` (N × (S+1)).
    pub fn gram_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let active: Vec<(usize, f64)> = self
            .log_alpha
            .iter()
            .enumerate()
            .filter(|(_, la)| **la != 0.0)
            .map(|(s, la)| (s, 4.0 * la))
            .collect();
        let mut g = DMatrix::from_element(n, n, self.scale);
        if active.is_empty() {
            return g;
        }
        for j in 0..n {
            for i in (j + 1)..n {
                let mut e = 0.0;
                for &(s, w) in &active {
                    let d = x[(i, s)] - x[(j, s)];
                    e += w * d * d;
                }
                let v = self.scale * e.exp();
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

/// Emulator covariance between two active-input vectors. The white term
/// `(1 − η²)/η²` is added only when `same_index` is set.
pub fn rho(zi: &[f64], zj: &[f64], params: &EmulatorKernelParams, same_index: bool) -> Result<f64> {
    if zi.len() != params.beta.len() || zj.len() != params.beta.len() {
        return Err(Error::InvalidInput(format!(
            "input lengths {} / {} do not match {} correlation parameters",
            zi.len(),
            zj.len(),
            params.beta.len()
        )));
    }
    let k = PreparedRho::new(params)?;
    let white = if same_index { k.white } else { 0.0 };
    Ok(k.correlated(zi, zj) + white)
}

/// Discrepancy covariance between two boundary-condition rows.
pub fn zeta(xi: &[f64], xj: &[f64], params: &DiscrepancyKernelParams) -> Result<f64> {
    if xi.len() != params.alpha.len() || xj.len() != params.alpha.len() {
        return Err(Error::InvalidInput(format!(
            "input lengths {} / {} do not match {} ARD parameters",
            xi.len(),
            xj.len(),
            params.alpha.len()
        )));
    }
    let k = PreparedZeta::new(params)?;
    let mut e = 0.0;
    for ((a, b), la) in xi.iter().zip(xj).zip(&k.log_alpha) {
        let d = a - b;
        e += 4.0 * d * d * la;
    }
    Ok(k.scale * e.exp())
}

#[derive(Debug, Clone, Copy)]
pub enum KernelKind<'a> {
    Emulator(&'a EmulatorKernelParams),
    Discrepancy(&'a DiscrepancyKernelParams),
}

/// Symmetric Gram matrix of a kernel over a point list. The emulator white
/// term sits on the diagonal only.
pub fn gram(points: &[Vec<f64>], kind: KernelKind<'_>) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("gram over an empty point list".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("ragged point list".into()));
    }
    match kind {
        KernelKind::Emulator(p) => {
            if dim != p.beta.len() {
                return Err(Error::InvalidInput("point dimension does not match beta".into()));
            }
            Ok(PreparedRho::new(p)?.gram(points))
        }
        KernelKind::Discrepancy(p) => {
            if dim != p.alpha.len() {
                return Err(Error::InvalidInput("point dimension does not match alpha".into()));
            }
            let k = PreparedZeta::new(p)?;
            let x = DMatrix::from_fn(points.len(), dim, |i, j| points[i][j]);
            Ok(k.gram_rows(&x))
        }
    }
}

/// Gamma prior on a precision parameter. When `k_scaled` is set the rate is
/// divided by the squared norm of the basis vector the precision belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPrior {
    pub shape: f64,
    pub rate: f64,
    pub k_scaled: bool,
}

impl PrecisionPrior {
    pub fn new(shape: f64, rate: f64, k_scaled: bool) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Gamma prior needs finite positive shape/rate, got ({shape}, {rate})"
            )));
        }
        Ok(Self { shape, rate, k_scaled })
    }

    pub fn effective_rate(&self, k_norm2: f64) -> f64 {
        if self.k_scaled {
            self.rate / k_norm2
        } else {
            self.rate
        }
    }

    /// Log Gamma(shape, rate) density; `k_norm2` is ignored unless the prior
    /// is k-scaled.
    pub fn log_density(&self, lambda: f64, k_norm2: f64) -> f64 {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return f64::NEG_INFINITY;
        }
        gamma_log_pdf(lambda, self.shape, self.effective_rate(k_norm2))
    }
}

pub(crate) fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log Beta(1, 0.1) density of one ARD parameter. Values at the upper edge
/// are evaluated at `1 − UNIT_CLIP`, where the density is still finite.
pub fn ard_log_density(alpha: f64) -> f64 {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return f64::NEG_INFINITY;
    }
    let a = alpha.min(1.0 - UNIT_CLIP);
    ARD_BETA_B.ln() + (ARD_BETA_B - 1.0) * (1.0 - a).ln()
}

/// A block of hyperparameters sharing one prior family.
#[derive(Debug, Clone, Copy)]
pub enum ParamBlock<'a> {
    /// Uniform(0, 1) priors (σ², η², β, τ²).
    Uniform(&'a [f64]),
    /// Beta(1, 0.1) ARD priors on discrepancy correlation parameters.
    Ard(&'a [f64]),
    /// A Gamma-distributed precision.
    Precision { prior: PrecisionPrior, value: f64, k_norm2: f64 },
}

/// Log prior density of a parameter block; negative infinity outside the
/// support.
pub fn log_prior(block: ParamBlock<'_>) -> f64 {
    match block {
        ParamBlock::Uniform(values) => {
            if values.iter().all(|v| *v > 0.0 && *v < 1.0) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        ParamBlock::Ard(values) => values.iter().map(|a| ard_log_density(*a)).sum(),
        ParamBlock::Precision { prior, value, k_norm2 } => prior.log_density(value, k_norm2),
    }
}

/// Cross-covariance vector between one point and a list (emulator kernel,
/// no white term).
pub(crate) fn rho_cross(k: &PreparedRho, z: &[f64], points: &[Vec<f64>]) -> DVector<f64> {
    DVector::from_iterator(points.len(), points.iter().map(|p| k.correlated(z, p)))
}
