//! Quasi-Bayesian emulator: one GP per basis weight, hyperparameters chosen
//! by maximizing the per-weight joint density and then frozen.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisPair, SimulationEnsemble};
use crate::error::{ensure_finite, Error, Result};
use crate::kernel::{gamma_log_pdf, rho_cross, EmulatorKernelParams, PrecisionPrior, PreparedRho, UNIT_CLIP};
use crate::linalg::{jittered_cholesky, mvn_log_density};
use crate::optimize::{nelder_mead, NelderMeadOptions};

/// Default minimum log-density gain for adding an input during selection.
pub const DEFAULT_SELECTION_THRESHOLD: f64 = 2.0;

const LOGIT_LIMIT: f64 = 13.815_509_557_963_773; // logit(1 − 1e-6)
const LOG_LAMBDA_LIMIT: f64 = 60.0;

/// Shape and rate of the Gamma prior on the simulation precision λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationPriors {
    pub a: f64,
    /// `None` selects `√ε_machine × s_max` from the ensemble SVD.
    pub b: Option<f64>,
}

impl Default for SimulationPriors {
    fn default() -> Self {
        Self { a: 2.0, b: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmulatorConfig {
    pub restarts: usize,
    pub max_evals: usize,
    pub f_tol: f64,
    pub selection_threshold: f64,
    /// When false every input is active for every weight.
    pub forward_selection: bool,
    pub seed: u64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_evals: 1500,
            f_tol: 1e-9,
            selection_threshold: DEFAULT_SELECTION_THRESHOLD,
            forward_selection: true,
            seed: 0,
        }
    }
}

/// Optimized hyperparameters of one weight GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    /// Indices into the design columns, ascending.
    pub active_inputs: Vec<usize>,
    pub kernel: EmulatorKernelParams,
    pub lambda: f64,
    /// Maximized log-density of this weight's factor.
    pub log_density: f64,
    /// False when the optimizer exhausted its budget.
    pub converged: bool,
}

/// Log of the per-weight factor: Gaussian marginal of the weights plus the
/// Gamma prior on λ (uniform kernel priors contribute zero).
pub fn weight_log_density(
    weights: &DVector<f64>,
    points: &[Vec<f64>],
    kernel: &EmulatorKernelParams,
    lambda: f64,
    lambda_shape: f64,
    lambda_rate: f64,
) -> f64 {
    let k = PreparedRho::unchecked(kernel);
    let mut g = k.gram(points);
    for i in 0..points.len() {
        g[(i, i)] += 1.0 / lambda;
    }
    match jittered_cholesky(g) {
        Ok(chol) => mvn_log_density(&chol, weights) + gamma_log_pdf(lambda, lambda_shape, lambda_rate),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn decode(theta: &[f64]) -> (EmulatorKernelParams, f64) {
    let unit = |x: f64| sigmoid(x.clamp(-LOGIT_LIMIT, LOGIT_LIMIT));
    let n = theta.len();
    let kernel = EmulatorKernelParams {
        sigma2: unit(theta[0]),
        eta2: unit(theta[1]),
        beta: theta[2..n - 1].iter().map(|v| unit(*v)).collect(),
    };
    let lambda = theta[n - 1].clamp(-LOG_LAMBDA_LIMIT, LOG_LAMBDA_LIMIT).exp();
    (kernel, lambda)
}

fn active_points(design: &DMatrix<f64>, active: &[usize]) -> Vec<Vec<f64>> {
    (0..design.nrows())
        .map(|m| active.iter().map(|&p| design[(m, p)]).collect())
        .collect()
}

fn validate_row(weights: &DVector<f64>, design: &DMatrix<f64>) -> Result<()> {
    ensure_finite(weights.as_slice(), "weight row")?;
    ensure_finite(design.as_slice(), "design")?;
    if weights.len() != design.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} design rows",
            weights.len(),
            design.nrows()
        )));
    }
    Ok(())
}

/// Multi-start maximization of one weight's factor for a fixed active set.
pub fn fit_weight(
    weights: &DVector<f64>,
    design: &DMatrix<f64>,
    active: &[usize],
    lambda_prior: PrecisionPrior,
    k_norm2: f64,
    cfg: &EmulatorConfig,
) -> Result<WeightFit> {
    validate_row(weights, design)?;
    let points = active_points(design, active);
    let shape = lambda_prior.shape;
    let rate = lambda_prior.effective_rate(k_norm2);
    let dim = active.len() + 3;
    let restarts = cfg.restarts.max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Stratified starts: restart r takes stratum perm_d[r] in every unit
    // dimension d.
    let strata: Vec<Vec<usize>> = (0..dim - 1)
        .map(|_| {
            let mut perm: Vec<usize> = (0..restarts).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();
    let lambda_dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let objective = |theta: &[f64]| {
        let (kernel, lambda) = decode(theta);
        -weight_log_density(weights, &points, &kernel, lambda, shape, rate)
    };
    let opts = NelderMeadOptions { max_evals: cfg.max_evals, f_tol: cfg.f_tol, initial_step: 1.0 };

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for r in 0..restarts {
        let mut start: Vec<f64> = strata
            .iter()
            .map(|perm| {
                let u = (perm[r] as f64 + rng.random::<f64>()) / restarts as f64;
                logit(u.clamp(UNIT_CLIP, 1.0 - UNIT_CLIP))
            })
            .collect();
        let lambda0: f64 = lambda_dist.sample(&mut rng);
        start.push(lambda0.max(f64::MIN_POSITIVE).ln().clamp(-LOG_LAMBDA_LIMIT, LOG_LAMBDA_LIMIT));
        let found = nelder_mead(objective, &start, opts);
        if best.as_ref().is_none_or(|b| found.value < b.1) {
            best = Some((found.x, found.value, found.converged));
        }
    }
    let (theta, value, converged) = best.expect("at least one restart");
    if !value.is_finite() {
        return Err(Error::Numerical("emulator objective is infinite at every restart".into()));
    }
    if !converged {
        log::warn!("emulator optimizer reached its budget; keeping best point found");
    }
    let (kernel, lambda) = decode(&theta);
    Ok(WeightFit { active_inputs: active.to_vec(), kernel, lambda, log_density: -value, converged })
}

fn select_with_fit(
    weights: &DVector<f64>,
    design: &DMatrix<f64>,
    lambda_prior: PrecisionPrior,
    k_norm2: f64,
    cfg: &EmulatorConfig,
) -> Result<WeightFit> {
    let mut current = fit_weight(weights, design, &[], lambda_prior, k_norm2, cfg)?;
    if !(cfg.selection_threshold < f64::INFINITY) {
        return Ok(current);
    }
    loop {
        let mut best: Option<WeightFit> = None;
        for p in 0..design.ncols() {
            if current.active_inputs.contains(&p) {
                continue;
            }
            let mut trial = current.active_inputs.clone();
            trial.push(p);
            trial.sort_unstable();
            let fit = fit_weight(weights, design, &trial, lambda_prior, k_norm2, cfg)?;
            if best.as_ref().is_none_or(|b| fit.log_density > b.log_density) {
                best = Some(fit);
            }
        }
        match best {
            Some(fit) if fit.log_density - current.log_density >= cfg.selection_threshold => current = fit,
            _ => return Ok(current),
        }
    }
}

/// Greedy forward selection of the inputs a weight GP depends on. Stops when
/// no addition raises the maximized log-density by `cfg.selection_threshold`.
pub fn forward_select_inputs(
    weights: &DVector<f64>,
    design: &DMatrix<f64>,
    lambda_prior: PrecisionPrior,
    k_norm2: f64,
    cfg: &EmulatorConfig,
) -> Result<Vec<usize>> {
    if !(cfg.selection_threshold < f64::INFINITY) {
        validate_row(weights, design)?;
        return Ok(Vec::new());
    }
    Ok(select_with_fit(weights, design, lambda_prior, k_norm2, cfg)?.active_inputs)
}

/// A fitted weight GP with its factorization cached.
#[derive(Debug, Clone)]
pub struct WeightEmulator {
    fit: WeightFit,
    points: Vec<Vec<f64>>,
    kernel: PreparedRho,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl WeightEmulator {
    pub fn new(fit: WeightFit, design: &DMatrix<f64>, weights: &DVector<f64>) -> Result<Self> {
        validate_row(weights, design)?;
        if fit.active_inputs.iter().any(|&p| p >= design.ncols()) || fit.kernel.beta.len() != fit.active_inputs.len() {
            return Err(Error::InvalidInput("active inputs inconsistent with the design".into()));
        }
        if !(fit.lambda > 0.0 && fit.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda = {} must be positive", fit.lambda)));
        }
        let kernel = PreparedRho::new(&fit.kernel)?;
        let points = active_points(design, &fit.active_inputs);
        let mut g = kernel.gram(&points);
        for i in 0..points.len() {
            g[(i, i)] += 1.0 / fit.lambda;
        }
        let chol = jittered_cholesky(g)?;
        let alpha = chol.solve(weights);
        Ok(Self { fit, points, kernel, chol, alpha })
    }

    pub fn fit(&self) -> &WeightFit {
        &self.fit
    }

    /// Covariance matrix the cached factor was computed from.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = self.kernel.gram(&self.points);
        for i in 0..self.points.len() {
            g[(i, i)] += 1.0 / self.fit.lambda;
        }
        g
    }

    pub fn factor(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Predictive mean and variance at a full-dimensional design point.
    pub fn predict(&self, z_star: &[f64], lambda_star: f64) -> (f64, f64) {
        let z: Vec<f64> = self.fit.active_inputs.iter().map(|&p| z_star[p]).collect();
        let kx = rho_cross(&self.kernel, &z, &self.points);
        let mean = kx.dot(&self.alpha);
        let mut v = kx;
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let reduction = (self.kernel.scale + self.kernel.white - v.norm_squared()).max(0.0);
        (mean, 1.0 / lambda_star + reduction)
    }
}

/// Fitted emulator for all Q basis weights. Immutable once built.
#[derive(Debug, Clone)]
pub struct EmulatorModel {
    per_weight: Vec<WeightEmulator>,
    design: DMatrix<f64>,
    weights: DMatrix<f64>,
    fit_log_density: f64,
}

impl EmulatorModel {
    /// Rebuilds the caches from stored fits.
    pub fn from_fits(design: DMatrix<f64>, weights: DMatrix<f64>, fits: Vec<WeightFit>) -> Result<Self> {
        if fits.len() != weights.nrows() {
            return Err(Error::InvalidInput(format!("{} fits for {} weight rows", fits.len(), weights.nrows())));
        }
        let per_weight = fits
            .into_iter()
            .enumerate()
            .map(|(q, fit)| WeightEmulator::new(fit, &design, &weights.row(q).transpose()))
            .collect::<Result<Vec<_>>>()?;
        let fit_log_density = per_weight.iter().map(|w| w.fit.log_density).sum();
        Ok(Self { per_weight, design, weights, fit_log_density })
    }

    pub fn per_weight(&self) -> &[WeightEmulator] {
        &self.per_weight
    }

    pub fn fits(&self) -> Vec<WeightFit> {
        self.per_weight.iter().map(|w| w.fit.clone()).collect()
    }

    pub fn training_design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn training_weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn fit_log_density(&self) -> f64 {
        self.fit_log_density
    }

    pub fn q(&self) -> usize {
        self.per_weight.len()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }
}

/// Shape `a′` and rate `b′` of the simulation-precision Gamma after
/// absorbing the out-of-basis residual of every run.
pub fn simulation_precision_prior(
    outputs: &DMatrix<f64>,
    basis: &BasisPair,
    priors: SimulationPriors,
) -> Result<PrecisionPrior> {
    let (n, m) = outputs.shape();
    let q = basis.q();
    let b = match priors.b {
        Some(b) => b,
        None => {
            let s_max = basis.singular_values().iter().copied().fold(0.0, f64::max);
            f64::EPSILON.sqrt() * s_max.max(1.0e-300)
        }
    };
    let residual = outputs - basis.k() * basis.weights();
    let a_prime = priors.a + (m * n.saturating_sub(q)) as f64 / 2.0;
    let b_prime = b + 0.5 * residual.norm_squared();
    PrecisionPrior::new(a_prime, b_prime, true)
}

/// Fits every weight GP (forward selection, then the final fit) and freezes
/// the hyperparameters.
pub fn fit_emulator(
    ensemble: &SimulationEnsemble,
    basis: &BasisPair,
    priors: SimulationPriors,
    cfg: &EmulatorConfig,
) -> Result<EmulatorModel> {
    let design = ensemble.design().unit().clone();
    let (m, p) = design.shape();
    if m < 2 * p {
        log::warn!("{m} runs for {p} parameters; at least {} recommended", 2 * p);
    }
    if basis.n() != ensemble.points() || basis.weights().ncols() != m {
        return Err(Error::InvalidInput("basis was not built from this ensemble".into()));
    }
    let lambda_prior = simulation_precision_prior(ensemble.outputs(), basis, priors)?;
    let weights = basis.weights().clone();
    let k_norms2 = basis.k_norms2();

    let fit_one = |q: usize| -> Result<WeightFit> {
        let row = weights.row(q).transpose();
        let cfg_q = EmulatorConfig { seed: cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(q as u64 + 1)), ..*cfg };
        let all: Vec<usize> = (0..p).collect();
        let fit = if cfg.forward_selection {
            select_with_fit(&row, &design, lambda_prior, k_norms2[q], &cfg_q)?
        } else {
            fit_weight(&row, &design, &all, lambda_prior, k_norms2[q], &cfg_q)?
        };
        log::debug!("weight {q}: active {:?}, log density {:.3}", fit.active_inputs, fit.log_density);
        Ok(fit)
    };

    #[cfg(feature = "parallel")]
    let fits: Vec<WeightFit> = {
        use rayon::prelude::*;
        (0..weights.nrows()).into_par_iter().map(fit_one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<WeightFit> = (0..weights.nrows()).map(fit_one).collect::<Result<_>>()?;

    EmulatorModel::from_fits(design, weights, fits)
}

/// Predictive mean `w′_q` and variance `σ′²_q` of every basis weight at
/// `z_star`, given the observation precisions `lambda_star` (one per weight).
pub fn emulator_predict(model: &EmulatorModel, z_star: &[f64], lambda_star: &[f64]) -> Result<Vec<(f64, f64)>> {
    if z_star.len() != model.p() {
        return Err(Error::InvalidInput(format!("z* has {} entries, expected {}", z_star.len(), model.p())));
    }
    if z_star.iter().any(|z| !(0.0..=1.0).contains(z)) {
        return Err(Error::InvalidInput("z* lies outside the unit hypercube".into()));
    }
    if lambda_star.len() != model.q() || lambda_star.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidInput("lambda* must hold one positive value per weight".into()));
    }
    Ok(model
        .per_weight
        .iter()
        .zip(lambda_star)
        .map(|(w, l)| w.predict(z_star, *l))
        .collect())
}
