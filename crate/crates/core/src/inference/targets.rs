//! Posterior targets for the calibration parameters (with per-weight
//! observation precisions) and for the discrepancy hyperparameters.

use faer::linalg::solvers::{Llt, Solve};
use std::cell::RefCell;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::ais::{AnnealingProblem, Support};
use crate::basis::BasisPair;
use crate::emulator::EmulatorModel;
use crate::error::{ensure_finite, Error, Result};
use crate::kernel::{ard_log_density, DiscrepancyKernelParams, PrecisionPrior, PreparedZeta, ARD_BETA_B, UNIT_CLIP};
use crate::linalg::{jittered_cholesky, jittered_llt, mvn_log_density, LN_2PI};

/// Default confidence factor `c` of the observation-precision prior.
pub const DEFAULT_CONFIDENCE: f64 = 0.1;

/// Gamma prior on the observation precision: shape `N·c`, rate
/// `var(ν)·N·c`, so its mean is the measurement-error precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationPriors {
    pub shape: f64,
    pub rate: f64,
}

impl ObservationPriors {
    pub fn from_noise(noise_variance: f64, n: usize, confidence: f64) -> Result<Self> {
        let lo = 2.0 / n as f64;
        if !(confidence >= lo - 1e-12 && confidence <= 1.0) {
            return Err(Error::InvalidInput(format!("confidence c = {confidence} outside [2/N, 1] = [{lo}, 1]")));
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidInput(format!("noise variance {noise_variance} must be positive")));
        }
        let shape = n as f64 * confidence;
        Ok(Self { shape, rate: noise_variance * shape })
    }

    /// Prior of λ*_q on weight q (rate divided by `k_qᵀk_q`).
    pub fn weight_precision(&self) -> PrecisionPrior {
        PrecisionPrior { shape: self.shape, rate: self.rate, k_scaled: true }
    }

    pub fn discrepancy_precision(&self) -> PrecisionPrior {
        PrecisionPrior { shape: self.shape, rate: self.rate, k_scaled: false }
    }
}

/// Unnormalized log posterior of `(z*, λ*)`: Gaussian fit of every observed
/// weight to the emulator prediction, Gamma priors on λ*_q, uniform prior on
/// `z*` over the unit cube.
pub fn calibration_log_target(
    z_star: &[f64],
    lambda_star: &[f64],
    emulator: &EmulatorModel,
    w_star: &[f64],
    k_norms2: &[f64],
    priors: &ObservationPriors,
) -> f64 {
    if z_star.len() != emulator.p()
        || lambda_star.len() != emulator.q()
        || w_star.len() != emulator.q()
        || k_norms2.len() != emulator.q()
    {
        return f64::NEG_INFINITY;
    }
    if z_star.iter().any(|z| !(0.0..=1.0).contains(z)) || lambda_star.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return f64::NEG_INFINITY;
    }
    let prior = priors.weight_precision();
    let mut total = 0.0;
    for (q, emu) in emulator.per_weight().iter().enumerate() {
        let (mean, var) = emu.predict(z_star, lambda_star[q]);
        let r = w_star[q] - mean;
        total += -0.5 * (LN_2PI + var.ln()) - r * r / (2.0 * var);
        total += prior.log_density(lambda_star[q], k_norms2[q]);
    }
    total
}

/// AIS problem over `[z*_1..z*_P, λ*_1..λ*_Q]`.
pub struct CalibrationProblem<'a> {
    emulator: &'a EmulatorModel,
    w_star: Vec<f64>,
    k_norms2: Vec<f64>,
    priors: ObservationPriors,
    gammas: Vec<Gamma<f64>>,
}

impl<'a> CalibrationProblem<'a> {
    pub fn new(emulator: &'a EmulatorModel, w_star: &DVector<f64>, k_norms2: &[f64], priors: ObservationPriors) -> Result<Self> {
        ensure_finite(w_star.as_slice(), "observed weights")?;
        if w_star.len() != emulator.q() || k_norms2.len() != emulator.q() {
            return Err(Error::InvalidInput("observed weights do not match the emulator".into()));
        }
        let gammas = k_norms2
            .iter()
            .map(|kk| Gamma::new(priors.shape, kk / priors.rate).map_err(|e| Error::InvalidInput(e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { emulator, w_star: w_star.iter().copied().collect(), k_norms2: k_norms2.to_vec(), priors, gammas })
    }

    pub fn p(&self) -> usize {
        self.emulator.p()
    }

    pub fn q(&self) -> usize {
        self.emulator.q()
    }
}

impl AnnealingProblem for CalibrationProblem<'_> {
    fn dim(&self) -> usize {
        self.p() + self.q()
    }

    fn support(&self, i: usize) -> Support {
        if i < self.p() {
            Support::Interval(0.0, 1.0)
        } else {
            Support::Positive
        }
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.p()).map(|_| rng.random::<f64>()).collect();
        x.extend(self.gammas.iter().map(|g| g.sample(rng)));
        x
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        let (z, l) = x.split_at(self.p());
        if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return f64::NEG_INFINITY;
        }
        let prior = self.priors.weight_precision();
        l.iter().zip(&self.k_norms2).map(|(v, kk)| prior.log_density(*v, *kk)).sum()
    }

    fn log_target(&self, x: &[f64]) -> f64 {
        let (z, l) = x.split_at(self.p());
        calibration_log_target(z, l, self.emulator, &self.w_star, &self.k_norms2, &self.priors)
    }
}

/// Unnormalized log posterior of the discrepancy hyperparameters, evaluated
/// directly on `H`: Gaussian density of `v̂` with covariance
/// `Hᵀ(I/λ* + ζ(X, X))H`, Gamma prior on λ*, Beta(1, 0.1) priors on every
/// α_s and a uniform prior on τ².
pub fn discrepancy_log_target(
    params: &DiscrepancyKernelParams,
    lambda_star: f64,
    v_hat: &DVector<f64>,
    x: &DMatrix<f64>,
    h: &DMatrix<f64>,
    priors: &ObservationPriors,
) -> f64 {
    let Ok(kernel) = PreparedZeta::new(params) else {
        return f64::NEG_INFINITY;
    };
    if !(lambda_star > 0.0 && lambda_star.is_finite()) || params.alpha.len() != x.ncols() {
        return f64::NEG_INFINITY;
    }
    let mut z = kernel.gram_rows(x);
    for i in 0..z.nrows() {
        z[(i, i)] += 1.0 / lambda_star;
    }
    let cov = h.transpose() * z * h;
    let Ok(chol) = jittered_cholesky(cov) else {
        return f64::NEG_INFINITY;
    };
    mvn_log_density(&chol, v_hat)
        + priors.discrepancy_precision().log_density(lambda_star, 1.0)
        + params.alpha.iter().map(|a| ard_log_density(*a)).sum::<f64>()
}

struct Workspace {
    b: Mat<f64>,
    a: Mat<f64>,
    m: Mat<f64>,
    l: Mat<f64>,
    r: Mat<f64>,
}

impl Workspace {
    fn new(n: usize, q: usize) -> Self {
        Self {
            b: Mat::zeros(n, n),
            a: Mat::zeros(n, q),
            m: Mat::zeros(q, q),
            l: Mat::zeros(n, 2 * q),
            r: Mat::zeros(n, 2 * q),
        }
    }
}

thread_local! {
    static WORKSPACE: RefCell<Option<Workspace>> = const { RefCell::new(None) };
}

/// Discrepancy Gaussian process restricted to the complement of `K`.
///
/// Works in the N-dimensional space with `B = I/λ + P ζ P`, where `P` is the
/// complement projector: `B` acts as `Hᵀ(I/λ + ζ)H` on `span(H)` and as
/// `I/λ` on `span(K)`, so both the log-determinant and the quadratic form
/// follow from one N × N factorization with only O(N²Q) work to form it.
#[derive(Debug, Clone)]
pub struct DiscrepancyModel {
    x: DMatrix<f64>,
    h: DMatrix<f64>,
    v_hat: DVector<f64>,
    /// Orthonormalized columns of `K`.
    u: Mat<f64>,
    y_perp: Mat<f64>,
    /// Squared differences of each boundary input between time points.
    sq_dist: Vec<Mat<f64>>,
}

impl DiscrepancyModel {
    pub fn new(basis: &BasisPair, x: &DMatrix<f64>, v_hat: &DVector<f64>) -> Result<Self> {
        let h = basis.h().ok_or_else(|| Error::InvalidInput("complement basis not built".into()))?.clone();
        if x.nrows() != basis.n() {
            return Err(Error::InvalidInput("boundary rows do not match the basis".into()));
        }
        if v_hat.len() != h.ncols() {
            return Err(Error::InvalidInput("v̂ length does not match H".into()));
        }
        ensure_finite(x.as_slice(), "boundary conditions")?;
        let k = basis.k();
        let norms: Vec<f64> = k.column_iter().map(|c| c.norm()).collect();
        let u = Mat::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] / norms[j]);
        let yp = &h * v_hat;
        let y_perp = Mat::from_fn(yp.len(), 1, |i, _| yp[i]);
        let n = x.nrows();
        let sq_dist = (0..x.ncols())
            .map(|s| {
                Mat::from_fn(n, n, |i, j| {
                    let d = x[(i, s)] - x[(j, s)];
                    d * d
                })
            })
            .collect();
        Ok(Self { x: x.clone(), h, v_hat: v_hat.clone(), u, y_perp, sq_dist })
    }

    pub fn inputs(&self) -> usize {
        self.x.ncols()
    }

    pub fn v_hat(&self) -> &DVector<f64> {
        &self.v_hat
    }

    pub fn boundary(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Writes `ζ(X, X)` into `z`, evaluating the exponential on the lower
    /// triangle only.
    fn fill_zeta(&self, kernel: &PreparedZeta, z: &mut Mat<f64>) {
        let n = self.x.nrows();
        let active: Vec<(usize, f64)> = kernel
            .log_alpha
            .iter()
            .enumerate()
            .filter(|(_, la)| **la != 0.0)
            .map(|(s, la)| (s, 4.0 * la))
            .collect();
        for j in 0..n {
            let col = &mut z.col_as_slice_mut(j)[j..];
            let Some((&(s0, w0), rest)) = active.split_first() else {
                col.fill(kernel.scale);
                continue;
            };
            for (o, d) in col.iter_mut().zip(&self.sq_dist[s0].col_as_slice(j)[j..]) {
                *o = w0 * d;
            }
            for &(s, w) in rest {
                for (o, d) in col.iter_mut().zip(&self.sq_dist[s].col_as_slice(j)[j..]) {
                    *o += w * d;
                }
            }
            for o in col.iter_mut() {
                *o = kernel.scale * o.exp();
            }
        }
        for j in 0..n {
            for i in (j + 1)..n {
                z[(j, i)] = z[(i, j)];
            }
        }
    }

    /// `B = I/λ + PζP`, factorized. `PζP = ζ − [U Ã][Ã U]ᵀ` with
    /// `Ã = ζU − ½U(UᵀζU)`.
    fn factor(&self, kernel: &PreparedZeta, lambda: f64) -> Result<Llt<f64>> {
        let (n, q) = (self.u.nrows(), self.u.ncols());
        WORKSPACE.with(|cell| {
            let mut guard = cell.borrow_mut();
            let w = guard.get_or_insert_with(|| Workspace::new(n, q));
            if w.b.nrows() != n || w.a.ncols() != q {
                *w = Workspace::new(n, q);
            }
            self.fill_zeta(kernel, &mut w.b);
            matmul(w.a.as_mut(), Accum::Replace, w.b.as_ref(), self.u.as_ref(), 1.0, Par::Seq);
            matmul(w.m.as_mut(), Accum::Replace, self.u.transpose(), w.a.as_ref(), 1.0, Par::Seq);
            matmul(w.a.as_mut(), Accum::Add, self.u.as_ref(), w.m.as_ref(), -0.5, Par::Seq);
            w.l.subcols_mut(0, q).copy_from(&self.u);
            w.l.subcols_mut(q, q).copy_from(&w.a);
            w.r.subcols_mut(0, q).copy_from(&w.a);
            w.r.subcols_mut(q, q).copy_from(&self.u);
            matmul(w.b.as_mut(), Accum::Add, w.l.as_ref(), w.r.transpose(), -1.0, Par::Seq);
            for i in 0..n {
                w.b[(i, i)] += 1.0 / lambda;
            }
            jittered_llt(&mut w.b)
        })
    }

    /// Log-density of `v̂` under `N(0, Hᵀ(I/λ + ζ)H)`.
    pub fn gaussian_log_density(&self, params: &DiscrepancyKernelParams, lambda: f64) -> f64 {
        if !(lambda > 0.0 && lambda.is_finite()) || params.alpha.len() != self.inputs() {
            return f64::NEG_INFINITY;
        }
        let Ok(kernel) = PreparedZeta::new(params) else {
            return f64::NEG_INFINITY;
        };
        let Ok(llt) = self.factor(&kernel, lambda) else {
            return f64::NEG_INFINITY;
        };
        let l = llt.L();
        let log_det_b: f64 = (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum();
        let mut z = self.y_perp.clone();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, z.as_mut(), Par::Seq);
        let quad = z.col(0).iter().map(|v| v * v).sum::<f64>();
        let q = self.u.ncols() as f64;
        let dim = self.h.ncols() as f64;
        -0.5 * (dim * LN_2PI + log_det_b + q * lambda.ln() + quad)
    }

    /// Posterior mean of the discrepancy coordinates,
    /// `Hᵀζ H [Hᵀ(I/λ + ζ)H]⁻¹ v̂ = v̂ − [Hᵀ(I/λ + ζ)H]⁻¹ v̂ / λ`.
    pub fn posterior_mean(&self, params: &DiscrepancyKernelParams, lambda: f64) -> Result<DVector<f64>> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput("lambda* must be positive".into()));
        }
        if params.alpha.len() != self.inputs() {
            return Err(Error::InvalidInput("alpha length does not match the boundary inputs".into()));
        }
        let kernel = PreparedZeta::new(params)?;
        let solved = self.factor(&kernel, lambda)?.solve(&self.y_perp);
        let s = DVector::from_iterator(solved.nrows(), solved.col(0).iter().copied());
        Ok(&self.v_hat - self.h.transpose() * s / lambda)
    }
}

/// AIS problem over `[τ², α_0..α_S, λ*]`. Unit-interval parameters are
/// confined to `[UNIT_CLIP, 1 − UNIT_CLIP]` with their priors renormalized
/// on that interval.
pub struct DiscrepancyProblem {
    model: DiscrepancyModel,
    priors: ObservationPriors,
    gamma: Gamma<f64>,
}

fn ard_cdf(a: f64) -> f64 {
    1.0 - (1.0 - a).powf(ARD_BETA_B)
}

fn ard_truncation_log_mass() -> f64 {
    (ard_cdf(1.0 - UNIT_CLIP) - ard_cdf(UNIT_CLIP)).ln()
}

impl DiscrepancyProblem {
    pub fn new(model: DiscrepancyModel, priors: ObservationPriors) -> Result<Self> {
        let gamma = Gamma::new(priors.shape, 1.0 / priors.rate).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Self { model, priors, gamma })
    }

    pub fn model(&self) -> &DiscrepancyModel {
        &self.model
    }

    /// Splits a sample vector into kernel parameters and λ*.
    pub fn unpack(x: &[f64]) -> (DiscrepancyKernelParams, f64) {
        let n = x.len();
        (DiscrepancyKernelParams { tau2: x[0], alpha: x[1..n - 1].to_vec() }, x[n - 1])
    }
}

impl AnnealingProblem for DiscrepancyProblem {
    fn dim(&self) -> usize {
        self.model.inputs() + 2
    }

    fn support(&self, i: usize) -> Support {
        if i + 1 < self.dim() {
            Support::Interval(UNIT_CLIP, 1.0 - UNIT_CLIP)
        } else {
            Support::Positive
        }
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.push(UNIT_CLIP + (1.0 - 2.0 * UNIT_CLIP) * rng.random::<f64>());
        let (f_lo, f_hi) = (ard_cdf(UNIT_CLIP), ard_cdf(1.0 - UNIT_CLIP));
        for _ in 0..self.model.inputs() {
            let u = f_lo + (f_hi - f_lo) * rng.random::<f64>();
            let a = 1.0 - (1.0 - u).powf(1.0 / ARD_BETA_B);
            x.push(a.clamp(UNIT_CLIP, 1.0 - UNIT_CLIP));
        }
        x.push(self.gamma.sample(rng));
        x
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        let (params, lambda) = Self::unpack(x);
        let inside = |v: f64| (UNIT_CLIP..=1.0 - UNIT_CLIP).contains(&v);
        if !inside(params.tau2) || !params.alpha.iter().all(|a| inside(*a)) {
            return f64::NEG_INFINITY;
        }
        let trunc = ard_truncation_log_mass();
        -(1.0 - 2.0 * UNIT_CLIP).ln()
            + params.alpha.iter().map(|a| ard_log_density(*a) - trunc).sum::<f64>()
            + self.priors.discrepancy_precision().log_density(lambda, 1.0)
    }

    fn log_target(&self, x: &[f64]) -> f64 {
        let lp = self.log_prior(x);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let (params, lambda) = Self::unpack(x);
        self.model.gaussian_log_density(&params, lambda) + lp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_simulation_basis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn setup(n: usize, m: usize, s: usize, seed: u64) -> (BasisPair, DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, m, |i, j| (i as f64 * 0.3 + j as f64).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let basis = build_simulation_basis(&y, 0.9).unwrap().with_complement().unwrap();
        let x = DMatrix::from_fn(n, s, |_, _| rng.sample(StandardNormal));
        let obs = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let (_, v) = crate::basis::project_observation(&obs, &basis).unwrap();
        (basis, x, v)
    }

    fn priors() -> ObservationPriors {
        ObservationPriors { shape: 2.0, rate: 0.5 }
    }

    #[test]
    fn fast_density_matches_dense_oracle() {
        for (n, seed) in [(8, 1), (20, 2), (40, 3)] {
            let (basis, x, v) = setup(n, 6, 3, seed);
            let model = DiscrepancyModel::new(&basis, &x, &v).unwrap();
            let params = DiscrepancyKernelParams { tau2: 0.3, alpha: vec![0.7, 0.95, 0.2] };
            let lambda = 1.7;
            let dense = discrepancy_log_target(&params, lambda, &v, &x, basis.h().unwrap(), &priors())
                - priors().discrepancy_precision().log_density(lambda, 1.0)
                - params.alpha.iter().map(|a| ard_log_density(*a)).sum::<f64>();
            let fast = model.gaussian_log_density(&params, lambda);
            assert!((dense - fast).abs() < 1e-8 * dense.abs().max(1.0), "{n}: {dense} vs {fast}");
        }
    }

    #[test]
    fn unit_alphas_give_iid_density() {
        let (basis, x, v) = setup(16, 5, 2, 4);
        let h = basis.h().unwrap();
        let ones = DVector::from_element(16, 1.0);
        assert!((h.transpose() * ones).norm() < 1e-10);
        let model = DiscrepancyModel::new(&basis, &x, &v).unwrap();
        let lambda = 3.0;
        let params = DiscrepancyKernelParams { tau2: 0.4, alpha: vec![1.0, 1.0] };
        let iid: f64 = v.iter().map(|vi| 0.5 * (lambda / (2.0 * std::f64::consts::PI)).ln() - 0.5 * lambda * vi * vi).sum();
        assert!((model.gaussian_log_density(&params, lambda) - iid).abs() < 1e-8);
    }

    #[test]
    fn posterior_mean_matches_dense_formula() {
        let (basis, x, v) = setup(18, 5, 2, 5);
        let h = basis.h().unwrap();
        let model = DiscrepancyModel::new(&basis, &x, &v).unwrap();
        let params = DiscrepancyKernelParams { tau2: 0.2, alpha: vec![0.5, 0.9] };
        let lambda = 2.5;
        let z = PreparedZeta::new(&params).unwrap().gram_rows(&x);
        let hzh = h.transpose() * &z * h;
        let c = &hzh + DMatrix::identity(v.len(), v.len()) / lambda;
        let expected = &hzh * c.clone().lu().solve(&v).unwrap();
        let got = model.posterior_mean(&params, lambda).unwrap();
        assert!((expected - got).norm() < 1e-8);
    }

    #[test]
    fn truncated_ard_prior_integrates_to_one() {
        let (basis, x, v) = setup(10, 4, 1, 6);
        let p = DiscrepancyProblem::new(DiscrepancyModel::new(&basis, &x, &v).unwrap(), priors()).unwrap();
        // midpoint rule in the variable 1 − α = t^10, which flattens the pole at α = 1
        let steps = 200_000;
        let (lo, hi) = (UNIT_CLIP.powf(0.1), (1.0 - UNIT_CLIP).powf(0.1));
        let mut total = 0.0;
        for i in 0..steps {
            let t = lo + (hi - lo) * (i as f64 + 0.5) / steps as f64;
            let a = 1.0 - t.powi(10);
            let density = (ard_log_density(a) - ard_truncation_log_mass()).exp();
            total += density * 10.0 * t.powi(9) * (hi - lo) / steps as f64;
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = p.sample_prior(&mut rng);
            assert!(p.log_prior(&s).is_finite());
        }
    }

    #[test]
    fn observation_prior_confidence_range() {
        assert!(ObservationPriors::from_noise(0.1, 100, 0.01).is_err());
        assert!(ObservationPriors::from_noise(0.1, 100, 0.02).is_ok());
        assert!(ObservationPriors::from_noise(0.1, 100, 1.5).is_err());
        let p = ObservationPriors::from_noise(0.25, 100, 0.1).unwrap();
        assert!((p.shape / p.rate - 4.0).abs() < 1e-12);
    }
}
