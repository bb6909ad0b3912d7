//! Annealed importance sampling with adaptive random-walk Metropolis
//! transitions on transformed coordinates.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support of one sampled coordinate; proposals move on `logit`/`log`
/// transforms so they never leave it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Real,
    Positive,
    Interval(f64, f64),
}

impl Support {
    fn to_free(self, x: f64) -> f64 {
        match self {
            Support::Real => x,
            Support::Positive => x.ln(),
            Support::Interval(lo, hi) => {
                let p = (x - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            }
        }
    }

    /// Returns the constrained value and `log |dx/du|`.
    fn from_free(self, u: f64) -> (f64, f64) {
        match self {
            Support::Real => (u, 0.0),
            Support::Positive => (u.exp(), u),
            Support::Interval(lo, hi) => {
                // log σ(u) and log(1 − σ(u)) computed stably.
                let log_s = -softplus(-u);
                let log_1ms = -softplus(u);
                let s = log_s.exp();
                let x = (lo + (hi - lo) * s).clamp(lo, hi);
                (x, (hi - lo).ln() + log_s + log_1ms)
            }
        }
    }

    pub fn contains(self, x: f64) -> bool {
        match self {
            Support::Real => x.is_finite(),
            Support::Positive => x > 0.0 && x.is_finite(),
            Support::Interval(lo, hi) => x >= lo && x <= hi,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// How a Metropolis sweep visits the coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// One proposal per coordinate per sweep.
    #[default]
    ComponentWise,
    /// One joint proposal per sweep.
    Joint,
}

/// Target acceptance rate of the per-temperature scale adaptation.
pub const TARGET_ACCEPTANCE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    temperatures: Vec<f64>,
    pub chains: usize,
    pub steps_per_temperature: usize,
    pub proposal_scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub sweep: SweepMode,
}

impl AnnealingSchedule {
    pub fn new(
        temperatures: Vec<f64>,
        chains: usize,
        steps_per_temperature: usize,
        proposal_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let s = Self { temperatures, chains, steps_per_temperature, proposal_scale, seed, sweep: SweepMode::default() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.temperatures;
        if t.len() < 2 || t[0] != 0.0 || *t.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput("temperatures must run from 0 to 1".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("temperatures must be strictly increasing".into()));
        }
        if self.chains == 0 || self.steps_per_temperature == 0 {
            return Err(Error::InvalidInput("chains and steps per temperature must be positive".into()));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::InvalidInput("proposal scale must be positive".into()));
        }
        Ok(())
    }

    /// `count` temperatures: zero, a geometric run from 1e-4 to 0.1 over the
    /// first half, then a linear run to one.
    pub fn geometric_linear(count: usize, chains: usize, steps: usize, proposal_scale: f64, seed: u64) -> Result<Self> {
        Self::new(geometric_linear_ladder(count)?, chains, steps, proposal_scale, seed)
    }

    pub fn with_sweep(mut self, sweep: SweepMode) -> Self {
        self.sweep = sweep;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }
}

impl Default for AnnealingSchedule {
    /// 200 temperatures, 64 chains, 3 sweeps each, scale 0.2.
    fn default() -> Self {
        Self::geometric_linear(200, 64, 3, 0.2, 0).expect("valid default schedule")
    }
}

pub fn geometric_linear_ladder(count: usize) -> Result<Vec<f64>> {
    if count < 3 {
        return Err(Error::InvalidInput("a ladder needs at least three temperatures".into()));
    }
    let (start, knee) = (1e-4_f64, 0.1_f64);
    let interior = count - 1;
    let geo = (interior / 2).max(1);
    let lin = interior - geo;
    let mut t = Vec::with_capacity(count);
    t.push(0.0);
    for i in 0..geo {
        let f = if geo == 1 { 0.0 } else { i as f64 / (geo - 1) as f64 };
        t.push(start * (knee / start).powf(f));
    }
    for i in 1..=lin {
        t.push(knee + (1.0 - knee) * i as f64 / lin as f64);
    }
    *t.last_mut().unwrap() = 1.0;
    Ok(t)
}

/// A target for AIS: prior sampler, normalized prior log-density, and the
/// unnormalized posterior `log(prior × likelihood)`.
pub trait AnnealingProblem: Sync {
    fn dim(&self) -> usize;
    fn support(&self, i: usize) -> Support;
    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn log_prior(&self, x: &[f64]) -> f64;
    fn log_target(&self, x: &[f64]) -> f64;
}

/// Closure-backed [`AnnealingProblem`].
pub struct FnProblem<S, P, T> {
    pub supports: Vec<Support>,
    pub sampler: S,
    pub prior: P,
    pub target: T,
}

impl<S, P, T> AnnealingProblem for FnProblem<S, P, T>
where
    S: Fn(&mut dyn RngCore) -> Vec<f64> + Sync,
    P: Fn(&[f64]) -> f64 + Sync,
    T: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.supports.len()
    }
    fn support(&self, i: usize) -> Support {
        self.supports[i]
    }
    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (self.sampler)(rng)
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        (self.prior)(x)
    }
    fn log_target(&self, x: &[f64]) -> f64 {
        (self.target)(x)
    }
}

/// Final chain states, their log importance weights and the evidence
/// estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisRun {
    /// chains × dim.
    pub samples: DMatrix<f64>,
    pub log_weights: Vec<f64>,
    pub log_evidence: f64,
    /// Delta-method standard error of `log_evidence`.
    pub log_evidence_se: f64,
    pub effective_sample_size: f64,
    /// Mean acceptance rate per annealing step (excluding temperature zero).
    pub acceptance: Vec<f64>,
}

impl AisRun {
    /// Self-normalized importance weights.
    pub fn normalized_weights(&self) -> Vec<f64> {
        normalize_log_weights(&self.log_weights)
    }
}

pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; log_w.len()];
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// `log(mean(exp(log_w)))` with its delta-method standard error and the
/// effective sample size of the weights.
pub fn log_mean_exp(log_w: &[f64]) -> (f64, f64, f64) {
    let n = log_w.len() as f64;
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (f64::NEG_INFINITY, f64::INFINITY, 0.0);
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = if n > 1.0 { w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let se = var.sqrt() / (n.sqrt() * mean);
    let ess = w.iter().sum::<f64>().powi(2) / w.iter().map(|v| v * v).sum::<f64>();
    (max + mean.ln(), se, ess)
}

struct Chain {
    rng: ChaCha8Rng,
    free: Vec<f64>,
    x: Vec<f64>,
    log_jac: Vec<f64>,
    log_prior: f64,
    log_lik: f64,
    log_weight: f64,
    accepted: Vec<u64>,
    proposed: Vec<u64>,
}

impl Chain {
    fn tempered(&self, t: f64) -> f64 {
        tempered(self.log_prior, self.log_lik, t) + self.log_jac.iter().sum::<f64>()
    }
}

fn tempered(log_prior: f64, log_lik: f64, t: f64) -> f64 {
    if t == 0.0 {
        log_prior
    } else {
        log_prior + t * log_lik
    }
}

fn evaluate<P: AnnealingProblem + ?Sized>(problem: &P, x: &[f64]) -> (f64, f64) {
    let lp = problem.log_prior(x);
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return (f64::NEG_INFINITY, f64::NEG_INFINITY);
    }
    let lt = problem.log_target(x);
    let ll = if lt.is_nan() { f64::NEG_INFINITY } else { lt - lp };
    (lp, ll)
}

fn metropolis_sweep<P: AnnealingProblem + ?Sized>(problem: &P, chain: &mut Chain, t: f64, scales: &[f64], mode: SweepMode) {
    let dim = problem.dim();
    let current = chain.tempered(t);
    match mode {
        SweepMode::ComponentWise => {
            let mut current = current;
            for d in 0..dim {
                let step: f64 = chain.rng.sample(StandardNormal);
                let u = chain.free[d] + scales[d] * step;
                let support = problem.support(d);
                let (xd, jac) = support.from_free(u);
                let old = (chain.free[d], chain.x[d], chain.log_jac[d]);
                chain.x[d] = xd;
                let (lp, ll) = evaluate(problem, &chain.x);
                let jac_total = chain.log_jac.iter().sum::<f64>() - old.2 + jac;
                let proposed = tempered(lp, ll, t) + jac_total;
                chain.proposed[d] += 1;
                let accept = proposed.is_finite() && {
                    let log_u: f64 = chain.rng.random::<f64>().ln();
                    log_u < proposed - current
                };
                if accept {
                    chain.free[d] = u;
                    chain.log_jac[d] = jac;
                    chain.log_prior = lp;
                    chain.log_lik = ll;
                    chain.accepted[d] += 1;
                    current = proposed;
                } else {
                    chain.x[d] = old.1;
                }
            }
        }
        SweepMode::Joint => {
            let mut free = chain.free.clone();
            let mut x = chain.x.clone();
            let mut jac = chain.log_jac.clone();
            for d in 0..dim {
                let step: f64 = chain.rng.sample(StandardNormal);
                free[d] += scales[d] * step;
                let (xd, jd) = problem.support(d).from_free(free[d]);
                x[d] = xd;
                jac[d] = jd;
            }
            let (lp, ll) = evaluate(problem, &x);
            let proposed = tempered(lp, ll, t) + jac.iter().sum::<f64>();
            chain.proposed.iter_mut().for_each(|c| *c += 1);
            let accept = proposed.is_finite() && {
                let log_u: f64 = chain.rng.random::<f64>().ln();
                log_u < proposed - current
            };
            if accept {
                chain.free = free;
                chain.x = x;
                chain.log_jac = jac;
                chain.log_prior = lp;
                chain.log_lik = ll;
                chain.accepted.iter_mut().for_each(|c| *c += 1);
            }
        }
    }
}

fn for_each_chain<F>(chains: &mut [Chain], f: F)
where
    F: Fn(&mut Chain) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        chains.par_iter_mut().for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    chains.iter_mut().for_each(f);
}

/// Runs AIS from the prior (temperature 0) to the posterior (temperature 1).
///
/// Each chain draws from the prior, then at every temperature `t_k` adds
/// `(t_k − t_{k−1}) · log L` to its log-weight and applies
/// `steps_per_temperature` Metropolis sweeps targeting `prior × L^{t_k}`.
/// Proposal scales adapt between temperatures toward
/// [`TARGET_ACCEPTANCE`], pooled over chains.
pub fn ais_run<P: AnnealingProblem + ?Sized>(problem: &P, schedule: &AnnealingSchedule) -> Result<AisRun> {
    schedule.validate()?;
    let dim = problem.dim();
    let temps = schedule.temperatures();

    let mut chains: Vec<Chain> = (0..schedule.chains)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
            rng.set_stream(c as u64);
            let x = problem.sample_prior(&mut rng);
            assert_eq!(x.len(), dim, "prior sampler returned wrong dimension");
            let mut free = Vec::with_capacity(dim);
            let mut log_jac = Vec::with_capacity(dim);
            let mut xs = Vec::with_capacity(dim);
            for (d, &xd) in x.iter().enumerate() {
                let s = problem.support(d);
                let u = s.to_free(xd);
                let (back, j) = s.from_free(u);
                free.push(u);
                xs.push(back);
                log_jac.push(j);
            }
            let (log_prior, log_lik) = evaluate(problem, &xs);
            Chain {
                rng,
                free,
                x: xs,
                log_jac,
                log_prior,
                log_lik,
                log_weight: 0.0,
                accepted: vec![0; dim],
                proposed: vec![0; dim],
            }
        })
        .collect();

    let mut scales = vec![schedule.proposal_scale; dim];
    let mut acceptance = Vec::with_capacity(temps.len().saturating_sub(1));
    let mode = schedule.sweep;
    let steps = schedule.steps_per_temperature;

    for k in 1..temps.len() {
        let (t_prev, t) = (temps[k - 1], temps[k]);
        let sc = scales.clone();
        for_each_chain(&mut chains, |chain| {
            let inc = (t - t_prev) * chain.log_lik;
            chain.log_weight = if chain.log_lik == f64::NEG_INFINITY { f64::NEG_INFINITY } else { chain.log_weight + inc };
            chain.accepted.iter_mut().for_each(|a| *a = 0);
            chain.proposed.iter_mut().for_each(|a| *a = 0);
            if chain.log_weight == f64::NEG_INFINITY {
                return;
            }
            for _ in 0..steps {
                metropolis_sweep(problem, chain, t, &sc, mode);
            }
        });
        let mut total_acc = 0u64;
        let mut total_prop = 0u64;
        for d in 0..dim {
            let acc: u64 = chains.iter().map(|c| c.accepted[d]).sum();
            let prop: u64 = chains.iter().map(|c| c.proposed[d]).sum();
            total_acc += acc;
            total_prop += prop;
            if prop > 0 {
                let rate = acc as f64 / prop as f64;
                scales[d] = (scales[d] * (2.0 * (rate - TARGET_ACCEPTANCE)).exp()).clamp(1e-4, 20.0);
            }
        }
        acceptance.push(if total_prop > 0 { total_acc as f64 / total_prop as f64 } else { 0.0 });
    }

    let log_weights: Vec<f64> = chains.iter().map(|c| c.log_weight).collect();
    if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
        return Err(Error::Incompatible(
            "every AIS chain ended with zero weight; the target is incompatible with the prior support".into(),
        ));
    }
    let (log_evidence, log_evidence_se, effective_sample_size) = log_mean_exp(&log_weights);
    let samples = DMatrix::from_fn(chains.len(), dim, |c, d| chains[c].x[d]);
    Ok(AisRun { samples, log_weights, log_evidence, log_evidence_se, effective_sample_size, acceptance })
}
