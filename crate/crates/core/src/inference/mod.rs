//! Annealed importance sampling, interval summaries and the two posterior
//! targets of a calibration.

pub mod ais;
pub mod hdi;
pub mod targets;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use ais::{ais_run, AisRun, AnnealingProblem, AnnealingSchedule, FnProblem, Support, SweepMode};
pub use hdi::{hdi, hdi_unweighted, weighted_mean, weighted_median};
pub use targets::{
    calibration_log_target, discrepancy_log_target, CalibrationProblem, DiscrepancyModel, DiscrepancyProblem,
    ObservationPriors,
};

use crate::error::{Error, Result};

/// Runs `replicates` independent AIS passes whose seeds are derived from
/// `master_seed`.
pub fn run_replicates<P: AnnealingProblem + ?Sized>(
    problem: &P,
    schedule: &AnnealingSchedule,
    replicates: usize,
    master_seed: u64,
) -> Result<Vec<AisRun>> {
    if replicates == 0 {
        return Err(Error::InvalidInput("at least one AIS replicate is required".into()));
    }
    (0..replicates)
        .map(|r| ais_run(problem, &schedule.clone().with_seed(crate::derive_seed(master_seed, r as u64))))
        .collect()
}

/// Pooled output of the replicated calibration and discrepancy runs.
///
/// Samples of all replicates are stacked; each replicate's weights are
/// self-normalized and divided by the replicate count before pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorArchive {
    pub calibration_samples: DMatrix<f64>,
    pub discrepancy_samples: DMatrix<f64>,
    pub calibration_log_weights: Vec<f64>,
    pub discrepancy_log_weights: Vec<f64>,
    /// Natural-log evidence of each calibration replicate.
    pub calibration_replicates: Vec<f64>,
    pub discrepancy_replicates: Vec<f64>,
    /// Chains per calibration replicate.
    pub calibration_chains: usize,
    pub discrepancy_chains: usize,
}

fn stack(runs: &[AisRun]) -> (DMatrix<f64>, Vec<f64>) {
    let dim = runs[0].samples.ncols();
    let rows: usize = runs.iter().map(|r| r.samples.nrows()).sum();
    let mut m = DMatrix::zeros(rows, dim);
    let mut w = Vec::with_capacity(rows);
    let mut at = 0;
    for run in runs {
        m.rows_mut(at, run.samples.nrows()).copy_from(&run.samples);
        at += run.samples.nrows();
        w.extend_from_slice(&run.log_weights);
    }
    (m, w)
}

fn pooled(log_w: &[f64], chains: usize) -> Vec<f64> {
    let r = (log_w.len() / chains) as f64;
    log_w.chunks(chains).flat_map(ais::normalize_log_weights).map(|w| w / r).collect()
}

impl PosteriorArchive {
    pub fn from_runs(calibration: &[AisRun], discrepancy: &[AisRun]) -> Result<Self> {
        if calibration.is_empty() || calibration.len() != discrepancy.len() {
            return Err(Error::InvalidInput("calibration and discrepancy replicate counts differ".into()));
        }
        let calibration_chains = calibration[0].samples.nrows();
        let discrepancy_chains = discrepancy[0].samples.nrows();
        if calibration.iter().any(|r| r.samples.nrows() != calibration_chains)
            || discrepancy.iter().any(|r| r.samples.nrows() != discrepancy_chains)
        {
            return Err(Error::InvalidInput("replicates differ in chain count".into()));
        }
        let (calibration_samples, calibration_log_weights) = stack(calibration);
        let (discrepancy_samples, discrepancy_log_weights) = stack(discrepancy);
        let archive = Self {
            calibration_samples,
            discrepancy_samples,
            calibration_log_weights,
            discrepancy_log_weights,
            calibration_replicates: calibration.iter().map(|r| r.log_evidence).collect(),
            discrepancy_replicates: discrepancy.iter().map(|r| r.log_evidence).collect(),
            calibration_chains,
            discrepancy_chains,
        };
        archive.validate()?;
        Ok(archive)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.calibration_replicates.len();
        let (cc, dc) = (self.calibration_chains, self.discrepancy_chains);
        if r == 0
            || cc == 0
            || dc == 0
            || self.discrepancy_replicates.len() != r
            || self.calibration_log_weights.len() != r * cc
            || self.discrepancy_log_weights.len() != r * dc
            || self.calibration_samples.nrows() != r * cc
            || self.discrepancy_samples.nrows() != r * dc
        {
            return Err(Error::InvalidInput("posterior archive shapes are inconsistent".into()));
        }
        for (what, lw, c) in
            [("calibration", &self.calibration_log_weights, cc), ("discrepancy", &self.discrepancy_log_weights, dc)]
        {
            let w = pooled(lw, c);
            if w.iter().any(|v| !v.is_finite()) || w.iter().all(|v| *v == 0.0) {
                return Err(Error::Numerical(format!("{what} weights are degenerate")));
            }
        }
        if self.calibration_replicates.iter().chain(&self.discrepancy_replicates).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("replicate log-evidence"));
        }
        Ok(())
    }

    pub fn replicates(&self) -> usize {
        self.calibration_replicates.len()
    }

    pub fn log_evidence_calibration(&self) -> f64 {
        mean(&self.calibration_replicates)
    }

    pub fn log_evidence_discrepancy(&self) -> f64 {
        mean(&self.discrepancy_replicates)
    }

    /// Total natural-log evidence, the sum of both factors.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence_calibration() + self.log_evidence_discrepancy()
    }

    /// Per-replicate total evidence in log10.
    pub fn log10_replicates(&self) -> Vec<f64> {
        self.calibration_replicates
            .iter()
            .zip(&self.discrepancy_replicates)
            .map(|(c, d)| (c + d) / std::f64::consts::LN_10)
            .collect()
    }

    pub fn calibration_weights(&self) -> Vec<f64> {
        pooled(&self.calibration_log_weights, self.calibration_chains)
    }

    pub fn discrepancy_weights(&self) -> Vec<f64> {
        pooled(&self.discrepancy_log_weights, self.discrepancy_chains)
    }

    /// Kish effective sample size of the pooled weights.
    pub fn effective_sample_size(weights: &[f64]) -> f64 {
        let s: f64 = weights.iter().sum();
        s * s / weights.iter().map(|w| w * w).sum::<f64>()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
