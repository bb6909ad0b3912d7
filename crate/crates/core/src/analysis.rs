//! Discrepancy attribution to boundary conditions, Bayes factors and
//! prediction error.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisPair, ParamBounds};
use crate::emulator::EmulatorModel;
use crate::error::{Error, Result};
use crate::inference::hdi::{hdi, weighted_median};
use crate::inference::targets::{DiscrepancyModel, DiscrepancyProblem};
use crate::inference::PosteriorArchive;
use crate::linalg::population_variance;

pub const HDI_MASS: f64 = 0.95;

/// R² of one boundary input for every discrepancy draw, paired with the
/// draw's pooled weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Fraction of the discrepancy variance explained by input `input` alone:
/// every other α is set to 1 and the GP posterior mean of the discrepancy is
/// compared with `v̂`.
pub fn compute_r2(archive: &PosteriorArchive, model: &DiscrepancyModel, input: usize) -> Result<WeightedSamples> {
    if input >= model.inputs() {
        return Err(Error::InvalidInput(format!("input index {input} outside 0..{}", model.inputs())));
    }
    if archive.discrepancy_samples.ncols() != model.inputs() + 2 {
        return Err(Error::InvalidInput("archive does not match the boundary inputs".into()));
    }
    let denom = population_variance(model.v_hat().as_slice());
    if !(denom > 0.0) {
        return Err(Error::Numerical("no discrepancy variance; analysis undefined".into()));
    }
    let weights = archive.discrepancy_weights();
    let draw = |r: usize| -> Result<f64> {
        let row: Vec<f64> = archive.discrepancy_samples.row(r).iter().copied().collect();
        let (mut params, lambda) = DiscrepancyProblem::unpack(&row);
        for (s, a) in params.alpha.iter_mut().enumerate() {
            if s != input {
                *a = 1.0;
            }
        }
        let v = model.posterior_mean(&params, lambda)?;
        Ok(population_variance(v.as_slice()) / denom)
    };
    let rows = archive.discrepancy_samples.nrows();
    #[cfg(feature = "parallel")]
    let values: Vec<f64> = {
        use rayon::prelude::*;
        (0..rows).into_par_iter().map(draw).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let values: Vec<f64> = (0..rows).map(draw).collect::<Result<_>>()?;
    Ok(WeightedSamples { values, weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputAttribution {
    pub name: String,
    pub r2_estimate: f64,
    pub r2_hdi: (f64, f64),
    pub r2_tilde_estimate: f64,
    pub r2_tilde_hdi: (f64, f64),
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub per_input: Vec<InputAttribution>,
    /// Input indices by decreasing R̃² estimate.
    pub ranking: Vec<usize>,
}

impl DiscrepancyReport {
    pub fn significant_inputs(&self) -> Vec<&str> {
        self.per_input.iter().filter(|e| e.significant).map(|e| e.name.as_str()).collect()
    }
}

/// R̃²_s = R²_s − R²_0 per draw, with the fictitious input at index 0.
pub fn build_discrepancy_report(
    archive: &PosteriorArchive,
    model: &DiscrepancyModel,
    names: &[String],
) -> Result<DiscrepancyReport> {
    if names.len() != model.inputs() {
        return Err(Error::InvalidInput(format!("{} names for {} inputs", names.len(), model.inputs())));
    }
    let base = compute_r2(archive, model, 0)?;
    let mut per_input = Vec::with_capacity(names.len());
    for (s, name) in names.iter().enumerate() {
        let r2 = if s == 0 { base.clone() } else { compute_r2(archive, model, s)? };
        let tilde: Vec<f64> = r2.values.iter().zip(&base.values).map(|(a, b)| a - b).collect();
        let r2_tilde_hdi = hdi(&tilde, &r2.weights, HDI_MASS)?;
        per_input.push(InputAttribution {
            name: name.clone(),
            r2_estimate: weighted_median(&r2.values, &r2.weights)?,
            r2_hdi: hdi(&r2.values, &r2.weights, HDI_MASS)?,
            r2_tilde_estimate: weighted_median(&tilde, &r2.weights)?,
            r2_tilde_hdi,
            significant: r2_tilde_hdi.0 > 0.0 || r2_tilde_hdi.1 < 0.0,
        });
    }
    let mut ranking: Vec<usize> = (0..per_input.len()).collect();
    ranking.sort_by(|a, b| per_input[*b].r2_tilde_estimate.total_cmp(&per_input[*a].r2_tilde_estimate));
    Ok(DiscrepancyReport { per_input, ranking })
}

/// Interpretation scale for log10 Bayes factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceLabel {
    Negative,
    Weak,
    Substantial,
    Strong,
    Decisive,
}

impl EvidenceLabel {
    /// Edges belong to the stronger category.
    pub fn from_log10(b: f64) -> Self {
        if b < 0.0 {
            EvidenceLabel::Negative
        } else if b < 0.5 {
            EvidenceLabel::Weak
        } else if b < 1.0 {
            EvidenceLabel::Substantial
        } else if b < 2.0 {
            EvidenceLabel::Strong
        } else {
            EvidenceLabel::Decisive
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceLabel::Negative => "negative",
            EvidenceLabel::Weak => "weak",
            EvidenceLabel::Substantial => "substantial",
            EvidenceLabel::Strong => "strong",
            EvidenceLabel::Decisive => "decisive",
        }
    }
}

impl std::fmt::Display for EvidenceLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// log10 evidence of each AIS replicate of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReplicates {
    /// Number of simulation runs the model's emulator was built on.
    pub ensemble_size: usize,
    pub log10: Vec<f64>,
}

impl EvidenceReplicates {
    pub fn estimate(&self) -> f64 {
        on_grid(self.log10.iter().sum::<f64>() / self.log10.len() as f64)
    }

    pub fn hdi(&self) -> Result<(f64, f64)> {
        hdi(&self.log10, &vec![1.0; self.log10.len()], HDI_MASS)
    }
}

/// Rounds to a dyadic grid (2⁻³⁶) so that sums and differences of
/// estimates are exact.
fn on_grid(x: f64) -> f64 {
    const SCALE: f64 = (1u64 << 36) as f64;
    if x.abs() < 65536.0 {
        (x * SCALE).round() / SCALE
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    /// log10 B_{j,i}.
    pub estimate: f64,
    pub hdi: (f64, f64),
    pub label: EvidenceLabel,
}

/// log10 B_{j,i} from replicated evidence estimates. The interval comes from
/// every pairwise difference of replicates.
pub fn bayes_factor(evidence_j: &EvidenceReplicates, evidence_i: &EvidenceReplicates) -> Result<BayesFactor> {
    if evidence_j.log10.is_empty() || evidence_i.log10.is_empty() {
        return Err(Error::InvalidInput("replicate lists must be nonempty".into()));
    }
    if evidence_j.ensemble_size != evidence_i.ensemble_size {
        return Err(Error::Incompatible(format!(
            "compare models built upon simulation samples of the same size (M = {} vs M = {})",
            evidence_j.ensemble_size, evidence_i.ensemble_size
        )));
    }
    let estimate = evidence_j.estimate() - evidence_i.estimate();
    let diffs: Vec<f64> =
        evidence_j.log10.iter().flat_map(|a| evidence_i.log10.iter().map(move |b| a - b)).collect();
    let interval = hdi(&diffs, &vec![1.0; diffs.len()], HDI_MASS)?;
    Ok(BayesFactor { estimate, hdi: interval, label: EvidenceLabel::from_log10(estimate) })
}

pub fn rmse(predictions: &[f64], observations: &[f64]) -> Result<f64> {
    if predictions.len() != observations.len() {
        return Err(Error::InvalidInput(format!(
            "prediction length {} differs from observation length {}",
            predictions.len(),
            observations.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput("empty series".into()));
    }
    let ss: f64 = predictions.iter().zip(observations).map(|(p, o)| (p - o).powi(2)).sum();
    Ok((ss / predictions.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub evidence: EvidenceReplicates,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub log10_evidence: f64,
    pub log10_evidence_hdi: (f64, f64),
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub models: Vec<ModelSummary>,
    /// `bayes_factors[j][i]` is log10 B_{j,i}.
    pub bayes_factors: Vec<Vec<BayesFactor>>,
}

impl ModelComparison {
    pub fn log10_matrix(&self) -> Vec<Vec<f64>> {
        self.bayes_factors.iter().map(|r| r.iter().map(|b| b.estimate).collect()).collect()
    }
}

pub fn compare_models(entries: &[ModelEntry]) -> Result<ModelComparison> {
    if entries.len() < 2 {
        return Err(Error::InvalidInput("at least two models are needed for a comparison".into()));
    }
    let models = entries
        .iter()
        .map(|e| {
            Ok(ModelSummary {
                name: e.name.clone(),
                log10_evidence: e.evidence.estimate(),
                log10_evidence_hdi: e.evidence.hdi()?,
                rmse: e.rmse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bayes_factors = entries
        .iter()
        .map(|j| entries.iter().map(|i| bayes_factor(&j.evidence, &i.evidence)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelComparison { models, bayes_factors })
}

/// Posterior estimate and interval of one calibration parameter, in
/// original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub unit: String,
    pub estimate: f64,
    pub hdi: (f64, f64),
}

/// Weighted medians and HDIs of the `z*` columns of the calibration samples.
pub fn parameter_summaries(archive: &PosteriorArchive, bounds: &[ParamBounds]) -> Result<Vec<ParameterSummary>> {
    if archive.calibration_samples.ncols() < bounds.len() {
        return Err(Error::InvalidInput("archive has fewer columns than parameters".into()));
    }
    let w = archive.calibration_weights();
    bounds
        .iter()
        .enumerate()
        .map(|(p, b)| {
            let vals: Vec<f64> = archive.calibration_samples.column(p).iter().map(|u| b.from_unit(*u)).collect();
            Ok(ParameterSummary {
                name: b.name.clone(),
                unit: b.unit.clone(),
                estimate: weighted_median(&vals, &w)?,
                hdi: hdi(&vals, &w, HDI_MASS)?,
            })
        })
        .collect()
}

/// Posterior mean of the calibrated simulator output `K w′(z*)`.
pub fn posterior_prediction(archive: &PosteriorArchive, emulator: &EmulatorModel, basis: &BasisPair) -> Result<DVector<f64>> {
    let p = emulator.p();
    let w = archive.calibration_weights();
    let mut mean_w = DVector::zeros(emulator.q());
    for (r, weight) in w.iter().enumerate() {
        if *weight == 0.0 {
            continue;
        }
        let z: Vec<f64> = archive.calibration_samples.row(r).iter().take(p).copied().collect();
        for (q, emu) in emulator.per_weight().iter().enumerate() {
            mean_w[q] += weight * emu.predict(&z, f64::INFINITY).0;
        }
    }
    Ok(basis.k() * mean_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reps(m: usize, v: &[f64]) -> EvidenceReplicates {
        EvidenceReplicates { ensemble_size: m, log10: v.to_vec() }
    }

    #[test]
    fn labels_follow_the_scale() {
        assert_eq!(EvidenceLabel::from_log10(-0.1), EvidenceLabel::Negative);
        assert_eq!(EvidenceLabel::from_log10(0.0), EvidenceLabel::Weak);
        assert_eq!(EvidenceLabel::from_log10(0.5), EvidenceLabel::Substantial);
        assert_eq!(EvidenceLabel::from_log10(1.0), EvidenceLabel::Strong);
        assert_eq!(EvidenceLabel::from_log10(1.5), EvidenceLabel::Strong);
        assert_eq!(EvidenceLabel::from_log10(2.0), EvidenceLabel::Decisive);
    }

    #[test]
    fn published_bayes_factor() {
        let b = bayes_factor(&reps(30, &[812.17]), &reps(30, &[-52.79])).unwrap();
        assert!((b.estimate - 864.96).abs() < 1e-9);
        assert_eq!(b.label, EvidenceLabel::Decisive);
    }

    #[test]
    fn self_comparison_is_weak() {
        let r = reps(30, &[1.0, 2.0, 3.5]);
        let b = bayes_factor(&r, &r).unwrap();
        assert_eq!(b.estimate, 0.0);
        assert_eq!(b.label, EvidenceLabel::Weak);
    }

    #[test]
    fn ensemble_size_mismatch_is_refused() {
        let err = bayes_factor(&reps(30, &[1.0]), &reps(20, &[0.0])).unwrap_err();
        assert!(err.to_string().contains("simulation samples of the same size"));
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[0.0], &[1.0, 2.0]).is_err());
    }
}
