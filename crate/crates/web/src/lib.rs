//! WebAssembly bindings for the static demo page in `www/`.

use std::f64::consts::PI;

use adequacy::inference::ais::{ais_run, FnProblem, Support};
use adequacy::kernel::{zeta, DiscrepancyKernelParams};
use adequacy::thermalbox::{simulate, BoundarySeries, BoxVariant, BoxVariantSpec, DEFAULT_PULSE_POWER};
use adequacy::AnnealingSchedule;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;

const STEP_MINUTES: u32 = 15;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn variant(name: &str) -> Result<BoxVariant, JsError> {
    name.parse().map_err(js_err)
}

/// Parameter names of a variant, with units, e.g. `ins_k [W/mK]`.
#[wasm_bindgen]
pub fn parameter_labels(name: &str) -> Result<Vec<String>, JsError> {
    Ok(variant(name)?.parameters().iter().map(|p| format!("{} [{}]", p.name, p.unit)).collect())
}

/// Generating values of a variant mapped onto [0, 1].
#[wasm_bindgen]
pub fn default_unit_values(name: &str) -> Result<Vec<f64>, JsError> {
    let v = variant(name)?;
    Ok(v.parameters().iter().zip(v.truth()).map(|(b, t)| b.to_unit(t)).collect())
}

/// Outdoor temperature followed by indoor air temperature, `steps` values
/// each, for parameters given on the unit scale.
#[wasm_bindgen]
pub fn box_temperatures(name: &str, unit: Vec<f64>, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let spec = BoxVariantSpec::from_unit(variant(name)?, &unit, STEP_MINUTES).map_err(js_err)?;
    let boundary = BoundarySeries::synthetic(steps, STEP_MINUTES, seed, DEFAULT_PULSE_POWER).map_err(js_err)?;
    let inside = simulate(&spec, &boundary, boundary.external_temp[0]).map_err(js_err)?;
    let mut out = boundary.external_temp.clone();
    out.extend(inside);
    Ok(out)
}

/// Discrepancy correlation between inputs a distance d apart along one
/// standardized input, for d from 0 to `max_distance`.
#[wasm_bindgen]
pub fn correlation_profile(alpha: f64, max_distance: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let p = DiscrepancyKernelParams { tau2: 0.5, alpha: vec![alpha] };
    let at_zero = zeta(&[0.0], &[0.0], &p).map_err(js_err)?;
    (0..points)
        .map(|i| {
            let d = max_distance * i as f64 / (points.max(2) - 1) as f64;
            zeta(&[0.0], &[d], &p).map(|v| v / at_zero).map_err(js_err)
        })
        .collect()
}

/// Annealed estimate of log ∫ N(x; 0, s²) N(y; x, 1) dx next to its closed
/// form. Returns `[estimate, standard error, exact]`.
#[wasm_bindgen]
pub fn gaussian_evidence(prior_sd: f64, y: f64, temperatures: usize, chains: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    if !(prior_sd > 0.0) {
        return Err(JsError::new("prior standard deviation must be positive"));
    }
    let ln_norm = |x: f64, sd: f64| -0.5 * (2.0 * PI).ln() - sd.ln() - 0.5 * (x / sd).powi(2);
    let problem = FnProblem {
        supports: vec![Support::Real],
        sampler: move |rng: &mut dyn RngCore| vec![prior_sd * rng.sample::<f64, _>(StandardNormal)],
        prior: move |x: &[f64]| ln_norm(x[0], prior_sd),
        target: move |x: &[f64]| ln_norm(x[0], prior_sd) + ln_norm(y - x[0], 1.0),
    };
    let schedule = AnnealingSchedule::geometric_linear(temperatures, chains, 3, 0.2, seed).map_err(js_err)?;
    let run = ais_run(&problem, &schedule).map_err(js_err)?;
    let exact = ln_norm(y, (1.0 + prior_sd * prior_sd).sqrt());
    Ok(vec![run.log_evidence, run.log_evidence_se, exact])
}
