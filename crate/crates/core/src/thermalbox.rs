//! Lumped RC model of a small insulated test box, used as the simulator in
//! synthetic calibration experiments.
//!
//! The box is a 0.96 m cube with one glazed face. Nodes are the internal air
//! plus one (single layer) or two (three-layer construction) wall nodes.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::ParamBounds;
use crate::error::{Error, Result};
use crate::linalg::population_variance;

const SIDE: f64 = 0.96;
const WINDOW_AREA: f64 = 0.36;
const GLAZING_AREA: f64 = 0.52 * 0.52;
const WINDOW_U: f64 = 2.8;
const SOLAR_TRANSMITTANCE: f64 = 0.6;
const H_INSIDE: f64 = 3.5;
const H_OUTSIDE: f64 = 20.0;
const AIR_CAPACITY: f64 = 5.0e3;
const SINGLE_THICKNESS: f64 = 0.12;
const EXT_THICKNESS: f64 = 0.03;
const INS_THICKNESS: f64 = 0.06;
/// Volumetric heat capacity of air, J/m³K.
const AIR_RHO_CP: f64 = 1206.0;
const DISCHARGE_COEFFICIENT: f64 = 0.65;
/// Azimuth (degrees) the cracked window faces.
const WINDOW_AZIMUTH: f64 = 180.0;
/// Largest stable explicit step as a fraction of the fastest node time constant.
const STABILITY_FRACTION: f64 = 0.5;
const MAX_STEP_CHANGE: f64 = 50.0;

pub const DEFAULT_STEP_MINUTES: u32 = 15;
pub const DEFAULT_PULSE_POWER: f64 = 80.0;
pub const BOUNDARY_NAMES: [&str; 5] = ["Te", "Gv", "Ws", "Wd", "RHP"];

fn internal_area() -> f64 {
    6.0 * SIDE * SIDE
}

fn opaque_area() -> f64 {
    internal_area() - WINDOW_AREA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxVariant {
    SingleLayer,
    MultiLayer,
    MultiLayerInfiltration,
}

impl BoxVariant {
    pub const ALL: [BoxVariant; 3] = [BoxVariant::SingleLayer, BoxVariant::MultiLayer, BoxVariant::MultiLayerInfiltration];

    pub fn name(self) -> &'static str {
        match self {
            BoxVariant::SingleLayer => "single_layer",
            BoxVariant::MultiLayer => "multi_layer",
            BoxVariant::MultiLayerInfiltration => "multi_layer_infiltration",
        }
    }

    /// Calibration parameters of this variant with their uniform prior bounds.
    pub fn parameters(self) -> Vec<ParamBounds> {
        let b = |n: &str, u: &str, lo: f64, hi: f64| ParamBounds { name: n.into(), unit: u.into(), lo, hi };
        let rc = b("rc", "-", 0.53, 0.98);
        match self {
            BoxVariant::SingleLayer => vec![b("wall_k", "W/mK", 0.07, 0.13), b("wall_c", "kJ/m3K", 1680.0, 3120.0), rc],
            BoxVariant::MultiLayer | BoxVariant::MultiLayerInfiltration => {
                let mut v = Vec::new();
                if self == BoxVariant::MultiLayerInfiltration {
                    v.push(b("crack_a", "mm2", 10.0, 1300.0));
                }
                v.extend([
                    b("ext_k", "W/mK", 0.7, 1.3),
                    b("ext_c", "kJ/m3K", 2240.0, 4160.0),
                    b("ins_k", "W/mK", 0.035, 0.065),
                    b("ins_c", "kJ/m3K", 112.0, 208.0),
                    rc,
                ]);
                v
            }
        }
    }

    /// Generating values used for synthetic observations; the single-layer
    /// variant has none and falls back to its bound midpoints.
    pub fn truth(self) -> Vec<f64> {
        match self {
            BoxVariant::SingleLayer => self.parameters().iter().map(|p| 0.5 * (p.lo + p.hi)).collect(),
            BoxVariant::MultiLayer => vec![1.05, 3361.0, 0.048, 179.0, 0.79],
            BoxVariant::MultiLayerInfiltration => vec![790.0, 1.05, 3361.0, 0.048, 179.0, 0.79],
        }
    }
}

impl std::str::FromStr for BoxVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BoxVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown box variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxVariantSpec {
    pub variant: BoxVariant,
    /// Values in original units, ordered as [`BoxVariant::parameters`].
    pub values: Vec<f64>,
    pub step_minutes: u32,
}

impl BoxVariantSpec {
    pub fn new(variant: BoxVariant, values: Vec<f64>, step_minutes: u32) -> Result<Self> {
        let params = variant.parameters();
        if values.len() != params.len() {
            return Err(Error::InvalidInput(format!("{} expects {} parameters, got {}", variant.name(), params.len(), values.len())));
        }
        for (p, v) in params.iter().zip(&values) {
            if !(v.is_finite() && *v >= p.lo && *v <= p.hi) {
                return Err(Error::InvalidInput(format!("{} = {v} outside [{}, {}]", p.name, p.lo, p.hi)));
            }
        }
        if step_minutes == 0 {
            return Err(Error::InvalidInput("step must be at least one minute".into()));
        }
        Ok(Self { variant, values, step_minutes })
    }

    pub fn truth(variant: BoxVariant) -> Self {
        Self { variant, values: variant.truth(), step_minutes: DEFAULT_STEP_MINUTES }
    }

    pub fn from_unit(variant: BoxVariant, unit: &[f64], step_minutes: u32) -> Result<Self> {
        let params = variant.parameters();
        if unit.len() != params.len() {
            return Err(Error::InvalidInput("unit point has the wrong dimension".into()));
        }
        let values = params.iter().zip(unit).map(|(p, u)| p.from_unit(u.clamp(0.0, 1.0))).collect();
        Self::new(variant, values, step_minutes)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.variant.parameters().iter().position(|p| p.name == name).map(|i| self.values[i])
    }

    fn req(&self, name: &str) -> f64 {
        self.get(name).expect("parameter present by construction")
    }

    /// Builds the RC network for this specification.
    pub fn network(&self) -> RcNetwork {
        let a = opaque_area();
        let rc = self.req("rc");
        let mut net = RcNetwork {
            capacities: vec![AIR_CAPACITY],
            links: Vec::new(),
            ambient: vec![(0, WINDOW_U * WINDOW_AREA)],
            infiltration: 0.0,
            radiative_fraction: rc,
            radiant_node: 1,
        };
        match self.variant {
            BoxVariant::SingleLayer => {
                let (k, c) = (self.req("wall_k"), self.req("wall_c"));
                let half = SINGLE_THICKNESS / 2.0;
                net.capacities.push(c * 1e3 * a * SINGLE_THICKNESS);
                net.links.push((0, 1, a / (1.0 / H_INSIDE + half / k)));
                net.ambient.push((1, a / (1.0 / H_OUTSIDE + half / k)));
            }
            BoxVariant::MultiLayer | BoxVariant::MultiLayerInfiltration => {
                let (ek, ec) = (self.req("ext_k"), self.req("ext_c"));
                let (ik, ic) = (self.req("ins_k"), self.req("ins_c"));
                let half_ext = EXT_THICKNESS / 2.0;
                let layer_c = (ec * EXT_THICKNESS + ic * INS_THICKNESS / 2.0) * 1e3 * a;
                // node 1: inner layer, node 2: outer layer
                net.capacities.extend([layer_c, layer_c]);
                net.links.push((0, 1, a / (1.0 / H_INSIDE + half_ext / ek)));
                net.links.push((1, 2, a / (2.0 * half_ext / ek + INS_THICKNESS / ik)));
                net.ambient.push((2, a / (1.0 / H_OUTSIDE + half_ext / ek)));
                if self.variant == BoxVariant::MultiLayerInfiltration {
                    net.infiltration = AIR_RHO_CP * DISCHARGE_COEFFICIENT * self.req("crack_a") * 1e-6;
                }
            }
        }
        net
    }
}

/// Explicit thermal network: node 0 is the internal air.
#[derive(Debug, Clone, PartialEq)]
pub struct RcNetwork {
    /// J/K per node.
    pub capacities: Vec<f64>,
    /// Conductances between nodes, W/K.
    pub links: Vec<(usize, usize, f64)>,
    /// Conductances from nodes to the external air, W/K.
    pub ambient: Vec<(usize, f64)>,
    /// Air-exchange conductance per m/s of wind at full exposure, W/K.
    pub infiltration: f64,
    pub radiative_fraction: f64,
    /// Node receiving solar gains and the radiative share of the heating.
    pub radiant_node: usize,
}

/// Wind-driven air exchange conductance (W/K).
pub fn infiltration_conductance(per_speed: f64, wind_speed: f64, wind_direction: f64) -> f64 {
    let exposure = 0.5 * (1.0 + (wind_direction - WINDOW_AZIMUTH).to_radians().cos());
    per_speed * wind_speed.max(0.0) * exposure
}

impl RcNetwork {
    pub fn nodes(&self) -> usize {
        self.capacities.len()
    }

    /// Multiplies every conductance by `factor`.
    pub fn scale_conductances(&mut self, factor: f64) {
        self.links.iter_mut().for_each(|l| l.2 *= factor);
        self.ambient.iter_mut().for_each(|l| l.1 *= factor);
        self.infiltration *= factor;
    }

    /// Total conductance to the outside with no wind, W/K.
    pub fn envelope_conductance(&self) -> f64 {
        let n = self.nodes();
        let mut g = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        self.assemble(&mut g, &mut b, 0.0);
        // One watt into the air node with the outside at zero.
        let mut unit = DVector::zeros(n);
        unit[0] = 1.0;
        let t = g.lu().solve(&unit).expect("conductance matrix is nonsingular");
        1.0 / t[0]
    }

    fn assemble(&self, g: &mut DMatrix<f64>, amb: &mut DVector<f64>, extra_air: f64) {
        g.fill(0.0);
        amb.fill(0.0);
        for &(i, j, c) in &self.links {
            g[(i, i)] += c;
            g[(j, j)] += c;
            g[(i, j)] -= c;
            g[(j, i)] -= c;
        }
        for &(i, c) in &self.ambient {
            g[(i, i)] += c;
            amb[i] += c;
        }
        g[(0, 0)] += extra_air;
        amb[0] += extra_air;
    }

    /// Substeps per step that keep explicit Euler within the stability margin.
    fn substeps(&self, dt: f64, max_extra_air: f64) -> usize {
        let mut total = vec![0.0; self.nodes()];
        for &(i, j, c) in &self.links {
            total[i] += c;
            total[j] += c;
        }
        for &(i, c) in &self.ambient {
            total[i] += c;
        }
        total[0] += max_extra_air;
        let rate = total.iter().zip(&self.capacities).map(|(g, c)| g / c).fold(0.0, f64::max);
        ((dt * rate / STABILITY_FRACTION).ceil() as usize).max(1)
    }
}

/// Time series of the box boundary conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySeries {
    /// °C
    pub external_temp: Vec<f64>,
    /// W/m²
    pub solar_vertical: Vec<f64>,
    /// m/s
    pub wind_speed: Vec<f64>,
    /// degrees
    pub wind_direction: Vec<f64>,
    /// W
    pub heat_pulses: Vec<f64>,
}

impl BoundarySeries {
    pub fn validate(&self) -> Result<()> {
        let n = self.external_temp.len();
        if [self.solar_vertical.len(), self.wind_speed.len(), self.wind_direction.len(), self.heat_pulses.len()]
            .iter()
            .any(|l| *l != n)
        {
            return Err(Error::InvalidInput("boundary series differ in length".into()));
        }
        for s in self.columns() {
            crate::error::ensure_finite(s, "boundary series")?;
        }
        if self.heat_pulses.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidInput("heat pulses must be nonnegative".into()));
        }
        if self.wind_speed.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidInput("wind speed must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.external_temp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external_temp.is_empty()
    }

    pub fn columns(&self) -> [&[f64]; 5] {
        [&self.external_temp, &self.solar_vertical, &self.wind_speed, &self.wind_direction, &self.heat_pulses]
    }

    /// N × 5 matrix in the order of [`BOUNDARY_NAMES`].
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let cols = self.columns();
        DMatrix::from_fn(self.len(), 5, |i, j| cols[j][i])
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != 5 {
            return Err(Error::InvalidInput(format!("boundary matrix needs 5 columns, got {}", m.ncols())));
        }
        let col = |j: usize| m.column(j).iter().copied().collect::<Vec<_>>();
        let s = Self {
            external_temp: col(0),
            solar_vertical: col(1),
            wind_speed: col(2),
            wind_direction: col(3),
            heat_pulses: col(4),
        };
        s.validate()?;
        Ok(s)
    }

    /// Synthetic weather with a ROLBS heating sequence.
    ///
    /// External temperature follows a diurnal cycle plus slow noise, solar
    /// radiation is a clipped half-sine with a random daily clearness, and
    /// wind speed and direction are slow mean-reverting processes.
    pub fn synthetic(n: usize, step_minutes: u32, seed: u64, pulse_power: f64) -> Result<Self> {
        if n < 16 {
            return Err(Error::InvalidInput("at least 16 steps are needed".into()));
        }
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        let dt_h = step_minutes as f64 / 60.0;
        let mut rng = stream(1);
        let mut te = Vec::with_capacity(n);
        let mut drift = 0.0;
        for k in 0..n {
            let t = k as f64 * dt_h;
            drift = 0.97 * drift + 0.25 * rng.sample::<f64, _>(StandardNormal);
            te.push(8.0 + 5.0 * (2.0 * std::f64::consts::PI * (t - 9.0) / 24.0).sin() + drift);
        }
        let mut rng = stream(2);
        let days = (n as f64 * dt_h / 24.0).ceil() as usize + 1;
        let clearness: Vec<f64> = (0..days).map(|_| rng.random_range(0.3..1.0)).collect();
        let gv = (0..n)
            .map(|k| {
                let t = k as f64 * dt_h;
                let hour = t % 24.0;
                if (7.0..17.0).contains(&hour) {
                    450.0 * clearness[(t / 24.0) as usize] * (std::f64::consts::PI * (hour - 7.0) / 10.0).sin()
                } else {
                    0.0
                }
            })
            .collect();
        let ou = |rng: &mut ChaCha8Rng, phi: f64| {
            let innov = (1.0 - phi * phi).sqrt();
            let mut x: f64 = rng.sample(StandardNormal);
            (0..n)
                .map(|_| {
                    x = phi * x + innov * rng.sample::<f64, _>(StandardNormal);
                    x
                })
                .collect::<Vec<f64>>()
        };
        let ws = ou(&mut stream(3), 0.97).into_iter().map(|x| 3.5 * (0.6 * x).exp()).collect();
        let wd = ou(&mut stream(4), 0.98).into_iter().map(|x| (180.0 + 80.0 * x).clamp(0.0, 360.0)).collect();
        let rhp = generate_rolbs(pulse_power, n, derive(seed, 5))?;
        let s = Self { external_temp: te, solar_vertical: gv, wind_speed: ws, wind_direction: wd, heat_pulses: rhp };
        s.validate()?;
        Ok(s)
    }

    /// Constant boundary conditions, handy for equilibrium checks.
    pub fn constant(n: usize, te: f64, gv: f64, ws: f64, wd: f64, pulse: f64) -> Self {
        Self {
            external_temp: vec![te; n],
            solar_vertical: vec![gv; n],
            wind_speed: vec![ws; n],
            wind_direction: vec![wd; n],
            heat_pulses: vec![pulse; n],
        }
    }
}

fn derive(seed: u64, stream: u64) -> u64 {
    crate::derive_seed(seed, stream)
}

/// Randomly ordered logarithmic binary sequence of heat pulses.
///
/// On and off durations are drawn from `{1, 2, 4, …}` steps (up to a
/// sixteenth of the sequence). Each pass uses every duration once as an on
/// period and once as an off period, both lists shuffled independently, so
/// complete passes have a duty cycle of exactly one half.
pub fn generate_rolbs(pulse_power: f64, total_steps: usize, seed: u64) -> Result<Vec<f64>> {
    if total_steps < 16 {
        return Err(Error::InvalidInput("ROLBS needs at least 16 steps".into()));
    }
    if !(pulse_power >= 0.0 && pulse_power.is_finite()) {
        return Err(Error::InvalidInput("pulse power must be nonnegative".into()));
    }
    let max_len = total_steps / 16;
    let mut lengths = Vec::new();
    let mut d = 1;
    while d <= max_len {
        lengths.push(d);
        d *= 2;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(total_steps + 4 * max_len);
    while out.len() < total_steps {
        let mut on = lengths.clone();
        let mut off = lengths.clone();
        on.shuffle(&mut rng);
        off.shuffle(&mut rng);
        for (a, b) in on.iter().zip(&off) {
            out.extend(std::iter::repeat_n(pulse_power, *a));
            out.extend(std::iter::repeat_n(0.0, *b));
        }
    }
    out.truncate(total_steps);
    Ok(out)
}

/// Energy totals accumulated during a simulation, in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyLedger {
    pub heating: f64,
    pub solar: f64,
    /// Heat lost to the outside through the envelope and by air exchange.
    pub losses: f64,
    pub stored_change: f64,
}

/// Internal air temperature at the end of every step and the energy totals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub temperatures: Vec<f64>,
    pub energy: EnergyLedger,
    pub substeps: usize,
}

/// Internal air temperature (°C) at the end of every step.
pub fn simulate(spec: &BoxVariantSpec, boundary: &BoundarySeries, initial_temp: f64) -> Result<Vec<f64>> {
    Ok(simulate_trace(spec, boundary, initial_temp, None)?.temperatures)
}

/// Full simulation. `substeps` overrides the automatic step subdivision.
pub fn simulate_trace(
    spec: &BoxVariantSpec,
    boundary: &BoundarySeries,
    initial_temp: f64,
    substeps: Option<usize>,
) -> Result<SimulationTrace> {
    BoxVariantSpec::new(spec.variant, spec.values.clone(), spec.step_minutes)?;
    boundary.validate()?;
    if boundary.len() < 2 {
        return Err(Error::InvalidInput("at least two steps are needed".into()));
    }
    if !initial_temp.is_finite() {
        return Err(Error::NonFinite("initial temperature"));
    }
    run_network(&spec.network(), boundary, spec.step_minutes as f64 * 60.0, initial_temp, substeps)
}

/// Integrates an arbitrary network over the boundary series.
pub fn run_network(
    net: &RcNetwork,
    boundary: &BoundarySeries,
    dt: f64,
    initial_temp: f64,
    substeps: Option<usize>,
) -> Result<SimulationTrace> {
    let n_nodes = net.nodes();
    let max_inf = (0..boundary.len())
        .map(|k| infiltration_conductance(net.infiltration, boundary.wind_speed[k], boundary.wind_direction[k]))
        .fold(0.0, f64::max);
    let m = substeps.unwrap_or_else(|| net.substeps(dt, max_inf)).max(1);
    let h = dt / m as f64;
    let mut t = vec![initial_temp; n_nodes];
    let mut flow = vec![0.0; n_nodes];
    let mut energy = EnergyLedger::default();
    let mut out = Vec::with_capacity(boundary.len());
    let start: f64 = t.iter().zip(&net.capacities).map(|(ti, c)| ti * c).sum();

    for k in 0..boundary.len() {
        let te = boundary.external_temp[k];
        let pulse = boundary.heat_pulses[k];
        let solar = boundary.solar_vertical[k] * GLAZING_AREA * SOLAR_TRANSMITTANCE;
        let g_inf = infiltration_conductance(net.infiltration, boundary.wind_speed[k], boundary.wind_direction[k]);
        let before = t.clone();
        for _ in 0..m {
            flow.fill(0.0);
            flow[0] += (1.0 - net.radiative_fraction) * pulse;
            flow[net.radiant_node] += net.radiative_fraction * pulse + solar;
            for &(i, j, g) in &net.links {
                let q = g * (t[j] - t[i]);
                flow[i] += q;
                flow[j] -= q;
            }
            let mut loss = 0.0;
            for &(i, g) in &net.ambient {
                let q = g * (t[i] - te);
                flow[i] -= q;
                loss += q;
            }
            let q = g_inf * (t[0] - te);
            flow[0] -= q;
            loss += q;
            energy.losses += loss * h;
            energy.heating += pulse * h;
            energy.solar += solar * h;
            for i in 0..n_nodes {
                t[i] += h * flow[i] / net.capacities[i];
            }
        }
        if t.iter().zip(&before).any(|(a, b)| !a.is_finite() || (a - b).abs() > MAX_STEP_CHANGE) {
            return Err(Error::Unstable { step: k });
        }
        out.push(t[0]);
    }
    let end: f64 = t.iter().zip(&net.capacities).map(|(ti, c)| ti * c).sum();
    energy.stored_change = end - start;
    Ok(SimulationTrace { temperatures: out, energy, substeps: m })
}

/// Noisy observation of a generating model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObservation {
    pub y: Vec<f64>,
    pub truth: Vec<f64>,
    pub noise_variance: f64,
}

/// Simulates `truth` and adds white noise whose variance is
/// `noise_variance_ratio` times the variance of the simulated series.
/// The run starts at the first external temperature.
pub fn make_synthetic_observation(
    truth: &BoxVariantSpec,
    boundary: &BoundarySeries,
    noise_variance_ratio: f64,
    seed: u64,
) -> Result<SyntheticObservation> {
    if !(noise_variance_ratio >= 0.0 && noise_variance_ratio.is_finite()) {
        return Err(Error::InvalidInput("noise to variance ratio must be nonnegative".into()));
    }
    boundary.validate()?;
    let clean = simulate(truth, boundary, boundary.external_temp[0])?;
    let noise_variance = noise_variance_ratio * population_variance(&clean);
    let sd = noise_variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = clean.iter().map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(SyntheticObservation { y, truth: clean, noise_variance })
}

/// Latin-hypercube design on the unit cube: every column places exactly one
/// point in each of the `m` strata.
pub fn sample_design(bounds: &[ParamBounds], m: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m < 2 {
        return Err(Error::InvalidInput("a design needs at least two runs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DMatrix::zeros(m, bounds.len());
    for j in 0..bounds.len() {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        for (i, p) in perm.into_iter().enumerate() {
            d[(i, j)] = (p as f64 + rng.random::<f64>()) / m as f64;
        }
    }
    Ok(d)
}

/// Simulates every design row (unit coordinates); returns N × M outputs.
pub fn simulate_ensemble(
    variant: BoxVariant,
    design_unit: &DMatrix<f64>,
    boundary: &BoundarySeries,
    step_minutes: u32,
    initial_temp: f64,
) -> Result<DMatrix<f64>> {
    let run = |r: usize| -> Result<Vec<f64>> {
        let unit: Vec<f64> = design_unit.row(r).iter().copied().collect();
        let spec = BoxVariantSpec::from_unit(variant, &unit, step_minutes)?;
        simulate(&spec, boundary, initial_temp)
    };
    #[cfg(feature = "parallel")]
    let runs: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..design_unit.nrows()).into_par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Vec<f64>> = (0..design_unit.nrows()).map(run).collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(boundary.len(), runs.len(), |i, j| runs[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_lies_inside_bounds() {
        for v in BoxVariant::ALL {
            BoxVariantSpec::new(v, v.truth(), 15).unwrap();
        }
        assert!(BoxVariantSpec::new(BoxVariant::MultiLayer, vec![2.0, 3361.0, 0.048, 179.0, 0.79], 15).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in BoxVariant::ALL {
            assert_eq!(v.name().parse::<BoxVariant>().unwrap(), v);
        }
    }

    #[test]
    fn rolbs_durations_are_powers_of_two() {
        let s = generate_rolbs(1.0, 512, 3).unwrap();
        let mut run = 1;
        for w in s.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                assert!(run <= 32);
                run = 1;
            }
        }
    }

    #[test]
    fn forced_coarse_step_is_unstable() {
        let spec = BoxVariantSpec::truth(BoxVariant::MultiLayerInfiltration);
        let b = BoundarySeries::synthetic(96, 15, 1, DEFAULT_PULSE_POWER).unwrap();
        let err = simulate_trace(&spec, &b, 30.0, Some(1)).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
        assert!(err.to_string().contains("reduce step"));
    }

    #[test]
    fn envelope_conductance_is_plausible() {
        for v in BoxVariant::ALL {
            let ua = BoxVariantSpec::truth(v).network().envelope_conductance();
            assert!((2.0..8.0).contains(&ua), "{v:?} {ua}");
        }
    }
}
