//! Experiment configuration, read from a single TOML document.

use std::path::{Path, PathBuf};

use adequacy::emulator::{EmulatorConfig, DEFAULT_SELECTION_THRESHOLD};
use adequacy::inference::targets::DEFAULT_CONFIDENCE;
use adequacy::inference::{AnnealingSchedule, SweepMode};
use adequacy::thermalbox::{BoxVariant, DEFAULT_PULSE_POWER, DEFAULT_STEP_MINUTES};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const ENSEMBLE_FILE: &str = "ensemble.csv";
pub const DESIGN_FILE: &str = "design.csv";
pub const PARAMETERS_FILE: &str = "parameters.csv";
pub const BOUNDARY_FILE: &str = "boundary.csv";
pub const OBSERVATION_FILE: &str = "observation.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model label used in reports; defaults to the synthetic variant name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub priors: PriorSection,
    #[serde(default)]
    pub emulator: EmulatorSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    /// Separate schedule for the discrepancy target; falls back to `schedule`.
    #[serde(default)]
    pub discrepancy_schedule: Option<ScheduleSection>,
}

fn default_replicates() -> usize {
    20
}

/// Input files. Relative paths are resolved against the config file's
/// directory; missing entries default to the standard names in the output
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub ensemble: Option<PathBuf>,
    pub design: Option<PathBuf>,
    pub parameters: Option<PathBuf>,
    pub boundary: Option<PathBuf>,
    pub observation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub variant: BoxVariant,
    #[serde(default = "default_truth")]
    pub truth: BoxVariant,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_minutes")]
    pub step_minutes: u32,
    #[serde(default = "default_noise_ratio")]
    pub noise_ratio: f64,
    #[serde(default = "default_pulse_power")]
    pub pulse_power: f64,
}

fn default_truth() -> BoxVariant {
    BoxVariant::MultiLayerInfiltration
}
fn default_runs() -> usize {
    30
}
fn default_steps() -> usize {
    384
}
fn default_step_minutes() -> u32 {
    DEFAULT_STEP_MINUTES
}
fn default_noise_ratio() -> f64 {
    0.01
}
fn default_pulse_power() -> f64 {
    DEFAULT_PULSE_POWER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub variance_fraction: f64,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self { variance_fraction: adequacy::basis::DEFAULT_VARIANCE_FRACTION }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BMode {
    /// `b = √ε · s_max` from the ensemble's largest singular value.
    Auto,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub a: f64,
    pub b_mode: BMode,
    /// Used when `b_mode = "fixed"`.
    pub b: Option<f64>,
    pub a_star_c: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self { a: 2.0, b_mode: BMode::Auto, b: None, a_star_c: DEFAULT_CONFIDENCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmulatorSection {
    pub restarts: usize,
    pub max_evals: usize,
    pub selection_threshold: f64,
    pub forward_selection: bool,
}

impl Default for EmulatorSection {
    fn default() -> Self {
        let d = EmulatorConfig::default();
        Self {
            restarts: d.restarts,
            max_evals: d.max_evals,
            selection_threshold: DEFAULT_SELECTION_THRESHOLD,
            forward_selection: d.forward_selection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub temperatures: usize,
    pub chains: usize,
    pub steps: usize,
    pub proposal_scale: f64,
    pub sweep: SweepMode,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { temperatures: 200, chains: 64, steps: 3, proposal_scale: 0.2, sweep: SweepMode::ComponentWise }
    }
}

impl ScheduleSection {
    pub fn build(&self, seed: u64) -> CliResult<AnnealingSchedule> {
        AnnealingSchedule::geometric_linear(self.temperatures, self.chains, self.steps, self.proposal_scale, seed)
            .map(|s| s.with_sweep(self.sweep))
            .map_err(|e| CliError::Config(format!("schedule: {e}")))
    }
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub bytes: Vec<u8>,
    pub out_dir: PathBuf,
}

impl LoadedConfig {
    /// Reads `path`; `seed` and `out` override the document's values.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::Config("config is not UTF-8".into()))?;
        let mut config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = seed {
            config.seed = s;
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out_dir = match (out, &config.output_dir) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => base_dir.join(o),
            (None, None) => return Err(CliError::Config("no output directory: pass --out or set output_dir".into())),
        };
        config.validate()?;
        Ok(Self { config, base_dir, bytes, out_dir })
    }

    /// Resolved input path, falling back to `default_name` in the output
    /// directory.
    pub fn input(&self, configured: &Option<PathBuf>, default_name: &str) -> PathBuf {
        match configured {
            Some(p) => self.base_dir.join(p),
            None => self.out_dir.join(default_name),
        }
    }

    pub fn ensemble_path(&self) -> PathBuf {
        self.input(&self.config.paths.ensemble, ENSEMBLE_FILE)
    }
    pub fn design_path(&self) -> PathBuf {
        self.input(&self.config.paths.design, DESIGN_FILE)
    }
    pub fn parameters_path(&self) -> PathBuf {
        self.input(&self.config.paths.parameters, PARAMETERS_FILE)
    }
    pub fn boundary_path(&self) -> PathBuf {
        self.input(&self.config.paths.boundary, BOUNDARY_FILE)
    }
    pub fn observation_path(&self) -> PathBuf {
        self.input(&self.config.paths.observation, OBSERVATION_FILE)
    }

    pub fn model_name(&self) -> String {
        self.config
            .name
            .clone()
            .or_else(|| self.config.synthetic.as_ref().map(|s| s.variant.name().to_string()))
            .unwrap_or_else(|| "model".into())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.basis.variance_fraction > 0.0 && self.basis.variance_fraction <= 1.0) {
            return bad(format!("basis.variance_fraction = {} outside (0, 1]", self.basis.variance_fraction));
        }
        if self.replicates < 2 {
            return bad("replicates must be at least 2 to form evidence intervals".into());
        }
        if !(self.priors.a > 0.0) {
            return bad("priors.a must be positive".into());
        }
        match (self.priors.b_mode, self.priors.b) {
            (BMode::Fixed, None) => return bad("priors.b_mode = \"fixed\" requires priors.b".into()),
            (BMode::Fixed, Some(b)) if !(b > 0.0) => return bad("priors.b must be positive".into()),
            _ => {}
        }
        if !(self.priors.a_star_c > 0.0 && self.priors.a_star_c <= 1.0) {
            return bad(format!("priors.a_star_c = {} outside (0, 1]", self.priors.a_star_c));
        }
        if self.emulator.restarts == 0 {
            return bad("emulator.restarts must be positive".into());
        }
        self.schedule.build(0)?;
        if let Some(d) = &self.discrepancy_schedule {
            d.build(0)?;
        }
        if let Some(s) = &self.synthetic {
            if s.runs < 2 || s.steps < 16 || s.step_minutes == 0 {
                return bad("synthetic: runs >= 2, steps >= 16 and step_minutes >= 1 are required".into());
            }
            if !(s.noise_ratio > 0.0) {
                return bad("synthetic.noise_ratio must be positive".into());
            }
        }
        Ok(())
    }

    pub fn emulator_config(&self, seed: u64) -> EmulatorConfig {
        EmulatorConfig {
            restarts: self.emulator.restarts,
            max_evals: self.emulator.max_evals,
            selection_threshold: self.emulator.selection_threshold,
            forward_selection: self.emulator.forward_selection,
            seed,
            ..EmulatorConfig::default()
        }
    }

    pub fn discrepancy_schedule(&self) -> &ScheduleSection {
        self.discrepancy_schedule.as_ref().unwrap_or(&self.schedule)
    }
}
