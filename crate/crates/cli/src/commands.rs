//! The four pipeline stages.

use std::path::{Path, PathBuf};

use adequacy::analysis::{
    build_discrepancy_report, compare_models, parameter_summaries, posterior_prediction, rmse, EvidenceReplicates,
    ModelEntry,
};
use adequacy::basis::{build_simulation_basis, project_observation, BasisPair, BoundaryConditions, SimulationEnsemble};
use adequacy::emulator::{fit_emulator, SimulationPriors};
use adequacy::inference::targets::{CalibrationProblem, DiscrepancyModel, DiscrepancyProblem};
use adequacy::inference::{run_replicates, ObservationPriors, PosteriorArchive};
use adequacy::thermalbox::{
    make_synthetic_observation, sample_design, simulate_ensemble, BoundarySeries, BoxVariantSpec, BOUNDARY_NAMES,
};
use adequacy::{derive_seed, ParameterDesign};
use nalgebra::DVector;

use crate::archive::{ArchiveMeta, ArchiveReader, CalibratedModel, ARCHIVE_FILE};
use crate::config::{BMode, LoadedConfig};
use crate::csvio::{self, BoundaryTable, Observation};
use crate::error::{CliError, CliResult, StageExt};
use crate::manifest::{self, hash_with_inputs, sha256_hex, DirLock, RunManifest};
use crate::report::{self, ComparisonDocument, ReportDocument, SummaryDocument};

pub const SUMMARY_FILE: &str = "summary.txt";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_TEXT: &str = "comparison.txt";

/// Child-seed streams of the master seed.
pub mod streams {
    pub const BOUNDARY: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const DESIGN: u64 = 3;
    pub const FICTITIOUS_INPUT: u64 = 4;
    pub const EMULATOR: u64 = 5;
    pub const CALIBRATION: u64 = 6;
    pub const DISCREPANCY: u64 = 7;

    pub const ALL: [(&str, u64); 7] = [
        ("boundary", BOUNDARY),
        ("noise", NOISE),
        ("design", DESIGN),
        ("fictitious_input", FICTITIOUS_INPUT),
        ("emulator", EMULATOR),
        ("calibration", CALIBRATION),
        ("discrepancy", DISCREPANCY),
    ];
}

fn seed_table(master: u64) -> Vec<(String, u64)> {
    streams::ALL.iter().map(|(n, s)| (n.to_string(), derive_seed(master, *s))).collect()
}

const BOUNDARY_UNITS: [&str; 5] = ["degC", "W/m2", "m/s", "deg", "W"];
const OUTPUT_UNIT: &str = "degC";

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(CliError::io(path))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(CliError::io(path))
}

/// Files written by `simulate`.
#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub files: Vec<PathBuf>,
    pub manifest_hash: String,
}

/// Generates boundary conditions, a noisy observation of the generating
/// variant and a Latin-hypercube ensemble of the configured variant.
pub fn cmd_simulate(cfg: &LoadedConfig) -> CliResult<SimulateOutcome> {
    let spec = cfg
        .config
        .synthetic
        .clone()
        .ok_or_else(|| CliError::Config("simulate needs a [synthetic] section".into()))?;
    let out = &cfg.out_dir;
    let _lock = DirLock::acquire(out)?;
    let seed = cfg.config.seed;
    let hash = manifest::content_hash(&cfg.bytes, seed, &[]);
    let mut run = RunManifest::new("simulate", hash.clone(), seed, seed_table(seed));

    let boundary = run.stage("boundary", || {
        BoundarySeries::synthetic(spec.steps, spec.step_minutes, derive_seed(seed, streams::BOUNDARY), spec.pulse_power)
            .stage("boundary")
    })?;
    let obs = run.stage("observation", || {
        let truth = BoxVariantSpec::new(spec.truth, spec.truth.truth(), spec.step_minutes).stage("observation")?;
        make_synthetic_observation(&truth, &boundary, spec.noise_ratio, derive_seed(seed, streams::NOISE))
            .stage("observation")
    })?;
    let bounds = spec.variant.parameters();
    let design = run.stage("design", || {
        let unit = sample_design(&bounds, spec.runs, derive_seed(seed, streams::DESIGN)).stage("design")?;
        ParameterDesign::from_unit(unit, bounds.clone()).stage("design")
    })?;
    let outputs = run.stage("ensemble", || {
        simulate_ensemble(spec.variant, design.unit(), &boundary, spec.step_minutes, boundary.external_temp[0])
            .stage("ensemble")
    })?;

    let files = vec![
        cfg.parameters_path(),
        cfg.design_path(),
        cfg.boundary_path(),
        cfg.ensemble_path(),
        cfg.observation_path(),
    ];
    for f in &files {
        if let Some(dir) = f.parent() {
            std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
    }
    csvio::write_parameters(&files[0], &bounds)?;
    csvio::write_design(&files[1], &design)?;
    let table = BoundaryTable {
        names: BOUNDARY_NAMES.iter().map(|s| s.to_string()).collect(),
        units: BOUNDARY_UNITS.iter().map(|s| s.to_string()).collect(),
        values: boundary.to_matrix(),
    };
    csvio::write_boundary(&files[2], &table)?;
    csvio::write_ensemble(&files[3], &outputs, OUTPUT_UNIT)?;
    let sd = obs.noise_variance.sqrt();
    if !(sd > 0.0) {
        return Err(CliError::Config("synthetic.noise_ratio must be positive".into()));
    }
    let observation =
        Observation { y: obs.y, sd: vec![sd; obs.truth.len()], truth: Some(obs.truth), unit: OUTPUT_UNIT.into() };
    csvio::write_observation(&files[4], &observation)?;
    for f in &files {
        run.artifact(f)?;
    }
    run.write(out)?;
    Ok(SimulateOutcome { files, manifest_hash: hash })
}

/// Parsed calibration inputs.
struct Inputs {
    design: ParameterDesign,
    boundary: BoundaryTable,
    outputs: nalgebra::DMatrix<f64>,
    observation: Observation,
}

fn input_paths(cfg: &LoadedConfig) -> Vec<(&'static str, PathBuf)> {
    vec![
        ("parameters", cfg.parameters_path()),
        ("design", cfg.design_path()),
        ("boundary", cfg.boundary_path()),
        ("ensemble", cfg.ensemble_path()),
        ("observation", cfg.observation_path()),
    ]
}

/// Hash of the config, seed and input files as they are now.
pub fn current_hash(cfg: &LoadedConfig) -> CliResult<String> {
    let inputs = manifest::read_inputs(&input_paths(cfg))?;
    Ok(hash_with_inputs(&cfg.bytes, cfg.config.seed, &inputs))
}

fn load_inputs(cfg: &LoadedConfig) -> CliResult<Inputs> {
    let bounds = csvio::read_parameters(&cfg.parameters_path())?;
    let design = csvio::read_design(&cfg.design_path(), &bounds)?;
    let boundary = csvio::read_boundary(&cfg.boundary_path())?;
    let outputs = csvio::read_ensemble(&cfg.ensemble_path())?;
    let observation = csvio::read_observation(&cfg.observation_path())?;
    let n = observation.y.len();
    if outputs.nrows() != n || boundary.values.nrows() != n {
        return Err(CliError::Data(format!(
            "series lengths differ: ensemble {}, boundary {}, observation {n}",
            outputs.nrows(),
            boundary.values.nrows()
        )));
    }
    if outputs.ncols() != design.runs() {
        return Err(CliError::Data(format!("ensemble has {} runs, design has {}", outputs.ncols(), design.runs())));
    }
    Ok(Inputs { design, boundary, outputs, observation })
}

#[derive(Debug, Clone)]
pub struct CalibrateOutcome {
    pub archive: PathBuf,
    pub summary: SummaryDocument,
    pub text: String,
}

/// Basis, emulator, replicated AIS on both targets; writes the archive and
/// a summary in original units.
pub fn cmd_calibrate(cfg: &LoadedConfig) -> CliResult<CalibrateOutcome> {
    let out = &cfg.out_dir;
    let _lock = DirLock::acquire(out)?;
    let c = &cfg.config;
    let seed = c.seed;
    let raw_inputs = manifest::read_inputs(&input_paths(cfg))?;
    let hash = hash_with_inputs(&cfg.bytes, seed, &raw_inputs);
    let observation_hash = sha256_hex(&raw_inputs.iter().find(|(n, _)| *n == "observation").expect("listed").1);
    let mut run = RunManifest::new("calibrate", hash.clone(), seed, seed_table(seed));

    let inputs = run.stage("load", || load_inputs(cfg))?;
    let bounds = inputs.design.bounds().to_vec();
    let n = inputs.observation.y.len();
    let bc = BoundaryConditions::standardize(
        &inputs.boundary.values,
        inputs.boundary.names.clone(),
        derive_seed(seed, streams::FICTITIOUS_INPUT),
    )
    .stage("boundary")?;
    let ensemble =
        SimulationEnsemble::new(inputs.outputs.clone(), inputs.design.clone(), bc.clone()).stage("ensemble")?;
    let basis = run.stage("basis", || {
        build_simulation_basis(&inputs.outputs, c.basis.variance_fraction)
            .and_then(BasisPair::with_complement)
            .stage("basis")
    })?;
    log::info!("basis: Q = {}, variance explained {:.6}", basis.q(), basis.variance_explained());
    let sim_priors = SimulationPriors {
        a: c.priors.a,
        b: match c.priors.b_mode {
            BMode::Auto => None,
            BMode::Fixed => c.priors.b,
        },
    };
    let emulator = run.stage("emulator", || {
        fit_emulator(&ensemble, &basis, sim_priors, &c.emulator_config(derive_seed(seed, streams::EMULATOR)))
            .stage("emulator")
    })?;
    let y = DVector::from_vec(inputs.observation.y.clone());
    let (w_star, v_hat) = project_observation(&y, &basis).stage("projection")?;
    let obs_priors = ObservationPriors::from_noise(inputs.observation.noise_variance(), n, c.priors.a_star_c)
        .map_err(|e| CliError::Config(format!("priors.a_star_c: {e}")))?;

    let calibration = run.stage("calibration", || {
        let problem = CalibrationProblem::new(&emulator, &w_star, &basis.k_norms2(), obs_priors).stage("calibration")?;
        let schedule = c.schedule.build(0)?;
        run_replicates(&problem, &schedule, c.replicates, derive_seed(seed, streams::CALIBRATION)).stage("calibration")
    })?;
    let model = DiscrepancyModel::new(&basis, bc.matrix(), &v_hat).stage("discrepancy")?;
    let discrepancy = run.stage("discrepancy", || {
        let problem = DiscrepancyProblem::new(model, obs_priors).stage("discrepancy")?;
        let schedule = c.discrepancy_schedule().build(0)?;
        run_replicates(&problem, &schedule, c.replicates, derive_seed(seed, streams::DISCREPANCY)).stage("discrepancy")
    })?;
    let posterior = PosteriorArchive::from_runs(&calibration, &discrepancy).stage("archive")?;

    let prediction = posterior_prediction(&posterior, &emulator, &basis).stage("prediction")?;
    let fit_rmse = rmse(prediction.as_slice(), y.as_slice()).stage("prediction")?;
    let params = parameter_summaries(&posterior, &bounds).stage("summary")?;
    let evidence = EvidenceReplicates { ensemble_size: inputs.design.runs(), log10: posterior.log10_replicates() };

    let meta = ArchiveMeta {
        model: cfg.model_name(),
        software_version: manifest::VERSION.into(),
        manifest_hash: hash.clone(),
        observation_hash,
        seed,
        runs: inputs.design.runs(),
        points: n,
        basis_size: basis.q(),
        variance_explained: basis.variance_explained(),
        parameters: bounds,
        boundary_names: bc.names().to_vec(),
        output_unit: inputs.observation.unit.clone(),
        noise_variance: inputs.observation.noise_variance(),
        prior_shape: obs_priors.shape,
        prior_rate: obs_priors.rate,
        calibration_chains: posterior.calibration_chains,
        discrepancy_chains: posterior.discrepancy_chains,
        emulator: emulator.fits(),
        rmse: fit_rmse,
    };
    let summary = SummaryDocument {
        manifest_hash: hash.clone(),
        model: meta.model.clone(),
        parameters: params,
        log10_evidence: evidence.estimate(),
        log10_evidence_hdi: evidence.hdi().stage("summary")?,
        log10_replicates: evidence.log10.clone(),
        rmse: fit_rmse,
        basis_size: basis.q(),
        variance_explained: basis.variance_explained(),
        calibration_ess: PosteriorArchive::effective_sample_size(&posterior.calibration_weights()),
        discrepancy_ess: PosteriorArchive::effective_sample_size(&posterior.discrepancy_weights()),
    };
    let calibrated = CalibratedModel {
        meta,
        posterior,
        k: basis.k().clone(),
        v_hat,
        w_star,
        x: bc.matrix().clone(),
        y,
        prediction,
        design_unit: inputs.design.unit().clone(),
    };
    let archive_path = out.join(ARCHIVE_FILE);
    calibrated.write(&archive_path)?;
    let text = report::summary_text(&summary, &calibrated.meta.output_unit);
    write_text(&out.join(SUMMARY_FILE), &text)?;
    write_json(&out.join(SUMMARY_JSON), &summary)?;
    for f in [ARCHIVE_FILE, SUMMARY_FILE, SUMMARY_JSON] {
        run.artifact(&out.join(f))?;
    }
    run.write(out)?;
    Ok(CalibrateOutcome { archive: archive_path, summary, text })
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub document: ReportDocument,
    pub text: String,
}

/// Attributes the discrepancy of a calibrated model to its boundary
/// inputs. Refuses archives whose recorded hash does not match the config
/// and inputs.
pub fn cmd_analyze(cfg: &LoadedConfig, archive: Option<&Path>) -> CliResult<AnalyzeOutcome> {
    let out = &cfg.out_dir;
    let archive_path = archive.map(Path::to_path_buf).unwrap_or_else(|| out.join(ARCHIVE_FILE));
    let model = CalibratedModel::read(&archive_path)?;
    let hash = current_hash(cfg)?;
    if hash != model.meta.manifest_hash {
        return Err(CliError::Config(format!(
            "{} was not produced from this config and these inputs (hash {} vs {})",
            archive_path.display(),
            &model.meta.manifest_hash[..12],
            &hash[..12]
        )));
    }
    let _lock = DirLock::acquire(out)?;
    let mut run = RunManifest::new("analyze", hash.clone(), cfg.config.seed, seed_table(cfg.config.seed));
    let report = run.stage("attribution", || {
        let basis = BasisPair::from_k(model.k.clone(), None).and_then(BasisPair::with_complement).stage("basis")?;
        let dm = DiscrepancyModel::new(&basis, &model.x, &model.v_hat).stage("discrepancy")?;
        build_discrepancy_report(&model.posterior, &dm, &model.meta.boundary_names).stage("attribution")
    })?;
    let document = ReportDocument {
        manifest_hash: hash,
        model: model.meta.model.clone(),
        ranking_names: report.ranking.iter().map(|&s| report.per_input[s].name.clone()).collect(),
        report,
    };
    let text = format!(
        "model: {}\nmanifest: {}\n\n{}",
        document.model,
        document.manifest_hash,
        report::discrepancy_table(&document.report)
    );
    write_json(&out.join(REPORT_JSON), &document)?;
    write_text(&out.join(REPORT_TEXT), &text)?;
    for f in [REPORT_JSON, REPORT_TEXT] {
        run.artifact(&out.join(f))?;
    }
    run.write(out)?;
    Ok(AnalyzeOutcome { document, text })
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub document: ComparisonDocument,
    pub text: String,
}

/// Header and evidence replicates of one archive, read without loading the
/// sample blocks.
fn evidence_entry(path: &Path) -> CliResult<(ArchiveMeta, ModelEntry)> {
    let mut r = ArchiveReader::open(path)?;
    let cal = r.block("calibration_replicates")?;
    let dis = r.block("discrepancy_replicates")?;
    if cal.len() != dis.len() || cal.is_empty() {
        return Err(CliError::Data(format!("{}: replicate blocks disagree", path.display())));
    }
    let meta = r.meta().clone();
    let log10 = cal.iter().zip(dis.iter()).map(|(c, d)| (c + d) / std::f64::consts::LN_10).collect();
    let entry = ModelEntry {
        name: meta.model.clone(),
        evidence: EvidenceReplicates { ensemble_size: meta.runs, log10 },
        rmse: meta.rmse,
    };
    Ok((meta, entry))
}

/// Pairwise Bayes factors between calibrated models of the same
/// observation and ensemble size.
pub fn cmd_compare(archives: &[PathBuf], out: &Path) -> CliResult<CompareOutcome> {
    if archives.len() < 2 {
        return Err(CliError::Config("compare needs at least two archives".into()));
    }
    let loaded = archives.iter().map(|p| evidence_entry(p)).collect::<CliResult<Vec<_>>>()?;
    let mut entries: Vec<ModelEntry> = loaded.iter().map(|(_, e)| e.clone()).collect();
    for i in 1..entries.len() {
        let base = entries[i].name.clone();
        let mut k = 2;
        while entries[..i].iter().any(|e| e.name == entries[i].name) {
            entries[i].name = format!("{base}#{k}");
            k += 1;
        }
    }
    let comparison = compare_models(&entries).stage("compare")?;
    let first = &loaded[0].0;
    for (meta, _) in &loaded[1..] {
        if meta.points != first.points {
            return Err(CliError::Data(format!(
                "models were calibrated on series of different length (N = {} vs N = {})",
                first.points, meta.points
            )));
        }
        if meta.observation_hash != first.observation_hash {
            return Err(CliError::Data("models were calibrated against different observations".into()));
        }
    }
    let _lock = DirLock::acquire(out)?;
    let hashes: Vec<String> = loaded.iter().map(|(m, _)| m.manifest_hash.clone()).collect();
    let mut run = RunManifest::new("compare", manifest::content_hash(hashes.concat().as_bytes(), 0, &[]), 0, vec![]);
    let document = ComparisonDocument {
        manifest_hashes: hashes,
        observation_hash: first.observation_hash.clone(),
        output_unit: first.output_unit.clone(),
        comparison,
    };
    let mut text = String::new();
    for (model, hash) in document.comparison.models.iter().zip(&document.manifest_hashes) {
        text.push_str(&format!("manifest {}: {hash}\n", model.name));
    }
    text.push('\n');
    text.push_str(&report::comparison_table(&document.comparison, &document.output_unit));
    write_json(&out.join(COMPARISON_JSON), &document)?;
    write_text(&out.join(COMPARISON_TEXT), &text)?;
    for f in [COMPARISON_JSON, COMPARISON_TEXT] {
        run.artifact(&out.join(f))?;
    }
    run.write(out)?;
    Ok(CompareOutcome { document, text })
}
