use std::io::{Seek, SeekFrom, Write};

use adequacy::emulator::WeightFit;
use adequacy::inference::PosteriorArchive;
use adequacy::kernel::EmulatorKernelParams;
use adequacy::ParamBounds;
use adequacy_cli::archive::{ArchiveMeta, ArchiveReader, CalibratedModel, MAGIC};
use adequacy_cli::csvio::{self, BoundaryTable, Observation};
use adequacy_cli::manifest::content_hash;
use adequacy_cli::CliError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tempfile::tempdir;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1e-6f64..1e-6, any::<f64>().prop_filter("finite", |v| v.is_finite())]
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(finite(), rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn same_to_12_digits(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ensemble_csv_round_trips(m in (1usize..12, 2usize..8).prop_flat_map(|(r, c)| matrix(r, c))) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.csv");
        csvio::write_ensemble(&path, &m, "degC").unwrap();
        let back = csvio::read_ensemble(&path).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in m.iter().zip(back.iter()) {
            prop_assert!(same_to_12_digits(*a, *b), "{} vs {}", a, b);
        }
    }

    #[test]
    fn observation_and_boundary_csv_round_trip(
        y in prop::collection::vec(finite(), 1..40),
        sd in 1e-6f64..1e3,
        b in (1usize..20).prop_flat_map(|r| matrix(r, 3)),
    ) {
        let dir = tempdir().unwrap();
        let obs = Observation { sd: vec![sd; y.len()], truth: Some(y.iter().map(|v| v * 0.5).collect()), y, unit: "degC".into() };
        let p = dir.path().join("o.csv");
        csvio::write_observation(&p, &obs).unwrap();
        prop_assert_eq!(csvio::read_observation(&p).unwrap(), obs);

        let table = BoundaryTable { names: vec!["Te".into(), "Gv".into(), "Ws".into()], units: vec!["degC".into(), "W/m2".into(), "m/s".into()], values: b };
        let p = dir.path().join("b.csv");
        csvio::write_boundary(&p, &table).unwrap();
        let back = csvio::read_boundary(&p).unwrap();
        prop_assert_eq!(back.names, table.names);
        prop_assert_eq!(back.units, table.units);
        prop_assert_eq!(back.values, table.values);
    }

    #[test]
    fn hash_changes_exactly_when_bytes_change(
        config in prop::collection::vec(any::<u8>(), 0..64),
        input in prop::collection::vec(any::<u8>(), 0..64),
        seed in any::<u64>(),
        flip in any::<prop::sample::Index>(),
    ) {
        let base = content_hash(&config, seed, &[("observation", &input)]);
        prop_assert_eq!(&base, &content_hash(&config, seed, &[("observation", &input)]));
        prop_assert_ne!(&base, &content_hash(&config, seed ^ 1, &[("observation", &input)]));
        if !input.is_empty() {
            let mut changed = input.clone();
            changed[flip.index(input.len())] ^= 0x01;
            prop_assert_ne!(&base, &content_hash(&config, seed, &[("observation", &changed)]));
        }
        let mut longer = config.clone();
        longer.push(b' ');
        prop_assert_ne!(&base, &content_hash(&longer, seed, &[("observation", &input)]));
        // Moving a byte across the config/input boundary is a different document.
        if let Some((last, head)) = config.split_last() {
            let mut moved = vec![*last];
            moved.extend(&input);
            prop_assert_ne!(&base, &content_hash(head, seed, &[("observation", &moved)]));
        }
    }
}

#[test]
fn malformed_csv_is_a_data_error() {
    let dir = tempdir().unwrap();
    let cases = [
        ("nan.csv", "t,run_001 [degC]\n0,1.0\n1,NaN\n"),
        ("ragged.csv", "t,run_001 [degC],run_002 [degC]\n0,1.0,2.0\n1,3.0\n"),
        ("text.csv", "t,run_001 [degC]\n0,warm\n"),
        ("index_only.csv", "t\n0\n"),
    ];
    for (name, body) in cases {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        let err = csvio::read_ensemble(&p).unwrap_err();
        assert!(matches!(err, CliError::Data(_)), "{name}: {err}");
        assert_eq!(err.exit_code(), 3);
    }
    let p = dir.path().join("sd.csv");
    std::fs::write(&p, "t,y [degC],sd [degC]\n0,1.0,0.0\n").unwrap();
    assert_eq!(csvio::read_observation(&p).unwrap_err().exit_code(), 3);
}

fn sample_model() -> CalibratedModel {
    let fill = |r: usize, c: usize, k: f64| DMatrix::from_fn(r, c, |i, j| (i as f64 + 1.0) * k - j as f64 / 7.0);
    let posterior = PosteriorArchive {
        calibration_samples: fill(6, 3, 0.1),
        discrepancy_samples: fill(4, 4, 0.2),
        calibration_log_weights: vec![-1.0, -0.5, -2.0, -0.1, -0.3, -0.7],
        discrepancy_log_weights: vec![-0.2, -0.4, -0.6, -0.8],
        calibration_replicates: vec![-10.25, -10.5],
        discrepancy_replicates: vec![3.125, 3.0],
        calibration_chains: 3,
        discrepancy_chains: 2,
    };
    let meta = ArchiveMeta {
        model: "multi_layer".into(),
        software_version: "0.1.0".into(),
        manifest_hash: "ab".repeat(32),
        observation_hash: "cd".repeat(32),
        seed: u64::MAX - 3,
        runs: 30,
        points: 5,
        basis_size: 2,
        variance_explained: 0.999_123_456_789_012_3,
        parameters: vec![ParamBounds::new("ins_k", "W/mK", 0.035, 0.065).unwrap()],
        boundary_names: vec!["x0".into(), "Te".into()],
        output_unit: "degC".into(),
        noise_variance: 1.0 / 3.0,
        prior_shape: 0.5,
        prior_rate: 0.1 + 0.2,
        calibration_chains: 3,
        discrepancy_chains: 2,
        emulator: vec![WeightFit {
            active_inputs: vec![0],
            kernel: EmulatorKernelParams { sigma2: 0.3, eta2: 0.7, beta: vec![0.123_456_789] },
            lambda: 1e5 / 3.0,
            log_density: -12.5,
            converged: true,
        }],
        rmse: std::f64::consts::PI / 100.0,
    };
    CalibratedModel {
        meta,
        posterior,
        k: fill(5, 2, 0.3),
        v_hat: DVector::from_vec(vec![0.1, -0.2, 0.3]),
        w_star: DVector::from_vec(vec![1.5, 20.0]),
        x: fill(5, 2, -0.4),
        y: DVector::from_vec(vec![20.0, 20.5, 21.0, 20.75, 20.1]),
        prediction: DVector::from_vec(vec![20.1, 20.4, 21.1, 20.7, 20.0]),
        design_unit: fill(30, 1, 0.01),
    }
}

#[test]
fn archive_round_trips_and_seeks() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("posterior.adq");
    let model = sample_model();
    model.write(&path).unwrap();
    let back = CalibratedModel::read(&path).unwrap();
    assert_eq!(back.meta, model.meta);
    assert_eq!(back.posterior, model.posterior);
    assert_eq!((back.k, back.v_hat, back.x), (model.k.clone(), model.v_hat.clone(), model.x.clone()));
    assert_eq!(back.design_unit, model.design_unit);

    let mut reader = ArchiveReader::open(&path).unwrap();
    assert_eq!(reader.meta(), &model.meta);
    // Blocks can be read in any order.
    assert_eq!(reader.block("w_star").unwrap().as_slice(), model.w_star.as_slice());
    assert_eq!(reader.block("calibration_samples").unwrap(), model.posterior.calibration_samples);
    assert_eq!(reader.block("k").unwrap(), model.k);
    assert!(reader.block("absent").is_err());
    assert_eq!(model.to_bytes().unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn damaged_archives_are_refused() {
    let dir = tempdir().unwrap();
    let good = dir.path().join("good.adq");
    sample_model().write(&good).unwrap();
    let bytes = std::fs::read(&good).unwrap();
    assert_eq!(&bytes[..8], MAGIC);

    let bad_magic = dir.path().join("magic.adq");
    let mut b = bytes.clone();
    b[0] = b'X';
    std::fs::write(&bad_magic, &b).unwrap();
    assert!(ArchiveReader::open(&bad_magic).is_err());

    let bad_version = dir.path().join("version.adq");
    let mut b = bytes.clone();
    b[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&bad_version, &b).unwrap();
    assert!(ArchiveReader::open(&bad_version).unwrap_err().to_string().contains("archive format 99"));

    let truncated = dir.path().join("short.adq");
    std::fs::write(&truncated, &bytes[..bytes.len() - 9]).unwrap();
    assert!(ArchiveReader::open(&truncated).is_err() || CalibratedModel::read(&truncated).is_err());

    let mut f = std::fs::OpenOptions::new().write(true).open(&good).unwrap();
    f.seek(SeekFrom::Start(12)).unwrap();
    f.write_all(&u64::MAX.to_le_bytes()).unwrap();
    drop(f);
    assert!(ArchiveReader::open(&good).is_err());
}

#[test]
fn archive_meta_survives_json() {
    let meta = sample_model().meta;
    let text = serde_json::to_string_pretty(&meta).unwrap();
    let back: ArchiveMeta = serde_json::from_str(&text).unwrap();
    assert_eq!(back, meta);
    assert_eq!(back.variance_explained.to_bits(), meta.variance_explained.to_bits());
}
