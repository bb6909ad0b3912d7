use adequacy::thermalbox::{
    generate_rolbs, make_synthetic_observation, run_network, sample_design, simulate, simulate_ensemble, BoundarySeries,
    BoxVariant, BoxVariantSpec, RcNetwork,
};
use adequacy::ParamBounds;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const DT: f64 = 900.0;

fn spec(variant: BoxVariant) -> BoxVariantSpec {
    BoxVariantSpec::truth(variant)
}

/// Temperature rise above a constant ambient once the network has settled.
fn steady_rise(net: &RcNetwork, pulse: f64) -> f64 {
    let days = 60;
    let b = BoundarySeries::constant(96 * days, 10.0, 0.0, 0.0, 0.0, pulse);
    let t = run_network(net, &b, DT, 10.0, None).unwrap().temperatures;
    let (a, z) = (t[t.len() - 97], t[t.len() - 1]);
    assert!((a - z).abs() < 1e-6 * z.abs(), "not settled: {a} vs {z}");
    z - 10.0
}

/// Steady air-temperature rise from the nodal heat balance G·T = q, with the
/// heating split between the air and the radiant node.
fn balance_rise(net: &RcNetwork, pulse: f64) -> f64 {
    let n = net.nodes();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for &(i, j, c) in &net.links {
        g[(i, i)] += c;
        g[(j, j)] += c;
        g[(i, j)] -= c;
        g[(j, i)] -= c;
    }
    for &(i, c) in &net.ambient {
        g[(i, i)] += c;
    }
    let mut q = DVector::zeros(n);
    q[0] += (1.0 - net.radiative_fraction) * pulse;
    q[net.radiant_node] += net.radiative_fraction * pulse;
    g.lu().solve(&q).unwrap()[0]
}

#[test]
fn equilibrium_is_preserved() {
    for v in BoxVariant::ALL {
        let b = BoundarySeries::constant(500, 17.5, 0.0, 3.0, 90.0, 0.0);
        let t = simulate(&spec(v), &b, 17.5).unwrap();
        assert!(t.iter().all(|x| (x - 17.5).abs() < 1e-9), "{}", v.name());
    }
}

#[test]
fn doubling_conductances_halves_the_rise() {
    for v in BoxVariant::ALL {
        let net = spec(v).network();
        let rise = steady_rise(&net, 80.0);
        let oracle = balance_rise(&net, 80.0);
        assert!((rise - oracle).abs() < 1e-3 * oracle, "{}: {rise} vs {oracle}", v.name());
        let mut doubled = net.clone();
        doubled.scale_conductances(2.0);
        let ratio = steady_rise(&doubled, 80.0) / rise;
        assert!((ratio - 0.5).abs() < 0.01, "{}: ratio {ratio}", v.name());
    }
}

#[test]
fn no_air_exchange_matches_the_sealed_variant() {
    let sealed = spec(BoxVariant::MultiLayer).network();
    let mut leaky = spec(BoxVariant::MultiLayerInfiltration).network();
    leaky.infiltration = 0.0;
    let b = BoundarySeries::synthetic(384, 15, 8, 80.0).unwrap();
    let a = run_network(&sealed, &b, DT, 12.0, None).unwrap();
    let c = run_network(&leaky, &b, DT, 12.0, None).unwrap();
    assert_eq!(a.temperatures, c.temperatures);
}

#[test]
fn smallest_crack_stays_within_noise_of_sealed_box() {
    let b = BoundarySeries::synthetic(384, 15, 21, 80.0).unwrap();
    let sealed = simulate(&spec(BoxVariant::MultiLayer), &b, b.external_temp[0]).unwrap();
    let mut values = BoxVariant::MultiLayerInfiltration.truth();
    values[0] = BoxVariant::MultiLayerInfiltration.parameters()[0].lo;
    let small = BoxVariantSpec::new(BoxVariant::MultiLayerInfiltration, values, 15).unwrap();
    let leaky = simulate(&small, &b, b.external_temp[0]).unwrap();
    let obs = make_synthetic_observation(&spec(BoxVariant::MultiLayerInfiltration), &b, 0.01, 3).unwrap();
    let noise_sd = obs.noise_variance.sqrt();
    let diff = sealed.iter().zip(&leaky).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / sealed.len() as f64;
    assert!(diff.sqrt() < noise_sd, "rms difference {} vs noise {noise_sd}", diff.sqrt());
    assert!(diff > 0.0);
}

#[test]
fn energy_balance_closes() {
    for v in [BoxVariant::SingleLayer, BoxVariant::MultiLayer] {
        let net = spec(v).network();
        let pulses = generate_rolbs(80.0, 1024, 4).unwrap();
        let b = BoundarySeries { heat_pulses: pulses, ..BoundarySeries::constant(1024, 5.0, 0.0, 0.0, 0.0, 0.0) };
        let e = run_network(&net, &b, DT, 5.0, None).unwrap().energy;
        let residual = e.heating - e.losses - e.stored_change;
        assert!(residual.abs() < 0.01 * e.heating, "{}: {e:?}", v.name());
    }
}

#[test]
fn better_insulation_keeps_the_box_warmer() {
    let bounds = &BoxVariant::MultiLayer.parameters()[2];
    let mut last = f64::INFINITY;
    for i in 0..=6 {
        let mut values = BoxVariant::MultiLayer.truth();
        values[2] = bounds.from_unit(i as f64 / 6.0);
        let net = BoxVariantSpec::new(BoxVariant::MultiLayer, values, 15).unwrap().network();
        let rise = balance_rise(&net, 80.0);
        assert!(rise <= last, "rise increased with ins_k");
        last = rise;
    }
}

#[test]
fn rolbs_duty_cycle_is_near_one_half() {
    for seed in 0..20 {
        let s = generate_rolbs(80.0, 1024, seed).unwrap();
        assert_eq!(s.len(), 1024);
        assert!(s.iter().all(|v| *v == 0.0 || *v == 80.0));
        let duty = s.iter().filter(|v| **v > 0.0).count() as f64 / 1024.0;
        assert!((0.4..=0.6).contains(&duty), "seed {seed}: duty {duty}");
    }
    assert_eq!(generate_rolbs(80.0, 1024, 1).unwrap(), generate_rolbs(80.0, 1024, 1).unwrap());
    assert_ne!(generate_rolbs(80.0, 1024, 1).unwrap(), generate_rolbs(80.0, 1024, 2).unwrap());
}

#[test]
fn observation_noise_has_the_requested_ratio() {
    let b = BoundarySeries::synthetic(4000, 15, 5, 80.0).unwrap();
    let truth = spec(BoxVariant::MultiLayerInfiltration);
    let clean = make_synthetic_observation(&truth, &b, 0.0, 1).unwrap();
    assert_eq!(clean.y, clean.truth);
    assert_eq!(clean.noise_variance, 0.0);

    let noisy = make_synthetic_observation(&truth, &b, 0.01, 1).unwrap();
    assert_eq!(noisy.truth, clean.truth);
    let n = noisy.y.len() as f64;
    let mean = noisy.truth.iter().sum::<f64>() / n;
    let signal = noisy.truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let resid = noisy.y.iter().zip(&noisy.truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    assert!((noisy.noise_variance / signal - 0.01).abs() < 1e-12);
    assert!((resid / noisy.noise_variance - 1.0).abs() < 0.2, "{resid} vs {}", noisy.noise_variance);
    assert!(make_synthetic_observation(&truth, &b, -0.1, 1).is_err());
}

#[test]
fn ensemble_columns_are_single_runs() {
    let b = BoundarySeries::synthetic(96, 15, 2, 80.0).unwrap();
    let bounds = BoxVariant::SingleLayer.parameters();
    let design = sample_design(&bounds, 4, 9).unwrap();
    let y = simulate_ensemble(BoxVariant::SingleLayer, &design, &b, 15, 10.0).unwrap();
    assert_eq!(y.shape(), (96, 4));
    let unit: Vec<f64> = design.row(2).iter().copied().collect();
    let one = simulate(&BoxVariantSpec::from_unit(BoxVariant::SingleLayer, &unit, 15).unwrap(), &b, 10.0).unwrap();
    assert_eq!(y.column(2).iter().copied().collect::<Vec<_>>(), one);
}

#[test]
fn quartile_design() {
    let bounds = vec![ParamBounds::new("a", "-", 0.0, 1.0).unwrap()];
    let d = sample_design(&bounds, 4, 0).unwrap();
    let mut strata: Vec<usize> = d.column(0).iter().map(|v| (v * 4.0).floor() as usize).collect();
    strata.sort();
    assert_eq!(strata, vec![0, 1, 2, 3]);
}

fn strata(col: &[f64], m: usize) -> Vec<usize> {
    let mut s: Vec<usize> = col.iter().map(|v| (v * m as f64).floor() as usize).collect();
    s.sort();
    s
}

proptest! {
    #[test]
    fn design_columns_fill_every_stratum(m in 2usize..60, p in 1usize..6, seed in any::<u64>()) {
        let bounds: Vec<ParamBounds> = (0..p).map(|i| ParamBounds::new(format!("z{i}"), "-", 0.0, 1.0).unwrap()).collect();
        let a = sample_design(&bounds, m, seed).unwrap();
        let b = sample_design(&bounds, m, seed.wrapping_add(1)).unwrap();
        prop_assert_eq!(&a, &sample_design(&bounds, m, seed).unwrap());
        let all: Vec<usize> = (0..m).collect();
        for j in 0..p {
            let ca: Vec<f64> = a.column(j).iter().copied().collect();
            let cb: Vec<f64> = b.column(j).iter().copied().collect();
            prop_assert_eq!(strata(&ca, m), all.clone());
            prop_assert_eq!(strata(&cb, m), all.clone());
        }
        if m > 4 {
            prop_assert!(a != b);
        }
    }

    #[test]
    fn outputs_are_finite_across_the_design_space(unit in prop::collection::vec(0.0f64..=1.0, 6), seed in 0u64..50) {
        let b = BoundarySeries::synthetic(192, 15, seed, 80.0).unwrap();
        for v in BoxVariant::ALL {
            let n = v.parameters().len();
            let s = BoxVariantSpec::from_unit(v, &unit[..n], 15).unwrap();
            let t = simulate(&s, &b, b.external_temp[0]).unwrap();
            prop_assert!(t.iter().all(|x| x.is_finite() && *x > -40.0 && *x < 80.0));
        }
    }
}
