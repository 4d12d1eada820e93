use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
}

#[test]
fn bragg_angle_reference_values() {
    // d = lambda: sin(theta) = 1/2 exactly.
    assert_close(bragg_angle(1.5406, 1.5406).unwrap(), 60.0, 1e-12);
    // Frozen from direct evaluation of 2 asin(lambda / 2d).
    assert_close(bragg_angle(3.354, CU_KA1).unwrap(), 26.554825, 1e-5);
    assert_close(bragg_angle(2.338, CU_KA1).unwrap(), 38.473175, 1e-5);
    assert_close(bragg_angle(4.73, CU_KA1).unwrap(), 18.745197, 1e-5);
}

#[test]
fn bragg_angle_rejects_unreachable_spacing() {
    assert!(matches!(bragg_angle(0.7, CU_KA1), Err(Error::Domain(_))));
    // Exactly lambda/2 has no solution below 180 degrees either.
    assert!(matches!(bragg_angle(CU_KA1 / 2.0, CU_KA1), Err(Error::Domain(_))));
    assert!(bragg_angle(CU_KA1 / 2.0 + 1e-9, CU_KA1).unwrap() < 180.0);
}

#[test]
fn pseudo_voigt_profile_anchors() {
    for eta in [0.0, 0.3, 1.0] {
        assert_close(pseudo_voigt(10.0, 10.0, 0.5, eta).unwrap(), 1.0, 1e-12);
        // FWHM definition holds for both mixture components.
        assert_close(pseudo_voigt(10.25, 10.0, 0.5, eta).unwrap(), 0.5, 1e-12);
        assert_close(pseudo_voigt(9.75, 10.0, 0.5, eta).unwrap(), 0.5, 1e-12);
    }
    // Pure Gaussian one FWHM from center: exp(-4 ln 2) = 2^-4.
    assert_close(pseudo_voigt(10.5, 10.0, 0.5, 0.0).unwrap(), 0.0625, 1e-12);
    assert!(matches!(pseudo_voigt(0.0, 0.0, 0.0, 0.5), Err(Error::Domain(_))));
    assert!(matches!(pseudo_voigt(0.0, 0.0, 0.5, 1.5), Err(Error::Domain(_))));
}

#[test]
fn lattice_trajectory_examples() {
    let peaks = default_peaks();
    let al = &peaks[2];
    for soc in [0.0, 0.33, 1.0] {
        for branch in [Branch::Charge, Branch::Discharge] {
            assert_eq!(lattice_trajectory(al, soc, branch).unwrap(), al.d0);
        }
    }
    let nmc = &peaks[0];
    assert_eq!(lattice_trajectory(nmc, 0.0, Branch::Charge).unwrap(), nmc.d0);

    let custom = PeakSpec {
        phase_label: "x".into(),
        d0: 4.7,
        amplitude: 1.0,
        fwhm0: 0.2,
        eta: 0.5,
        soc_shift_coeff: 0.02,
        hysteresis_offset: 0.005,
        rate_broadening_coeff: 0.0,
    };
    assert_close(lattice_trajectory(&custom, 1.0, Branch::Discharge).unwrap(), 4.725, 1e-12);
    assert!(matches!(lattice_trajectory(&custom, 1.2, Branch::Charge), Err(Error::Domain(_))));
}

#[test]
fn voltage_curve_anchors_and_overpotential() {
    let (v_min, v_max) = (2.6, 4.2);
    assert_close(voltage_curve(0.0, Branch::Discharge, CRate::C10, v_min, v_max).unwrap(), v_min, 1e-12);
    assert_close(voltage_curve(1.0, Branch::Charge, CRate::C10, v_min, v_max).unwrap(), v_max, 1e-12);

    let gap = |rate| {
        voltage_curve(0.5, Branch::Charge, rate, v_min, v_max).unwrap()
            - voltage_curve(0.5, Branch::Discharge, rate, v_min, v_max).unwrap()
    };
    assert!(gap(CRate::C10) > 0.0);
    assert!(gap(CRate::C02) > 0.0);
    assert!(gap(CRate::C10) > gap(CRate::C02));
}

#[test]
fn voltage_curve_is_strictly_monotone_and_bounded() {
    let (v_min, v_max) = (2.6, 4.2);
    for rate in [CRate::C02, CRate::C10] {
        for branch in [Branch::Charge, Branch::Discharge] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=200 {
                let soc = i as f64 / 200.0;
                let v = voltage_curve(soc, branch, rate, v_min, v_max).unwrap();
                assert!(v > prev, "not strictly increasing at soc {soc}");
                assert!((v_min..=v_max).contains(&v));
                prev = v;
            }
        }
    }
}

fn noise_free_cfg() -> SynthConfig {
    SynthConfig { background: [0.0, 0.0, 0.0], ..SynthConfig::default() }
}

#[test]
fn render_static_al_peak_is_state_independent() {
    let peaks = vec![default_peaks()[2].clone()];
    let cfg = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let reference = render_pattern(
        &peaks,
        CellState { soc: 0.0, branch: Branch::Charge, rate: CRate::C02 },
        &cfg,
        0.0,
        &mut rng,
    )
    .unwrap();
    for (soc, branch, rate) in [
        (1.0, Branch::Charge, CRate::C10),
        (0.5, Branch::Discharge, CRate::C02),
        (0.25, Branch::Discharge, CRate::C10),
    ] {
        let s = render_pattern(&peaks, CellState { soc, branch, rate }, &cfg, 0.0, &mut rng).unwrap();
        assert_eq!(s.intensity, reference.intensity);
    }
}

#[test]
fn render_nmc_peak_shifts_with_soc() {
    let peaks = vec![default_peaks()[0].clone()];
    let cfg = noise_free_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let argmax = |v: &[f64]| -> usize {
        v.iter().enumerate().fold((0, f64::MIN), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc }).0
    };
    let s0 = render_pattern(
        &peaks,
        CellState { soc: 0.0, branch: Branch::Charge, rate: CRate::C10 },
        &cfg,
        0.0,
        &mut rng,
    )
    .unwrap();
    let s1 = render_pattern(
        &peaks,
        CellState { soc: 1.0, branch: Branch::Charge, rate: CRate::C10 },
        &cfg,
        0.0,
        &mut rng,
    )
    .unwrap();
    let shift = argmax(&s0.intensity) as isize - argmax(&s1.intensity) as isize;
    assert!(shift.abs() >= 2, "argmax moved only {shift} bins");
}

#[test]
fn render_is_deterministic_for_fixed_seed() {
    let peaks = default_peaks();
    let cfg = SynthConfig::default();
    let state = CellState { soc: 0.7, branch: Branch::Discharge, rate: CRate::C10 };
    let mut rng1 = ChaCha8Rng::seed_from_u64(99);
    let mut rng2 = ChaCha8Rng::seed_from_u64(99);
    let a = render_pattern(&peaks, state, &cfg, 0.05, &mut rng1).unwrap();
    let b = render_pattern(&peaks, state, &cfg, 0.05, &mut rng2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn render_rejects_peak_outside_guard_band() {
    let mut peak = default_peaks()[2].clone();
    peak.d0 = 1.3; // ~72.6 degrees, far beyond the 40 degree grid edge
    let cfg = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = render_pattern(
        &[peak],
        CellState { soc: 0.0, branch: Branch::Charge, rate: CRate::C02 },
        &cfg,
        0.0,
        &mut rng,
    );
    assert!(matches!(r, Err(Error::Domain(_))));
}

#[test]
fn generate_dataset_mode_balance_and_labels() {
    let protocol = CellProtocol::new(CRate::C10, 4000, 42);
    let ds = generate_dataset(&protocol, &default_peaks(), &SynthConfig::default()).unwrap();
    assert_eq!(ds.records.len(), 4000);
    assert_eq!(ds.mode_counts(), [1000, 1000, 1000, 1000]);
    for r in &ds.records {
        assert!(r.voltage >= protocol.v_min && r.voltage <= protocol.v_max);
        assert!(r.intensity.iter().all(|&v| v >= 0.0));
        assert_eq!(r.mode, Mode::from_state(r.soc, branch_of(r)));
    }
    assert_eq!(Mode::from_state(0.25, Branch::Charge), Mode::ChargeFirstHalf);
    assert_eq!(Mode::from_state(0.25, Branch::Discharge), Mode::DischargeSecondHalf);
}

fn branch_of(r: &SampleRecord) -> Branch {
    match r.mode {
        Mode::ChargeFirstHalf | Mode::ChargeSecondHalf => Branch::Charge,
        _ => Branch::Discharge,
    }
}

#[test]
fn generate_dataset_is_seed_deterministic() {
    let protocol = CellProtocol::new(CRate::C02, 40, 7);
    let peaks = default_peaks();
    let cfg = SynthConfig::default();
    let a = generate_dataset(&protocol, &peaks, &cfg).unwrap();
    let b = generate_dataset(&protocol, &peaks, &cfg).unwrap();
    assert_eq!(a, b);
    let mut other = protocol.clone();
    other.seed = 8;
    let c = generate_dataset(&other, &peaks, &cfg).unwrap();
    assert_ne!(a, c);
}

#[test]
fn graphite_peak_is_broader_at_fast_rate() {
    let peaks = vec![default_peaks()[1].clone()];
    let cfg = noise_free_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &(soc, branch) in &[
        (0.0, Branch::Charge),
        (0.5, Branch::Charge),
        (1.0, Branch::Charge),
        (0.5, Branch::Discharge),
    ] {
        let mut width_at = |rate| {
            let s = render_pattern(&peaks, CellState { soc, branch, rate }, &cfg, 0.0, &mut rng)
                .unwrap();
            let max = s.intensity.iter().cloned().fold(f64::MIN, f64::max);
            s.intensity.iter().filter(|&&v| v > max / 2.0).count()
        };
        assert!(
            width_at(CRate::C10) > width_at(CRate::C02),
            "half-height width not larger at 1.0C for soc {soc}"
        );
    }
}

#[test]
fn dataset_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let peaks = default_peaks();
    let mut p1 = CellProtocol::new(CRate::C10, 8, 3);
    p1.noise_scale = 0.02;
    let p2 = CellProtocol::new(CRate::C02, 6, 4);
    let d1 = generate_dataset(&p1, &peaks, &cfg).unwrap();
    let d2 = generate_dataset(&p2, &peaks, &cfg).unwrap();
    let manifest =
        io::write_dataset_dir(dir.path(), &cfg, &peaks, &[(p1.clone(), d1.clone()), (p2, d2)])
            .unwrap();
    assert_eq!(manifest.runs.len(), 2);
    assert_eq!(manifest.runs[0].rows, 8);

    let (manifest2, merged) = io::read_dataset_dir(dir.path()).unwrap();
    assert_eq!(manifest2.peaks, peaks);
    assert_eq!(merged.records.len(), 14);
    assert_eq!(merged.two_theta.len(), cfg.grid.n);
    for (orig, loaded) in d1.records.iter().zip(merged.records.iter()) {
        assert_eq!(orig.mode, loaded.mode);
        assert_eq!(orig.rate, loaded.rate);
        assert!((orig.voltage - loaded.voltage).abs() <= 1e-9);
        assert!((orig.soc - loaded.soc).abs() <= 1e-9);
        assert!((orig.t - loaded.t).abs() <= 1e-9);
        for (a, b) in orig.intensity.iter().zip(loaded.intensity.iter()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn csv_writes_are_byte_identical_for_same_seed() {
    let cfg = SynthConfig::default();
    let peaks = default_peaks();
    let protocol = CellProtocol::new(CRate::C10, 10, 21);
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&protocol, &peaks, &cfg).unwrap();
        io::write_dataset_dir(dir.path(), &cfg, &peaks, &[(protocol.clone(), ds)]).unwrap();
        bytes.push((
            std::fs::read(dir.path().join("data_1.0C.csv")).unwrap(),
            std::fs::read(dir.path().join(io::MANIFEST_FILE)).unwrap(),
        ));
    }
    assert_eq!(bytes[0], bytes[1]);
}
