use super::*;
use crate::constants::TWO_PI;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const W: f64 = TWO_PI * 15.82e6;
const A: f64 = 26.20;
const UDC: f64 = 60.0;

fn sim() -> SimulatedCoefficients {
    SimulatedCoefficients { q_per_volt: [0.01173, -0.01171, 0.0], a_per_volt: [-1.27e-5, -1.27e-5, 2.54e-5] }
}

fn rf_inputs() -> Vec<f64> {
    (0..9).map(|i| 0.5 + 0.1 * i as f64).collect()
}

fn dc_inputs() -> Vec<f64> {
    (0..8).map(|i| 20.0 + 10.0 * i as f64).collect()
}

#[test]
fn radial_exact_recovery() {
    let s = synthetic_radial(&sim(), 0, W, A, UDC, 0.9, 0.002, &rf_inputs(), 1e-3).unwrap();
    let f = fit_radial(&s, &sim(), 0, A, UDC).unwrap();
    assert!((f.eta - 0.9).abs() < 1e-9 * 0.9, "{f:?}");
    assert!((f.b - 0.002).abs() < 1e-9 * 0.002, "{f:?}");
    assert!(f.reduced_chi2 < 1e-12 && !f.degenerate);
    let s = synthetic_radial(&sim(), 1, W, A, UDC, 1.0, 0.0, &rf_inputs(), 1e-3).unwrap();
    let f = fit_radial(&s, &sim(), 1, A, UDC).unwrap();
    assert!((f.eta - 1.0).abs() <= f.eta_sigma() && f.b.abs() <= f.b_sigma());
}

#[test]
fn axial_exact_recovery_and_offset_shift() {
    let s = synthetic_axial(&sim(), W, 0.92, 0.001, &dc_inputs(), 1e-3).unwrap();
    let f = fit_axial(&s, &sim()).unwrap();
    assert!((f.eta - 0.92).abs() < 1e-12 && (f.b - 0.001).abs() < 1e-14, "{f:?}");
    let delta = 1e12;
    let mut shifted = s.clone();
    for x in &mut shifted.samples {
        x.omega = (x.omega * x.omega + delta).sqrt();
    }
    let g = fit_axial(&shifted, &sim()).unwrap();
    assert!((g.b - f.b - 4.0 * delta / (W * W)).abs() < 1e-12, "{} {}", g.b, f.b);
    assert!((g.eta - f.eta).abs() < 1e-9);
}

#[test]
fn axial_without_voltage_dependence_is_flagged() {
    let s = synthetic_axial(&sim(), W, 0.0, 0.002, &dc_inputs(), 1e-3).unwrap();
    let f = fit_axial(&s, &sim()).unwrap();
    assert!(f.degenerate && f.eta.abs() < 1e-9 && (f.b - 0.002).abs() < 1e-12);
}

#[test]
fn closed_form_matches_iterative_machinery() {
    let mut s = synthetic_axial(&sim(), W, 0.92, 0.001, &dc_inputs(), 2e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 1.0).unwrap();
    for x in &mut s.samples {
        x.omega += x.sigma_omega * noise.sample(&mut rng);
    }
    let f = fit_axial(&s, &sim()).unwrap();
    let rows = axial_rows(&s, &sim());
    let eval = |p: &[f64; 2]| {
        let r = rows.iter().map(|(x, y, sg)| (x[0] * p[0] + x[1] * p[1] - y) / sg).collect();
        let j = rows.iter().map(|(x, _, sg)| [x[0] / sg, x[1] / sg]).collect();
        (r, j)
    };
    let (p, cov, _, _) = gauss_newton([1.0, 0.0], &eval, 100).unwrap();
    assert!((p[0] - f.eta).abs() < 1e-10 * f.eta.abs() && (p[1] - f.b).abs() < 1e-10 * f.b.abs());
    for a in 0..2 {
        for b in 0..2 {
            assert!((cov[a][b] - f.covariance[a][b]).abs() <= 1e-8 * f.covariance[a][a].abs().max(f.covariance[b][b].abs()));
        }
    }
}

#[test]
fn noisy_fits_are_consistent_and_calibrated() {
    let truth = (0.96, 0.002);
    let clean = synthetic_radial(&sim(), 0, W, A, UDC, truth.0, truth.1, &rf_inputs(), 2e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut etas = Vec::new();
    let mut sigma = 0.0;
    for _ in 0..200 {
        let mut s = clean.clone();
        for x in &mut s.samples {
            x.omega += x.sigma_omega * noise.sample(&mut rng);
        }
        let f = fit_radial(&s, &sim(), 0, A, UDC).unwrap();
        sigma += f.eta_sigma() / 200.0;
        etas.push(f.eta);
    }
    let n = etas.len() as f64;
    let mean = etas.iter().sum::<f64>() / n;
    let spread = (etas.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - truth.0).abs() < 3.0 * spread / n.sqrt(), "mean {mean} spread {spread}");
    assert!((spread / sigma - 1.0).abs() < 0.3, "spread {spread} reported {sigma}");
}

#[test]
fn series_validation() {
    let s = |v: &[f64]| {
        MeasurementSeries::new(
            SeriesKind::DcVoltage,
            W,
            v.iter().map(|&u| Sample { voltage_v: u, omega: 1e6, sigma_omega: 1e3 }).collect(),
        )
    };
    assert!(matches!(s(&[1.0, 2.0]), Err(FitError::InsufficientSamples { .. })));
    assert!(matches!(s(&[1.0, 2.0, 2.0]), Err(FitError::InvalidSeries(_))));
    let ok = s(&[1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(fit_radial(&ok, &sim(), 0, A, UDC), Err(FitError::WrongKind { .. })));
    let mut bad = ok.clone();
    bad.samples[0].sigma_omega = 0.0;
    assert!(bad.validate().is_err());
}

#[test]
fn resonator_amplification_cases() {
    let unit = ResonatorParams { q: Measured::exact(1.0), r_ohm: Measured::exact(1.0), p_w: Measured::exact(0.5), u_in_v: Measured::exact(1.0) };
    let a = resonator_amplification(&unit).unwrap();
    assert!((a.kappa - 1.0).abs() < 1e-15 && (a.a - 1.0).abs() < 1e-15 && a.sigma_a == 0.0);

    let p = power_for_amplification(26.20, 82.91, 5.0, 1.0);
    let measured = ResonatorParams { q: Measured::new(82.91, 0.83), r_ohm: Measured::new(5.0, 2.0), p_w: Measured::exact(p), u_in_v: Measured::exact(1.0) };
    let a = resonator_amplification(&measured).unwrap();
    assert!((a.kappa - (82.91f64 * 5.0).sqrt()).abs() < 1e-12 && (a.kappa - 20.3605).abs() < 1e-4);
    assert!((a.a - 26.20).abs() < 1e-12);
    assert!((a.sigma_a / a.a - 0.20).abs() < 0.005, "{}", a.sigma_a / a.a);

    let scaled = ResonatorParams { u_in_v: Measured::exact(2.5), ..measured };
    let b = resonator_amplification(&scaled).unwrap();
    assert_eq!(b.a, a.a / 2.5);
    assert!(resonator_amplification(&ResonatorParams { q: Measured::exact(-1.0), ..unit }).is_err());
}

fn fit_with(eta: f64, b: f64) -> FitResult {
    FitResult { eta, b, covariance: [[0.19f64.powi(2), 0.0], [0.0, 1e-8]], reduced_chi2: 1.0, iterations: 1, degenerate: false }
}

#[test]
fn comparison_report() {
    let (r1, r2, ax) = (fit_with(0.96, 0.0100), fit_with(0.95, 0.010058), fit_with(0.92, 0.001));
    let rep = compare_to_simulation([Some(&r1), Some(&r2)], Some(&ax));
    assert!(rep.axes.iter().all(|c| c.verdict == Verdict::Weaker));
    assert!((rep.b_rad_relative_difference.unwrap() - 0.0058 / 1.0029).abs() < 1e-3);
    assert!((rep.b_rad_average.unwrap() - 0.010029).abs() < 1e-12);
    assert!(rep.summary.contains("weaker than simulation") && rep.summary.contains("negligible"));
    let one = compare_to_simulation([None, None], Some(&fit_with(1.0, 0.0)));
    assert_eq!(one.axes[0].verdict, Verdict::Consistent);
    assert!(one.summary.contains("consistent with simulation"));
    let far = compare_to_simulation([Some(&r1), Some(&fit_with(0.95, 0.02))], None);
    assert!(far.b_rad_average.is_none());
}

#[test]
fn coefficients_from_characterization() {
    let c = TrapCharacterization {
        rf_null: [0.0; 3],
        axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        curvatures: [1.0; 3],
        omega: [None; 3],
        mathieu_q: [0.3, -0.3, 0.0],
        mathieu_a: [-0.001, -0.001, 0.002],
        stable: [true; 3],
        depth_ev: None,
        saddle: None,
    };
    let s = SimulatedCoefficients::from_characterization(&c, &DriveConfig::default()).unwrap();
    assert!((s.q_per_volt[0] - 0.01).abs() < 1e-15 && (s.a_per_volt[2] - 0.002 / 60.0).abs() < 1e-18);
}

proptest::proptest! {
    #[test]
    fn exact_recovery_anywhere(eta in 0.5f64..1.5, b in 0.0f64..0.01, axis in 0usize..2) {
        let s = synthetic_radial(&sim(), axis, W, A, UDC, eta, b, &rf_inputs(), 1e-3).unwrap();
        let f = fit_radial(&s, &sim(), axis, A, UDC).unwrap();
        proptest::prop_assert!((f.eta - eta).abs() < 1e-9 * eta);
        proptest::prop_assert!((f.b - b).abs() < 1e-9 * b.max(1e-6));
        let s = synthetic_axial(&sim(), W, eta, b, &dc_inputs(), 1e-3).unwrap();
        let f = fit_axial(&s, &sim()).unwrap();
        proptest::prop_assert!((f.eta - eta).abs() < 1e-9 * eta);
        let c = f.covariance;
        proptest::prop_assert!(c[0][1] == c[1][0] && c[0][0] >= 0.0 && c[1][1] >= 0.0 && c[0][0] * c[1][1] >= c[0][1] * c[0][1] * (1.0 - 1e-9));
    }

    #[test]
    fn amplification_is_homogeneous_in_input(s in 0.1f64..10.0) {
        let p = ResonatorParams { q: Measured::new(82.91, 0.83), r_ohm: Measured::new(5.0, 2.0), p_w: Measured::exact(1.0), u_in_v: Measured::exact(1.0) };
        let a = resonator_amplification(&p).unwrap();
        let b = resonator_amplification(&ResonatorParams { u_in_v: Measured::exact(s), ..p }).unwrap();
        proptest::prop_assert!((b.a * s - a.a).abs() <= 1e-12 * a.a);
    }
}
