use super::io::*;
use super::*;
use crate::constants::TWO_PI;
use crate::field_solver::analytic::AnalyticSource;
use crate::geometry::ElectrodeRole;
use crate::trap_analysis::{characteristic_exponent, characterize, stability_check, IonSpecies};

const R0: f64 = 200e-6;
const KZ: f64 = 2.0e4;
const OMEGA: f64 = TWO_PI * 15e6;

fn source() -> AnalyticSource {
    AnalyticSource::ideal_linear(R0, KZ).with("push", ElectrodeRole::Ground, |p| (-p.x, Vec3::new(1.0, 0.0, 0.0)))
}

fn u_for_q(q: f64) -> f64 {
    let sp = IonSpecies::ca40();
    q * sp.mass_kg * OMEGA * OMEGA * R0 * R0 / (2.0 * sp.charge_c)
}

fn drive(q: f64, u_dc: f64) -> DriveConfig {
    let mut dc = BTreeMap::new();
    dc.insert("dc".to_string(), u_dc);
    DriveConfig {
        omega_rf_rad_per_s: OMEGA,
        u_rf_peak_v: u_for_q(q),
        rf_electrodes: None,
        dc_voltages_v: dc,
        species: IonSpecies::ca40(),
    }
}

fn dt() -> f64 {
    max_step(OMEGA)
}

fn settings() -> AnalysisSettings {
    AnalysisSettings::new(R0).without_depth()
}

#[test]
fn free_flight_is_straight() {
    let d = drive(0.0, 0.0);
    let v = Vec3::new(1.0, -2.0, 0.5);
    let start = IonState { position: Vec3::new(1e-6, 0.0, 0.0), velocity: v, time: 0.0 };
    let traj = integrate(&source(), &d, start, 2000.0 * dt(), dt()).unwrap();
    let end = traj.last().unwrap();
    let expect = start.position + v * end.time;
    assert!((end.position - expect).norm() < 1e-12 * expect.norm());
    assert_eq!(end.velocity, v);
}

#[test]
fn step_limit_enforced() {
    let r = integrate(&source(), &drive(0.2, 1.0), IonState::at_rest(Vec3::ZERO), 1e-6, 1.01 * dt());
    assert!(matches!(r, Err(DynamicsError::InvalidStep(_))));
}

#[test]
fn static_well_spectrum_peak() {
    let d = drive(0.0, 1.0);
    let sp = IonSpecies::ca40();
    let w = (2.0 * sp.charge_c * KZ / sp.mass_kg).sqrt();
    let duration = 120.0 * TWO_PI / w;
    let traj = integrate(&source(), &d, IonState::at_rest(Vec3::new(0.0, 0.0, 1e-6)), duration, dt()).unwrap();
    let s = secular_spectrum(&traj, Vec3::Z).unwrap();
    assert!((s.secular.omega - w).abs() < s.bin_width, "{} vs {w}", s.secular.omega);
    assert!((s.secular.amplitude - 1e-6).abs() < 0.02e-6);
}

#[test]
fn synthetic_cosine_spectrum() {
    let w = 3.0e5;
    let dt = 1e-7;
    let states = (0..40000)
        .map(|i| {
            let t = i as f64 * dt;
            IonState { position: Vec3::new((w * t).cos(), 0.0, 0.0), velocity: Vec3::ZERO, time: t }
        })
        .collect();
    let traj = Trajectory { dt, rf_omega: None, states };
    let s = secular_spectrum(&traj, Vec3::X).unwrap();
    assert!((s.secular.omega - w).abs() < s.bin_width);
    assert!((s.secular.amplitude - 1.0).abs() < 1e-3);

    let short = Trajectory { dt, rf_omega: None, states: traj.states[..2000].to_vec() };
    assert!(matches!(secular_spectrum(&short, Vec3::X), Err(DynamicsError::TooShort { .. })));
}

#[test]
fn boundedness_matches_floquet() {
    for q in [0.2, 1.0] {
        let d = drive(q, 0.0);
        let start = IonState::at_rest(Vec3::new(1e-6, 1e-6, 0.0));
        let r = integrate(&source(), &d, start, 3000.0 * TWO_PI / OMEGA, dt());
        let bounded = match &r {
            Ok(t) => t.states.iter().all(|s| s.position.norm() < 50e-6),
            Err(DynamicsError::Escaped { .. }) => false,
            Err(e) => panic!("{e}"),
        };
        assert_eq!(bounded, stability_check(&[q], &[0.0])[0], "q = {q}");
    }
}

#[test]
fn time_reversal() {
    let d = drive(0.25, 1.0);
    let start = IonState { position: Vec3::new(2e-6, -1e-6, 3e-6), velocity: Vec3::new(0.3, 0.1, -0.2), time: 0.0 };
    let fwd = integrate(&source(), &d, start, 5000.0 * dt(), dt()).unwrap();
    let back = integrate(&source(), &d, *fwd.last().unwrap(), 5000.0 * dt(), -dt()).unwrap();
    let end = back.last().unwrap();
    assert!((end.position - start.position).norm() < 1e-9 * start.position.norm());
    assert!((end.velocity - start.velocity).norm() < 1e-9 * start.velocity.norm());
    assert!(end.time.abs() < 1e-15);
}

#[test]
fn second_order_convergence() {
    let d = drive(0.25, 1.0);
    let start = IonState { position: Vec3::new(2e-6, -1e-6, 3e-6), velocity: Vec3::ZERO, time: 0.0 };
    let duration = 200.0 * TWO_PI / OMEGA;
    let end = |k: f64| integrate(&source(), &d, start, duration, dt() / k).unwrap().last().unwrap().position;
    let (a, b, c) = (end(1.0), end(2.0), end(4.0));
    let ratio = (a - b).norm() / (b - c).norm();
    assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
}

#[test]
fn secular_energy_conserved() {
    let q = 0.25;
    let d = drive(q, 0.0);
    let w = 0.5 * OMEGA * (0.5 * q * q).sqrt();
    let period = TWO_PI / w;
    let traj = integrate(&source(), &d, IonState::at_rest(Vec3::new(1e-6, 0.0, 0.0)), 1000.0 * period, dt()).unwrap();
    let n = traj.states.len();
    let window = (20.0 * period / dt()) as usize;
    let peak = |s: &[IonState]| s.iter().map(|s| s.position.x.abs()).fold(0.0, f64::max);
    let (first, last) = (peak(&traj.states[..window]), peak(&traj.states[n - window..]));
    assert!((last / first - 1.0).abs() < 0.01, "{first} {last}");
}

#[test]
fn radial_spectrum_matches_characterization() {
    let d = drive(0.25, 1.0);
    let c = characterize(&source(), &d, &settings()).unwrap();
    let w = c.omega[0].unwrap();
    let traj = integrate(&source(), &d, IonState::at_rest(Vec3::new(1e-6, 0.0, 0.0)), 110.0 * TWO_PI / w, dt()).unwrap();
    let s = secular_spectrum(&traj, Vec3::X).unwrap();
    assert!((s.secular.omega / w - 1.0).abs() < 0.02 + s.bin_width / w, "{} vs {w}", s.secular.omega);
    assert!(!s.sidebands.is_empty() && s.sidebands.iter().all(|p| p.amplitude > 0.0));
}

#[test]
fn micromotion_follows_first_order_estimate() {
    let q = 0.23;
    let d = drive(q, 1.0);
    let none = micromotion_amplitude(&source(), &d, &BTreeMap::new(), &settings(), &MicromotionOptions::default()).unwrap();
    assert!(none.iter().all(|a| *a < 1e-10), "{none:?}");

    // push so the ion sits 1 um off the null along x
    let c = characterize(&source(), &d, &settings()).unwrap();
    let k = c.curvatures[0];
    let push = 1e-6 * k / IonSpecies::ca40().charge_c;
    let offsets = BTreeMap::from([("push".to_string(), push)]);
    let amp = micromotion_amplitude(&source(), &d, &offsets, &settings(), &MicromotionOptions::default()).unwrap();
    let expect = 0.5 * q * 1e-6;
    assert!((amp[0] / expect - 1.0).abs() < 0.1, "{} vs {expect}", amp[0]);
}

#[test]
fn tickle_peaks_at_secular_frequency() {
    let d = drive(0.2, 1.0);
    let c = characterize(&source(), &d, &settings()).unwrap();
    let w = 0.5 * OMEGA * characteristic_exponent(c.mathieu_q[0], c.mathieu_a[0]).unwrap();
    let cfg = TickleConfig::around("push", 0.03, w, 0.04, 17, 200.0);
    let curve = tickle_scan(&source(), &d, &settings(), &cfg).unwrap();
    let best = tickle_peak(&curve).unwrap();
    assert!((best.omega - w).abs() <= cfg.omega_step, "{} vs {w}", best.omega);

    let flat = tickle_scan(&source(), &d, &settings(), &TickleConfig { amplitude_v: 0.0, ..cfg.clone() }).unwrap();
    assert!(flat.iter().all(|p| p.response_j < 1e-40));

    let too_big = TickleConfig { amplitude_v: 1.0, ..cfg };
    assert!(matches!(tickle_scan(&source(), &d, &settings(), &too_big), Err(DynamicsError::InvalidConfig(_))));
}

#[test]
fn trajectory_round_trips() {
    let traj = integrate(&source(), &drive(0.2, 1.0), IonState::at_rest(Vec3::new(1e-6, 0.0, 0.0)), 50.0 * dt(), dt()).unwrap();
    let back = decode_trajectory(&encode_trajectory(&traj)).unwrap();
    assert_eq!(back, traj);
    let mut bad = encode_trajectory(&traj);
    bad.pop();
    assert!(decode_trajectory(&bad).is_err());
    let csv = trajectory_to_csv(&traj);
    assert!(csv.starts_with("t,x,y,z,vx,vy,vz\n"));
    assert_eq!(csv.lines().count(), traj.states.len() + 1);
}
