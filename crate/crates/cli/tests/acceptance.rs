//! Acceptance suite. Each test prints one `PASS`/`FAIL` line (straight to stderr, so it
//! shows without `--nocapture`) and then asserts every sub-check.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use trapkit::characterization_fit::*;
use trapkit::compensation::{compensate, solve_offsets, CompensationError, CompensationOptions, FiberCavity, StrayField};
use trapkit::constants::EPSILON_0;
use trapkit::dynamics::{integrate, secular_spectrum, tickle_peak, tickle_scan, IonState, MicromotionOptions, TickleConfig};
use trapkit::evaporation::trench::TrenchParams;
use trapkit::evaporation::{connectivity, coverage, deposit, facet_report, Beam, EvaporationConfig, Scene};
use trapkit::field_solver::{assemble, cache_grid, BasisFieldSet, FieldSource, GridRegion, SolverOptions};
use trapkit::geometry::primitives::{box_mesh, icosphere, icosphere_for_resolution, quad_grid};
use trapkit::geometry::{build_linear_trap, numerical_aperture, CircularStop, Electrode, ElectrodeRole, NaSampling, ParametricTrapParams, TrapGeometry};
use trapkit::trap_analysis::{characterize, find_equilibrium, is_stable, stability_boundary_q, AnalysisSettings, DriveConfig, TrapCharacterization};
use trapkit::Vec3;
use trapkit_cli::pipeline::{init_project, run_pipeline};

/// Heavy solves run one at a time to bound memory.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

struct DefaultTrap {
    geometry: TrapGeometry,
    set: BasisFieldSet,
    build_time: Duration,
}

fn default_trap() -> &'static DefaultTrap {
    static TRAP: OnceLock<DefaultTrap> = OnceLock::new();
    TRAP.get_or_init(|| {
        let t = Instant::now();
        let geometry = build_linear_trap(&ParametricTrapParams::default()).unwrap();
        let set = assemble(&geometry).unwrap().solve_all(&SolverOptions::default()).unwrap();
        DefaultTrap { geometry, set, build_time: t.elapsed() }
    })
}

fn default_characterization() -> &'static (TrapCharacterization, Duration) {
    static C: OnceLock<(TrapCharacterization, Duration)> = OnceLock::new();
    C.get_or_init(|| {
        let trap = default_trap();
        let t = Instant::now();
        let c = characterize(&trap.set, &DriveConfig::default(), &AnalysisSettings::new(trap.geometry.r0)).unwrap();
        (c, t.elapsed())
    })
}

struct Criterion {
    id: u8,
    title: &'static str,
    checks: Vec<(bool, String)>,
}

impl Criterion {
    fn new(id: u8, title: &'static str) -> Self {
        Criterion { id, title, checks: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.checks.push((ok, detail.into()));
    }

    fn within(&mut self, name: &str, value: f64, target: f64, rel: f64) {
        let ok = ((value - target) / target).abs() <= rel;
        self.check(ok, format!("{name} = {value:.4} (target {target} +- {:.0}%)", rel * 100.0));
    }

    fn finish(self) {
        let pass = self.checks.iter().all(|c| c.0);
        let details: Vec<String> = self.checks.iter().map(|(ok, d)| if *ok { d.clone() } else { format!("[x] {d}") }).collect();
        let line = format!("acceptance {:>2} {:<28} {}  {}\n", self.id, self.title, if pass { "PASS" } else { "FAIL" }, details.join("; "));
        let _ = std::io::stderr().lock().write_all(line.as_bytes());
        assert!(pass, "{line}");
    }
}

fn hz(w: Option<f64>) -> f64 {
    w.map(|w| w / TAU).unwrap_or(f64::NAN)
}

#[test]
fn criterion_01_default_trap_regression() {
    let _g = serial();
    let mut c = Criterion::new(1, "default trap regression");
    let trap = default_trap();
    let (ch, t_char) = default_characterization();
    let f = ch.omega.map(hz);
    c.within("f_rad1 MHz", f[0] / 1e6, 1.97, 0.05);
    c.within("f_rad2 MHz", f[1] / 1e6, 1.97, 0.05);
    c.within("f_ax kHz", f[2] / 1e3, 311.0, 0.05);
    c.within("depth eV", ch.depth_ev.unwrap_or(f64::NAN), 0.48, 0.10);
    let asym = ch.radial_asymmetry().unwrap_or(f64::NAN);
    c.check(asym < 0.01, format!("radial asymmetry {:.3}% (< 1%)", asym * 100.0));
    let panels = trap.set.system.len();
    c.check(panels <= 20_000, format!("{panels} panels (<= 20000)"));
    let runtime = trap.build_time + *t_char;
    c.check(runtime <= Duration::from_secs(600), format!("runtime {:.1} s (<= 600 s)", runtime.as_secs_f64()));
    c.finish();
}

fn sphere(r: f64, mesh: trapkit::geometry::SurfaceMesh) -> TrapGeometry {
    TrapGeometry::new(vec![Electrode { name: "s".into(), role: ElectrodeRole::Ground, mesh }], Vec3::new(0.0, 0.0, 10.0 * r))
}

#[test]
fn criterion_02_solver_verification() {
    let _g = serial();
    let mut c = Criterion::new(2, "solver verification");
    let t = Instant::now();
    let r = 1e-3;
    let mesh = icosphere_for_resolution(Vec3::ZERO, r, r / 20.0);
    let h = mesh.max_edge_length();
    c.check(h <= r / 20.0, format!("max edge R/{:.1}", r / h));
    let set = assemble(&sphere(r, mesh)).unwrap().solve_all(&SolverOptions::default()).unwrap();
    let exact = 4.0 * PI * EPSILON_0 * r;
    let err = (set.total_charge(0) - exact) / exact;
    c.check(err.abs() < 0.01, format!("capacitance error {:.3}%", err * 100.0));
    let mut worst = 0.0f64;
    for d in [1.5 * r, 3.0 * r, 10.0 * r] {
        let p = Vec3::new(0.3, -0.5, 0.8).normalize() * d;
        let (phi, _) = set.evaluate(&[1.0], p).unwrap();
        worst = worst.max(((phi - r / d) / (r / d)).abs());
    }
    c.check(worst < 0.01, format!("exterior potential error {:.3}%", worst * 100.0));
    drop(set);

    let a = icosphere(Vec3::ZERO, 1.0, 6);
    let b = box_mesh(Vec3::new(1.8, -0.5, -0.5), Vec3::new(2.8, 0.5, 0.5), 6);
    let g = TrapGeometry::new(
        vec![
            Electrode { name: "a".into(), role: ElectrodeRole::Ground, mesh: a },
            Electrode { name: "b".into(), role: ElectrodeRole::Ground, mesh: b },
        ],
        Vec3::new(0.0, 0.0, 5.0),
    );
    let cm = assemble(&g).unwrap().solve_all(&SolverOptions::default()).unwrap().capacitance_matrix();
    let asym = (cm[0][1] - cm[1][0]).abs() / cm[0][1].abs();
    c.check(asym < 0.01, format!("induced-charge matrix asymmetry {:.3}%", asym * 100.0));
    c.check(true, format!("runtime {:.1} s", t.elapsed().as_secs_f64()));
    c.finish();
}

#[test]
fn criterion_03_frequency_oracles_agree() {
    let _g = serial();
    let mut c = Criterion::new(3, "three frequency oracles");
    let trap = default_trap();
    let t = Instant::now();
    let drive = DriveConfig::default().with_rf(20.0);
    let settings = AnalysisSettings::new(trap.geometry.r0).without_depth();
    let ch = characterize(&trap.set, &drive, &settings).unwrap();
    let qmax = ch.mathieu_q.iter().fold(0.0f64, |m, q| m.max(q.abs()));
    c.check(qmax < 0.3, format!("|q| = {qmax:.3} (< 0.3)"));

    let null = Vec3::from_array(ch.rf_null);
    let grid = cache_grid(&trap.set, &GridRegion::cube(null, [12e-6, 12e-6, 40e-6], 2e-6)).unwrap();
    let eq = find_equilibrium(&grid, &drive, &settings).unwrap();
    let dt = TAU / (drive.omega_rf_rad_per_s * 40.0);
    let names = ["rad1", "rad2", "ax"];
    for k in 0..3 {
        let hessian = ch.omega[k].unwrap();
        let axis = Vec3::from_array(ch.axes[k]);
        let periods = 150.0;
        let traj = integrate(&grid, &drive, IonState::at_rest(eq + axis * 1e-6), periods * TAU / hessian, dt).unwrap();
        let fft = secular_spectrum(&traj, axis).unwrap().secular.omega;
        let amplitude = if k == 2 { 0.01 } else { 0.05 };
        let cfg = TickleConfig::around("dc_1", amplitude, hessian, 0.15, 61, 60.0);
        let tickle = tickle_peak(&tickle_scan(&grid, &drive, &settings, &cfg).unwrap()).unwrap().omega;
        let pairs = [(hessian, fft), (hessian, tickle), (fft, tickle)];
        let worst = pairs.iter().map(|(a, b)| (a - b).abs() / a.min(*b)).fold(0.0, f64::max);
        c.check(
            worst < 0.02,
            format!("{} hessian/fft/tickle {:.4}/{:.4}/{:.4} MHz (spread {:.2}%)", names[k], hessian / TAU / 1e6, fft / TAU / 1e6, tickle / TAU / 1e6, worst * 100.0),
        );
    }
    let runtime = trap.build_time + t.elapsed();
    c.check(runtime <= Duration::from_secs(300), format!("runtime {:.1} s (<= 300 s)", runtime.as_secs_f64()));
    c.finish();
}

#[test]
fn criterion_04_mathieu_stability() {
    let mut c = Criterion::new(4, "mathieu stability");
    c.check(is_stable(0.2, 0.0), "q = 0.2 stable");
    c.check(!is_stable(1.0, 0.0), "q = 1.0 unstable");
    let q = stability_boundary_q(0.0, 0.2, 1.0, 1e-6);
    c.check((0.90..=0.92).contains(&q), format!("boundary q = {q:.5} (in [0.90, 0.92])"));
    c.finish();
}

#[test]
fn criterion_05_fit_recovery() {
    let mut c = Criterion::new(5, "fit recovery");
    let (ch, _) = default_characterization();
    let drive = DriveConfig::default();
    let sim = SimulatedCoefficients::from_characterization(ch, &drive).unwrap();
    let w_rf = drive.omega_rf_rad_per_s;
    let amp = 26.20;
    let u_dc = 60.0;
    let rf_in: Vec<f64> = (0..9).map(|i| 0.5 + 0.1 * i as f64).collect();
    let dc: Vec<f64> = (0..8).map(|i| 20.0 + 10.0 * i as f64).collect();
    let truth = [(0.96, 0.0020), (0.95, 0.0021), (0.92, 0.0010)];
    let series = |k: usize, eta: f64, b: f64| match k {
        2 => synthetic_axial(&sim, w_rf, eta, b, &dc, 2e-3).unwrap(),
        _ => synthetic_radial(&sim, k, w_rf, amp, u_dc, eta, b, &rf_in, 2e-3).unwrap(),
    };
    let fit = |k: usize, s: &MeasurementSeries| match k {
        2 => fit_axial(s, &sim).unwrap(),
        _ => fit_radial(s, &sim, k, amp, u_dc).unwrap(),
    };

    let mut exact = 0.0f64;
    for (k, &(eta, b)) in truth.iter().enumerate() {
        let f = fit(k, &series(k, eta, b));
        exact = exact.max(((f.eta - eta) / eta).abs()).max(((f.b - b) / b).abs());
    }
    c.check(exact < 1e-9, format!("noise-free relative error {exact:.1e} (< 1e-9)"));

    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut worst_se = 0.0f64;
    let mut worst_rt = 0.0f64;
    for (k, &(eta, b)) in truth.iter().enumerate() {
        let clean = series(k, eta, b);
        let trials: Vec<FitResult> = (0..200)
            .map(|_| {
                let mut s = clean.clone();
                for x in &mut s.samples {
                    x.omega += x.sigma_omega * unit.sample(&mut rng);
                }
                fit(k, &s)
            })
            .collect();
        let n = trials.len() as f64;
        for (get, target) in [(&(|f: &FitResult| f.eta) as &dyn Fn(&FitResult) -> f64, eta), (&|f: &FitResult| f.b, b)] {
            let vals: Vec<f64> = trials.iter().map(get).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            worst_se = worst_se.max((mean - target).abs() / (sd / n.sqrt()));
        }
        worst_rt = worst_rt.max(((trials[0].eta - eta) / eta).abs());
    }
    c.check(worst_se < 3.0, format!("200 noisy trials: mean within {worst_se:.2} standard errors (< 3)"));
    c.check(worst_rt < 0.01, format!("round trip at eta = (0.96, 0.95, 0.92): worst {:.3}% (< 1%)", worst_rt * 100.0));
    c.finish();
}

#[test]
fn criterion_06_resonator() {
    let mut c = Criterion::new(6, "resonator gain");
    let a_target = 26.20;
    let p = power_for_amplification(a_target, 82.91, 5.0, 1.0);
    let params = ResonatorParams { q: Measured::new(82.91, 0.83), r_ohm: Measured::new(5.0, 2.0), p_w: Measured::exact(p), u_in_v: Measured::exact(1.0) };
    let a = resonator_amplification(&params).unwrap();
    let kappa = (82.91f64 * 5.0).sqrt();
    c.check((a.kappa - kappa).abs() < 1e-12 * kappa, format!("kappa = {:.4} = sqrt(82.91 * 5)", a.kappa));
    c.check((a.a - a_target).abs() < 1e-9, format!("A = {:.2}", a.a));
    let rel = a.sigma_a / a.a;
    c.check((rel - 0.20).abs() < 0.005, format!("sigma_A / A = {rel:.4} (~0.20)"));
    let reported = 5.25 / 26.20;
    c.check((rel - reported).abs() < 0.005, format!("consistent with 5.25 / 26.20 = {reported:.4}"));
    c.finish();
}

#[test]
fn criterion_07_stray_charge_compensation() {
    let _g = serial();
    let mut c = Criterion::new(7, "stray charge compensation");
    let trap = default_trap();
    let drive = DriveConfig::default();
    let settings = AnalysisSettings::new(trap.geometry.r0).without_depth();
    let patches = |sigma: f64| FiberCavity::default().facets(sigma).map(|s| s.to_patch().unwrap()).to_vec();
    let stray = |sigma: f64| StrayField::solve(&trap.set.system, &patches(sigma), &SolverOptions::default()).unwrap();
    let s1 = stray(50.0);
    let opts = CompensationOptions { micromotion: Some(MicromotionOptions::default()), ..Default::default() };

    let o1 = solve_offsets(&trap.set, &drive, &s1, &settings, &opts).unwrap();
    let with_drive = o1.max_abs_offset();
    let zero = solve_offsets(&trap.set, &drive, &stray(0.0), &settings, &opts).unwrap();
    let pure = |s: &StrayField| -> BTreeMap<String, f64> {
        let o = solve_offsets(&trap.set, &drive, s, &settings, &opts).unwrap();
        o.offsets_v.iter().map(|(k, v)| (k.clone(), v - zero.offsets_v[k])).collect()
    };
    let p1 = pure(&s1);
    let p2 = pure(&stray(100.0));
    let scale = p1.values().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let lin = p1.iter().map(|(k, v)| (p2[k] - 2.0 * v).abs()).fold(0.0, f64::max) / scale;
    c.check(lin < 1e-9, format!("offsets linear in sigma (rel dev {lin:.1e})"));
    c.check((0.5..=2.0).contains(&with_drive), format!("max offset {with_drive:.3e} V (target 1 V within x2)"));

    match compensate(&trap.set, &drive, &s1, &settings, &opts) {
        Ok(sol) => {
            let (before, after) = (sol.uncompensated_micromotion_m.unwrap_or(f64::NAN), sol.residual_micromotion_m.unwrap_or(f64::NAN));
            c.check(after <= 0.05 * before, format!("micromotion {after:.2e} m vs {before:.2e} m (<= 5%)"));
        }
        Err(CompensationError::NotTrapped { which, reason, .. }) => {
            c.check(false, format!("micromotion not evaluable: ion not held ({which}): {reason}"));
        }
        Err(e) => c.check(false, format!("compensation failed: {e}")),
    }
    c.finish();
}

#[test]
fn criterion_08_optical_access() {
    let _g = serial();
    let mut c = Criterion::new(8, "optical access");
    let g = &default_trap().geometry;
    let s = NaSampling::default();
    let y = numerical_aperture(g, g.center, Vec3::Y, &[], &s).unwrap();
    let z = numerical_aperture(g, g.center, Vec3::Z, &[], &s).unwrap();
    c.check((y - 0.66).abs() <= 0.03, format!("NA_y = {y:.4} (0.66 +- 0.03)"));
    c.check((z - 0.11).abs() <= 0.02, format!("NA_z = {z:.4} (0.11 +- 0.02)"));
    let stop = CircularStop::for_na(g.center, Vec3::Y, 0.05, 0.18);
    let v = numerical_aperture(g, g.center, Vec3::Y, &[stop], &s).unwrap();
    c.check((v - 0.18).abs() < 1e-4, format!("viewport-limited NA_y = {v:.6} (0.18)"));
    c.finish();
}

#[test]
fn criterion_09_evaporation() {
    let _g = serial();
    let mut c = Criterion::new(9, "evaporation");
    let t0 = 2e-6;
    let mut worst = 0.0f64;
    for alpha in [0.0f64, 0.3, 0.7, 1.1, 1.5] {
        let corners = [Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(-1.0, 1.0, 0.0)];
        let (s, co) = alpha.sin_cos();
        let plate = quad_grid(corners, 4, 4).map_vertices(|p| Vec3::new(p.x * co + p.z * s, p.y, -p.x * s + p.z * co));
        let cov = deposit(&Scene::single("plate", plate), &[Beam { toward_source: Vec3::Z, thickness_m: t0 }]);
        for &t in &cov.thickness_m {
            worst = worst.max((t - t0 * alpha.cos()).abs() / t0);
        }
    }
    c.check(worst <= 1e-12, format!("inclined plate cosine law, max dev {worst:.1e} (<= 1e-12)"));

    let g = &default_trap().geometry;
    let cfg = EvaporationConfig::default();
    let cov = coverage(&Scene::from_geometry(g), &cfg).unwrap();
    let facets = facet_report(g, &cov, 200e-6).unwrap();
    let mean_nm = facets.overall.mean_m * 1e9;
    c.within("ion-facing facet nm", mean_nm, 400.0, 0.25);

    let (scene, pads) = TrenchParams::default().build().unwrap();
    let mut shorted_samples = 0;
    let beams = cfg.beams().unwrap();
    for b in &beams {
        let one = deposit(&scene, &[Beam { thickness_m: cfg.nominal_thickness_m, ..*b }]);
        if !connectivity(&scene, &one, 50e-9, &pads).unwrap().isolated() {
            shorted_samples += 1;
        }
    }
    let full = connectivity(&scene, &coverage(&scene, &cfg).unwrap(), 50e-9, &pads).unwrap().isolated();
    c.check(shorted_samples == 0 && full, format!("serif trench isolated for {}/{} rotation samples and after full rotation", beams.len() - shorted_samples, beams.len()));

    let plain = TrenchParams::default().without_serifs();
    let (pscene, ppads) = plain.build().unwrap();
    let grazing: Vec<f64> = [75.0f64, 80.0, 85.0]
        .into_iter()
        .filter(|deg| {
            let cfg = EvaporationConfig { tilt_rad: deg.to_radians(), ..Default::default() };
            !connectivity(&pscene, &coverage(&pscene, &cfg).unwrap(), 50e-9, &ppads).unwrap().isolated()
        })
        .collect();
    c.check(!grazing.is_empty(), format!("serif-free control shorted at tilts {grazing:?} deg"));
    c.finish();
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_pipeline_determinism() {
    let _g = serial();
    let mut c = Criterion::new(10, "pipeline determinism");
    let runs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let manifest = init_project(dir.path()).unwrap();
            run_pipeline(&manifest, None).unwrap();
            read_tree(&dir.path().join("reports"))
        })
        .collect();
    let differing: Vec<&String> = runs[0].keys().filter(|k| runs[1].get(*k) != runs[0].get(*k)).collect();
    let same_set = runs[0].keys().eq(runs[1].keys());
    c.check(same_set && differing.is_empty() && !runs[0].is_empty(), format!("{} report files byte-identical across two runs (differing: {differing:?})", runs[0].len()));
    c.finish();
}
