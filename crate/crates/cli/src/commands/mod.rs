//! Subcommand implementations. The stage functions here are shared with the pipeline.

pub mod fit;
pub mod plot;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::json;
use trapkit::compensation::{compensate, CompensationError, CompensationOptions, PatchSpec, StrayField};
use trapkit::dynamics::{integrate, max_step, secular_spectrum, tickle_peak, tickle_scan, IonState, MicromotionOptions, TickleConfig};
use trapkit::evaporation::trench::TrenchParams;
use trapkit::evaporation::{connectivity, coverage, facet_report, EvaporationConfig, Pad, Scene};
use trapkit::field_solver::{assemble, cache, cache_grid, BasisFieldSet, FieldGrid, FieldSource, GridRegion, SolverOptions};
use trapkit::geometry::io::{geometry_from_json, geometry_to_json, write_stl};
use trapkit::geometry::{build_linear_trap, numerical_aperture, params_from_json, validate_mesh, CircularStop, NaSampling, ParametricTrapParams, TrapGeometry};
use trapkit::math::closest_point_on_triangle;
use trapkit::trap_analysis::{characterize, find_equilibrium, AnalysisSettings, DriveConfig};
use trapkit::Vec3;

use crate::args::*;
use crate::io::*;
use crate::reports::*;
use crate::{CliError, CACHE_DIR_ENV};

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Geometry(g) => geometry_cmd(g),
        Command::Solve(a) => solve_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Dynamics(d) => dynamics_cmd(d),
        Command::Compensate(c) => compensate_cmd(c),
        Command::Fit(f) => fit::fit_cmd(f),
        Command::Evaporate(e) => evaporate_cmd(e),
        Command::Pipeline(p) => crate::pipeline::pipeline_cmd(p),
        Command::Plotdata(p) => plot::plotdata_cmd(p),
    }
}

/// Relative cache paths live under `$TRAPKIT_CACHE_DIR` when it is set.
pub fn cache_path(p: &Path) -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if p.is_relative() && !dir.is_empty() => PathBuf::from(dir).join(p),
        _ => p.to_path_buf(),
    }
}

pub fn load_params(config: Option<&Path>) -> Result<(ParametricTrapParams, String), CliError> {
    match config {
        Some(p) => {
            let text = read_text(p, "trap config")?;
            let params = params_from_json(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?;
            Ok((params, sha256_hex(text.as_bytes())))
        }
        None => {
            let text = trapkit::geometry::params_to_json(&ParametricTrapParams::default());
            Ok((ParametricTrapParams::default(), sha256_hex(text.as_bytes())))
        }
    }
}

pub fn load_geometry(path: &Path) -> Result<(TrapGeometry, String), CliError> {
    let text = read_text(path, "geometry")?;
    let g = geometry_from_json(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok((g, sha256_hex(text.as_bytes())))
}

pub fn load_drive(args: &DriveArgs) -> Result<DriveConfig, CliError> {
    let mut d: DriveConfig = match &args.drive {
        Some(p) => read_json(p, "drive config")?,
        None => DriveConfig::default(),
    };
    if let Some(u) = args.u_rf {
        d = d.with_rf(u);
    }
    for name in &args.short_endcap {
        d = d.with_shorted_endcap(name).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    d.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(d)
}

pub struct LoadedCache {
    pub set: BasisFieldSet,
    pub grid: Option<FieldGrid>,
    pub sha256: String,
    pub source: serde_json::Value,
}

/// Read a cache, refusing it if it was built from a different geometry or config.
pub fn load_cache(path: &Path, expect: &[(&str, &str)]) -> Result<LoadedCache, CliError> {
    let path = cache_path(path);
    let bytes = read_bytes(&path, "field cache")?;
    let side: serde_json::Value = read_json(&cache::sidecar_path(&path), "cache sidecar")?;
    let source = side.get("source").cloned().unwrap_or(serde_json::Value::Null);
    for (key, current) in expect {
        let recorded = source.get(*key).and_then(|v| v.as_str()).unwrap_or("");
        if recorded != *current {
            return Err(CliError::StaleCache { path, recorded: format!("{key} {recorded}"), current: current.to_string() });
        }
    }
    let (set, grid) = cache::decode(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(LoadedCache { set, grid, sha256: sha256_hex(&bytes), source })
}

fn load_cache_args(args: &CacheArgs) -> Result<LoadedCache, CliError> {
    match &args.geometry {
        Some(g) => {
            let h = sha256_file(g)?;
            load_cache(&args.cache, &[("geometry_sha256", &h)])
        }
        None => load_cache(&args.cache, &[]),
    }
}

/// Smallest distance from the origin to any panel.
pub fn r0_of(set: &BasisFieldSet) -> f64 {
    set.system
        .panels
        .iter()
        .map(|p| closest_point_on_triangle(Vec3::ZERO, p.v[0], p.v[1], p.v[2]).norm())
        .fold(f64::INFINITY, f64::min)
}

// ---- geometry -------------------------------------------------------------

pub fn geometry_report(g: &TrapGeometry, config_sha256: &str, geometry_sha256: &str, aperture_seed: Option<u64>) -> Result<GeometryReport, CliError> {
    let aperture = match aperture_seed {
        Some(seed) => {
            let s = NaSampling { seed, ..Default::default() };
            let na = |axis: Vec3, stops: &[CircularStop]| numerical_aperture(g, g.center, axis, stops, &s).map_err(|e| anyhow!("{e}"));
            let viewport_na = 0.18;
            let stop = CircularStop::for_na(g.center, Vec3::Y, 0.05, viewport_na);
            Some(ApertureReport {
                seed,
                radial_y: na(Vec3::Y, &[])?,
                axial_z: na(Vec3::Z, &[])?,
                viewport_na,
                radial_y_with_viewport: na(Vec3::Y, &[stop])?,
            })
        }
        None => None,
    };
    Ok(GeometryReport {
        metadata: Metadata::default(),
        config_sha256: config_sha256.to_string(),
        geometry_sha256: geometry_sha256.to_string(),
        triangle_count: g.triangle_count(),
        r0_m: g.r0,
        electrodes: g.electrodes.iter().map(|e| ElectrodeSummary { name: e.name.clone(), role: e.role.as_str().to_string(), triangles: e.mesh.len() }).collect(),
        aperture,
    })
}

fn geometry_cmd(cmd: GeometryCmd) -> Result<(), CliError> {
    match cmd {
        GeometryCmd::Build { config, out, stl } => {
            let (params, config_sha) = load_params(config.as_deref())?;
            let g = build_linear_trap(&params).map_err(|e| anyhow!("{e}"))?;
            let text = geometry_to_json(&g);
            write_text(&out, &text)?;
            if stl {
                let body: String = g.electrodes.iter().map(|e| write_stl(&e.name, &e.mesh)).collect();
                write_text(&out.with_extension("stl"), &body)?;
            }
            emit_json(None, &geometry_report(&g, &config_sha, &sha256_hex(text.as_bytes()), None)?)
        }
        GeometryCmd::Na { geometry, axis, viewport_na, seed, out } => {
            let (g, _) = load_geometry(&geometry)?;
            let s = NaSampling { seed, ..Default::default() };
            let stops: Vec<CircularStop> = viewport_na.map(|na| CircularStop::for_na(g.center, axis.vec(), 0.05, na)).into_iter().collect();
            let na = numerical_aperture(&g, g.center, axis.vec(), &stops, &s).map_err(|e| anyhow!("{e}"))?;
            emit_json(out.as_ref(), &json!({ "axis": axis.vec().to_array(), "viewport_na": viewport_na, "seed": seed, "na": na }))
        }
        GeometryCmd::Validate { geometry } => {
            let (g, _) = load_geometry(&geometry)?;
            let defects: Vec<_> = g.electrodes.iter().map(|e| (e.name.clone(), validate_mesh(&e.mesh))).filter(|(_, d)| !d.is_empty()).collect();
            emit_json(None, &json!({ "valid": defects.is_empty(), "defects": defects }))?;
            if defects.is_empty() {
                Ok(())
            } else {
                Err(CliError::Usage(format!("{} electrode(s) have mesh defects", defects.len())))
            }
        }
    }
}

// ---- solve ----------------------------------------------------------------

pub fn solve_stage(g: &TrapGeometry, provenance: serde_json::Value, grid: Option<GridRegion>, out: &Path) -> Result<SolveReport, CliError> {
    let system = assemble(g).map_err(|e| anyhow!("{e}"))?;
    let set = system.solve_all(&SolverOptions::default()).map_err(|e| anyhow!("{e}"))?;
    let grid = match grid {
        Some(r) => Some(cache_grid(&set, &r).map_err(|e| anyhow!("{e}"))?),
        None => None,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    cache::write(out, &set, grid.as_ref(), provenance.clone()).with_context(|| format!("writing {}", out.display()))?;
    Ok(SolveReport {
        metadata: Metadata::default(),
        geometry_sha256: provenance.get("geometry_sha256").and_then(|v| v.as_str()).unwrap_or("").to_string(),
        cache_sha256: sha256_file(out)?,
        panels: set.system.len(),
        collocation_residual: set.collocation_residual(),
        grid_nodes: grid.map(|g| g.data.node_count()),
    })
}

fn solve_cmd(a: SolveArgs) -> Result<(), CliError> {
    let (g, gsha) = load_geometry(&a.geometry)?;
    let region = a.grid_half_um.as_ref().map(|h| GridRegion::cube(g.center, [h[0] * 1e-6, h[1] * 1e-6, h[2] * 1e-6], a.grid_spacing_um * 1e-6));
    let out = cache_path(&a.out);
    let r = solve_stage(&g, json!({ "geometry_sha256": gsha }), region, &out)?;
    emit_json(None, &r)
}

// ---- analyze --------------------------------------------------------------

pub fn analyze_stage(fields: &LoadedCache, drive: &DriveConfig, depth: bool, plane_points: usize) -> Result<CharacterizationReport, CliError> {
    let r0 = r0_of(&fields.set);
    let mut settings = AnalysisSettings::new(r0);
    if !depth {
        settings = settings.without_depth();
    }
    let c = characterize(&fields.set, drive, &settings).map_err(|e| anyhow!("{e}"))?;
    let plane = if plane_points >= 2 { Some(plane_grid(&fields.set, drive, Vec3::from_array(c.rf_null), 0.6 * r0, plane_points)?) } else { None };
    Ok(CharacterizationReport {
        metadata: Metadata::default(),
        cache_sha256: fields.sha256.clone(),
        drive: drive.clone(),
        r0_m: r0,
        frequencies_hz: c.omega_hz(),
        radial_asymmetry: c.radial_asymmetry(),
        depth_ev: c.depth_ev,
        characterization: c,
        pseudopotential_xy: plane,
    })
}

fn plane_grid(source: &dyn FieldSource, drive: &DriveConfig, center: Vec3, half: f64, n: usize) -> Result<PlaneGrid, CliError> {
    let d = drive.resolve(source).map_err(|e| anyhow!("{e}"))?;
    let coords: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
    let e0 = d.energy(source, center).map_err(|e| anyhow!("{e}"))?;
    let ev = trapkit::constants::ELEMENTARY_CHARGE;
    let values = trapkit::par::map_range(n * n, |k| {
        let p = center + Vec3::new(coords[k % n], coords[k / n], 0.0);
        d.energy(source, p).ok().map(|e| (e - e0) / ev)
    });
    Ok(PlaneGrid {
        center_m: center.to_array(),
        x_m: coords.iter().map(|c| center.x + c).collect(),
        y_m: coords.iter().map(|c| center.y + c).collect(),
        energy_ev: values.chunks(n).map(|r| r.to_vec()).collect(),
    })
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<(), CliError> {
    let fields = load_cache_args(&a.cache)?;
    let drive = load_drive(&a.drive)?;
    let r = analyze_stage(&fields, &drive, !a.no_depth, a.plane_points)?;
    emit_json(a.out.as_ref(), &r)
}

pub fn sweep_stage(fields: &LoadedCache, drive: &DriveConfig, u_rf: &[f64]) -> Result<SweepReport, CliError> {
    let settings = AnalysisSettings::new(r0_of(&fields.set)).without_depth();
    let mut points = Vec::new();
    for &u in u_rf {
        let c = characterize(&fields.set, &drive.with_rf(u), &settings).map_err(|e| anyhow!("U_rf = {u} V: {e}"))?;
        points.push(SweepPoint { u_rf_v: u, frequencies_hz: c.omega_hz(), mathieu_q: c.mathieu_q });
    }
    Ok(SweepReport { metadata: Metadata::default(), drive: drive.clone(), points })
}

// ---- dynamics -------------------------------------------------------------

fn dynamics_source(c: &LoadedCache) -> &dyn FieldSource {
    match &c.grid {
        Some(g) => g,
        None => &c.set,
    }
}

fn dynamics_cmd(cmd: DynamicsCmd) -> Result<(), CliError> {
    match cmd {
        DynamicsCmd::Run { cache, drive, displace_um, duration_us, steps_per_cycle, axis, out_dir } => {
            let fields = load_cache_args(&cache)?;
            let drive = load_drive(&drive)?;
            let src = dynamics_source(&fields);
            let settings = AnalysisSettings::new(r0_of(&fields.set)).without_depth();
            let eq = find_equilibrium(src, &drive, &settings).map_err(|e| anyhow!("{e}"))?;
            let start = eq + Vec3::new(displace_um[0], displace_um[1], displace_um[2]) * 1e-6;
            let dt = std::f64::consts::TAU / (drive.omega_rf_rad_per_s * steps_per_cycle as f64);
            if dt > max_step(drive.omega_rf_rad_per_s) {
                return Err(CliError::Usage("steps_per_cycle must be at least 40".into()));
            }
            let traj = integrate(src, &drive, IonState::at_rest(start), duration_us * 1e-6, dt).map_err(|e| anyhow!("{e}"))?;
            let spectrum = secular_spectrum(&traj, axis.vec()).map_err(|e| anyhow!("{e}"))?;
            write_text(&out_dir.join("trajectory.csv"), &trapkit::dynamics::io::trajectory_to_csv(&traj))?;
            let report = DynamicsReport {
                metadata: Metadata::default(),
                start_m: start.to_array(),
                duration_s: traj.duration(),
                dt_s: dt,
                axis: axis.vec().to_array(),
                secular_hz: spectrum.secular.omega / std::f64::consts::TAU,
                spectrum,
            };
            write_json(&out_dir.join("dynamics.json"), &report)?;
            emit_json(None, &json!({ "secular_hz": report.secular_hz }))
        }
        DynamicsCmd::Tickle { cache, drive, electrode, amplitude_v, center_khz, rel_half_width, points, cycles, out_dir } => {
            let fields = load_cache_args(&cache)?;
            let drive = load_drive(&drive)?;
            let src = dynamics_source(&fields);
            let settings = AnalysisSettings::new(r0_of(&fields.set)).without_depth();
            let cfg = TickleConfig::around(&electrode, amplitude_v, std::f64::consts::TAU * center_khz * 1e3, rel_half_width, points, cycles);
            let pts = tickle_scan(src, &drive, &settings, &cfg).map_err(|e| anyhow!("{e}"))?;
            let report = TickleReport {
                metadata: Metadata::default(),
                electrode,
                amplitude_v,
                peak_hz: tickle_peak(&pts).map(|p| p.omega / std::f64::consts::TAU),
                points: pts,
            };
            plot::write_tickle_csv(&out_dir, &report)?;
            write_json(&out_dir.join("tickle.json"), &report)?;
            emit_json(None, &json!({ "peak_hz": report.peak_hz }))
        }
    }
}

// ---- compensate -----------------------------------------------------------

fn compensate_cmd(a: CompensateArgs) -> Result<(), CliError> {
    let fields = load_cache_args(&a.cache)?;
    let drive = load_drive(&a.drive)?;
    let specs: Vec<PatchSpec> = read_json(&a.patches, "patch list")?;
    let patches = specs.iter().map(|s| s.to_patch()).collect::<Result<Vec<_>, _>>().map_err(|e| CliError::Usage(e.to_string()))?;
    let stray = StrayField::solve(&fields.set.system, &patches, &SolverOptions::default()).map_err(|e| anyhow!("{e}"))?;
    let opts = CompensationOptions {
        electrodes: a.electrodes.clone(),
        micromotion: a.micromotion.then(MicromotionOptions::default),
        ..Default::default()
    };
    let settings = AnalysisSettings::new(r0_of(&fields.set)).without_depth();
    match compensate(&fields.set, &drive, &stray, &settings, &opts) {
        Ok(sol) => emit_json(a.out.as_ref(), &json!({ "status": "compensated", "solution": sol })),
        Err(CompensationError::NotTrapped { which, reason, offsets }) => {
            emit_json(a.out.as_ref(), &json!({ "status": "not_trapped", "which": which, "reason": reason, "offsets": offsets }))?;
            Err(anyhow!("ion is not held ({which}): {reason}").into())
        }
        Err(e) => Err(anyhow!("{e}").into()),
    }
}

// ---- evaporate ------------------------------------------------------------

pub fn evaporation_stage(g: &TrapGeometry, cfg: &EvaporationConfig, threshold_m: f64) -> Result<(EvaporationReport, Vec<Vec<String>>), CliError> {
    let scene = Scene::from_geometry(g);
    let cov = coverage(&scene, cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let facets = facet_report(g, &cov, 200e-6).map_err(|e| anyhow!("{e}"))?;
    let off = scene.offsets();
    let pads: Vec<Pad> = g.electrodes.iter().enumerate().map(|(k, e)| Pad { name: e.name.clone(), triangles: (off[k]..off[k + 1]).collect() }).collect();
    let graph = connectivity(&scene, &cov, threshold_m, &pads).map_err(|e| anyhow!("{e}"))?;
    let trench = |p: &TrenchParams| -> Result<bool, CliError> {
        let (s, pads) = p.build().map_err(|e| anyhow!("{e}"))?;
        let c = coverage(&s, cfg).map_err(|e| anyhow!("{e}"))?;
        Ok(connectivity(&s, &c, threshold_m, &pads).map_err(|e| anyhow!("{e}"))?.isolated())
    };
    let serif = TrenchParams::default();
    let report = EvaporationReport {
        metadata: Metadata::default(),
        config: cfg.clone(),
        threshold_m,
        facets,
        components: graph.components.len(),
        electrodes_isolated: graph.isolated(),
        shorts: graph.shorts(),
        trench: TrenchCheck { serif_isolated: trench(&serif)?, plain_isolated: trench(&serif.without_serifs())? },
    };
    let rows = cov
        .thickness_m
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (s, local) = scene.locate(i);
            vec![i.to_string(), scene.surfaces[s].0.clone(), local.to_string(), fmt(*t)]
        })
        .collect();
    Ok((report, rows))
}

pub const COVERAGE_HEADER: [&str; 4] = ["triangle", "surface", "local_index", "thickness_m"];

fn evaporate_cmd(a: EvaporateArgs) -> Result<(), CliError> {
    let (g, _) = load_geometry(&a.geometry)?;
    let cfg = EvaporationConfig {
        tilt_rad: a.tilt_deg.to_radians(),
        samples: a.samples,
        nominal_thickness_m: a.nominal_nm * 1e-9,
        base_normal: a.base_normal.vec(),
        two_sided: a.two_sided,
        ..Default::default()
    };
    let (report, rows) = evaporation_stage(&g, &cfg, a.threshold_nm * 1e-9)?;
    write_csv(&a.out_dir.join("coverage.csv"), &COVERAGE_HEADER, rows)?;
    write_json(&a.out_dir.join("evaporation.json"), &report)?;
    emit_json(None, &json!({ "facet_mean_nm": report.facets.overall.mean_m * 1e9, "electrodes_isolated": report.electrodes_isolated, "trench": report.trench }))
}
