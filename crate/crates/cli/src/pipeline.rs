//! Manifest-driven stage runner with input hashing and stale-cache detection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use serde_json::json;
use trapkit::evaporation::EvaporationConfig;
use trapkit::field_solver::cache;
use trapkit::geometry::io::geometry_to_json;
use trapkit::geometry::{build_linear_trap, params_to_json, ParametricTrapParams};
use trapkit::trap_analysis::DriveConfig;

use crate::args::PipelineCmd;
use crate::commands::{self, load_cache, load_geometry, load_params};
use crate::io::*;
use crate::reports::Metadata;
use crate::{CliError, CACHE_DIR_ENV};

pub const STAGES: [&str; 5] = ["geometry", "solve", "analyze", "sweep", "evaporate"];

/// Project description. Relative paths resolve against the manifest's directory;
/// `$TRAPKIT_CACHE_DIR` replaces `cache_dir` when set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectManifest {
    pub schema_version: u32,
    /// Trap parameter file; the bundled trap when absent.
    pub geometry_config: Option<PathBuf>,
    /// Drive file; the bundled drive when absent.
    pub drive: Option<PathBuf>,
    pub reports_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub cache_file: String,
    /// Seed for sampled quantities (aperture ray phases).
    pub seed: u64,
    pub aperture: bool,
    pub depth: bool,
    pub plane_points: usize,
    pub sweep_u_rf_v: Vec<f64>,
    pub evaporation: EvaporationConfig,
    pub conduction_threshold_m: f64,
}

impl Default for ProjectManifest {
    fn default() -> Self {
        ProjectManifest {
            schema_version: 1,
            geometry_config: None,
            drive: None,
            reports_dir: "reports".into(),
            cache_dir: "cache".into(),
            cache_file: "field_cache.bin".into(),
            seed: 7,
            aperture: true,
            depth: true,
            plane_points: 41,
            sweep_u_rf_v: vec![20.0, 25.0, 30.0, 35.0, 40.0],
            evaporation: EvaporationConfig::default(),
            conduction_threshold_m: 50e-9,
        }
    }
}

/// Hashes of the inputs and the files each stage wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub metadata: Metadata,
    pub stages: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

struct Project {
    manifest: ProjectManifest,
    params: ParametricTrapParams,
    config_sha: String,
    drive: DriveConfig,
    drive_sha: String,
    reports: PathBuf,
    cache: PathBuf,
}

impl Project {
    fn load(path: &Path) -> Result<Self, CliError> {
        let manifest: ProjectManifest = read_json(path, "manifest")?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let rel = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let (params, config_sha) = load_params(manifest.geometry_config.as_deref().map(rel).as_deref())?;
        let (drive, drive_sha) = match &manifest.drive {
            Some(p) => {
                let p = rel(p);
                let text = read_text(&p, "drive config")?;
                let d: DriveConfig = serde_json::from_str(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?;
                (d, sha256_hex(text.as_bytes()))
            }
            None => {
                let d = DriveConfig::default();
                let h = sha256_hex(to_json(&d).as_bytes());
                (d, h)
            }
        };
        drive.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let cache_dir = match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => rel(&manifest.cache_dir),
        };
        Ok(Project {
            reports: rel(&manifest.reports_dir),
            cache: cache_dir.join(&manifest.cache_file),
            manifest,
            params,
            config_sha,
            drive,
            drive_sha,
        })
    }

    fn geometry_path(&self) -> PathBuf {
        self.reports.join("geometry.json")
    }

    fn geometry_report_path(&self) -> PathBuf {
        self.reports.join("geometry_report.json")
    }
}

pub fn parse_stages(list: Option<&[String]>) -> Result<Vec<&'static str>, CliError> {
    let Some(list) = list else { return Ok(STAGES.to_vec()) };
    for s in list {
        if !STAGES.contains(&s.as_str()) {
            return Err(CliError::Usage(format!("unknown stage `{s}` (expected one of {})", STAGES.join(","))));
        }
    }
    Ok(STAGES.iter().copied().filter(|s| list.iter().any(|x| x == s)).collect())
}

/// Check that every input a stage needs either comes from an earlier requested stage
/// or exists on disk and matches the current configuration.
fn preflight(p: &Project, stages: &[&str]) -> Result<(), CliError> {
    let has = |s: &str| stages.contains(&s);
    let needs_geometry = has("solve") || has("evaporate");
    if needs_geometry && !has("geometry") {
        let path = p.geometry_path();
        if !path.exists() {
            return Err(CliError::MissingInput { what: "geometry (run the geometry stage)".into(), path });
        }
        let report: serde_json::Value = read_json(&p.geometry_report_path(), "geometry report")?;
        let recorded = report.get("config_sha256").and_then(|v| v.as_str()).unwrap_or("").to_string();
        if recorded != p.config_sha {
            return Err(CliError::StaleCache { path, recorded, current: p.config_sha.clone() });
        }
    }
    if (has("analyze") || has("sweep")) && !has("solve") {
        if !p.cache.exists() {
            return Err(CliError::MissingInput { what: "field cache (run the solve stage)".into(), path: p.cache.clone() });
        }
        let side: serde_json::Value = read_json(&cache::sidecar_path(&p.cache), "cache sidecar")?;
        let recorded = side.pointer("/source/config_sha256").and_then(|v| v.as_str()).unwrap_or("").to_string();
        if recorded != p.config_sha {
            return Err(CliError::StaleCache { path: p.cache.clone(), recorded, current: p.config_sha.clone() });
        }
    }
    Ok(())
}

fn stage<T>(name: &str, r: Result<T, CliError>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        e @ (CliError::MissingInput { .. } | CliError::StaleCache { .. }) => e,
        CliError::Other(source) => CliError::Stage { stage: name.to_string(), source },
        other => CliError::Stage { stage: name.to_string(), source: anyhow!("{other}") },
    })
}

pub fn run_pipeline(manifest: &Path, stages: Option<&[String]>) -> Result<PipelineState, CliError> {
    let stages = parse_stages(stages)?;
    let p = Project::load(manifest)?;
    preflight(&p, &stages)?;
    let m = &p.manifest;
    let mut outputs = BTreeMap::new();
    let mut record = |path: &Path| -> Result<(), CliError> {
        let name = path.strip_prefix(&p.reports).unwrap_or(path).to_string_lossy().replace('\\', "/");
        outputs.insert(name, sha256_file(path)?);
        Ok(())
    };

    for &s in &stages {
        eprintln!("[pipeline] {s}");
        match s {
            "geometry" => stage(s, (|| {
                let g = build_linear_trap(&p.params).map_err(|e| anyhow!("{e}"))?;
                let text = geometry_to_json(&g);
                write_text(&p.geometry_path(), &text)?;
                let r = commands::geometry_report(&g, &p.config_sha, &sha256_hex(text.as_bytes()), m.aperture.then_some(m.seed))?;
                write_json(&p.geometry_report_path(), &r)?;
                record(&p.geometry_path())?;
                record(&p.geometry_report_path())
            })())?,
            "solve" => stage(s, (|| {
                let (g, gsha) = load_geometry(&p.geometry_path())?;
                let prov = json!({ "config_sha256": p.config_sha, "geometry_sha256": gsha });
                let r = commands::solve_stage(&g, prov, None, &p.cache)?;
                let path = p.reports.join("solve.json");
                write_json(&path, &r)?;
                record(&path)
            })())?,
            "analyze" => stage(s, (|| {
                let fields = load_cache(&p.cache, &[("config_sha256", &p.config_sha)])?;
                let r = commands::analyze_stage(&fields, &p.drive, m.depth, m.plane_points)?;
                let path = p.reports.join("characterization.json");
                write_json(&path, &r)?;
                record(&path)?;
                if r.pseudopotential_xy.is_some() {
                    let dir = p.reports.join("plots");
                    commands::plot::write_pseudopotential_csv(&dir, &r)?;
                    record(&dir.join(commands::plot::PSEUDOPOTENTIAL_CSV))?;
                }
                Ok(())
            })())?,
            "sweep" => stage(s, (|| {
                let fields = load_cache(&p.cache, &[("config_sha256", &p.config_sha)])?;
                let r = commands::sweep_stage(&fields, &p.drive, &m.sweep_u_rf_v)?;
                let path = p.reports.join("sweep.json");
                write_json(&path, &r)?;
                record(&path)?;
                let dir = p.reports.join("plots");
                commands::plot::write_sweep_csv(&dir, &r)?;
                record(&dir.join(commands::plot::OMEGA_VS_URF_CSV))
            })())?,
            "evaporate" => stage(s, (|| {
                let (g, _) = load_geometry(&p.geometry_path())?;
                let (r, rows) = commands::evaporation_stage(&g, &m.evaporation, m.conduction_threshold_m)?;
                let path = p.reports.join("evaporation.json");
                write_json(&path, &r)?;
                record(&path)?;
                let csv = p.reports.join("coverage.csv");
                write_csv(&csv, &commands::COVERAGE_HEADER, rows)?;
                record(&csv)
            })())?,
            _ => unreachable!("stage list is validated"),
        }
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("geometry_config".to_string(), p.config_sha.clone());
    inputs.insert("drive".to_string(), p.drive_sha.clone());
    let state = PipelineState { metadata: Metadata::default(), stages: stages.iter().map(|s| s.to_string()).collect(), inputs, outputs };
    write_json(&p.reports.join("pipeline_state.json"), &state)?;
    Ok(state)
}

pub fn init_project(dir: &Path) -> Result<PathBuf, CliError> {
    write_text(&dir.join("trap.json"), &params_to_json(&ParametricTrapParams::default()))?;
    write_json(&dir.join("drive.json"), &DriveConfig::default())?;
    let m = ProjectManifest { geometry_config: Some("trap.json".into()), drive: Some("drive.json".into()), ..Default::default() };
    let path = dir.join("manifest.json");
    write_json(&path, &m)?;
    Ok(path)
}

pub fn pipeline_cmd(cmd: PipelineCmd) -> Result<(), CliError> {
    match cmd {
        PipelineCmd::Init { dir } => {
            let path = init_project(&dir)?;
            emit_json(None, &json!({ "manifest": path }))
        }
        PipelineCmd::Run { manifest, stages } => {
            let state = run_pipeline(&manifest, stages.as_deref())?;
            emit_json(None, &state)
        }
    }
}
