use std::path::Path;
use std::process::Command;

use trapkit::geometry::{params_to_json, ParametricTrapParams};
use trapkit_cli::io::{read_json, sha256_file, write_json, write_text};
use trapkit_cli::pipeline::{init_project, run_pipeline, ProjectManifest};
use trapkit_cli::reports::{Metadata, SweepReport};
use trapkit_cli::CliError;

fn coarse_project(dir: &Path) -> std::path::PathBuf {
    let manifest = init_project(dir).unwrap();
    let mut p = ParametricTrapParams::default();
    p.mesh_grading = 5.0;
    p.mesh_max_edge = 600e-6;
    write_text(&dir.join("trap.json"), &params_to_json(&p)).unwrap();
    let mut m: ProjectManifest = read_json(&manifest, "manifest").unwrap();
    m.evaporation.samples = 36;
    m.plane_points = 9;
    m.sweep_u_rf_v = vec![20.0, 30.0];
    m.depth = false;
    write_json(&manifest, &m).unwrap();
    manifest
}

fn stages(s: &[&str]) -> Vec<String> {
    s.iter().map(|x| x.to_string()).collect()
}

#[test]
fn pipeline_is_deterministic_and_detects_stale_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = coarse_project(tmp.path());

    let missing = run_pipeline(&manifest, Some(&stages(&["analyze"]))).unwrap_err();
    assert!(matches!(missing, CliError::MissingInput { .. }), "{missing}");
    assert_eq!(missing.exit_code(), 3);

    let first = run_pipeline(&manifest, None).unwrap();
    assert_eq!(first.stages.len(), 5);
    let second = run_pipeline(&manifest, None).unwrap();
    assert_eq!(first, second);
    for (name, hash) in &first.outputs {
        assert_eq!(&sha256_file(&tmp.path().join("reports").join(name)).unwrap(), hash, "{name}");
    }

    let analyzed = run_pipeline(&manifest, Some(&stages(&["analyze"]))).unwrap();
    assert_eq!(analyzed.outputs["characterization.json"], first.outputs["characterization.json"]);

    let mut p: ParametricTrapParams = trapkit::geometry::params_from_json(&std::fs::read_to_string(tmp.path().join("trap.json")).unwrap()).unwrap();
    p.blade_separation *= 1.02;
    write_text(&tmp.path().join("trap.json"), &params_to_json(&p)).unwrap();
    let cache = tmp.path().join("cache/field_cache.bin");
    let before = std::fs::metadata(&cache).unwrap().modified().unwrap();
    for s in [&["analyze"][..], &["sweep"], &["solve"], &["evaporate"]] {
        let err = run_pipeline(&manifest, Some(&stages(s))).unwrap_err();
        assert!(matches!(err, CliError::StaleCache { .. }), "{s:?}: {err}");
        assert_eq!(err.exit_code(), 4);
    }
    assert_eq!(std::fs::metadata(&cache).unwrap().modified().unwrap(), before);

    let err = run_pipeline(&manifest, Some(&stages(&["bogus"]))).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
}

#[test]
fn plotdata_rejects_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let report = SweepReport { metadata: Metadata::default(), drive: Default::default(), points: vec![] };
    let path = tmp.path().join("sweep.json");
    write_json(&path, &report).unwrap();
    let out = tmp.path().join("plots");
    let status = Command::new(env!("CARGO_BIN_EXE_trapkit"))
        .args(["plotdata", "--kind", "omega-vs-urf", "--report"])
        .arg(&path)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(!out.join("omega_vs_Urf.csv").exists());
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_trapkit")).current_dir(tmp.path()).args(args).output().unwrap();
    let missing = run(&["analyze", "--cache", "nope.bin"]);
    assert_eq!(missing.status.code(), Some(3), "{}", String::from_utf8_lossy(&missing.stderr));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing input"));
    assert_eq!(run(&["pipeline", "run", "--manifest", "none.json"]).status.code(), Some(3));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn measurement_csv_parsing() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.csv");
    std::fs::write(&path, "voltage_V,omega_Hz,sigma_Hz\n20,1000,10\n30,1100,10\n").unwrap();
    let s = trapkit_cli::commands::fit::read_samples(&path).unwrap();
    assert_eq!(s.len(), 2);
    assert!((s[1].omega - std::f64::consts::TAU * 1100.0).abs() < 1e-9);
    std::fs::write(&path, "volts,omega_Hz,sigma_Hz\n20,1000,10\n").unwrap();
    assert!(trapkit_cli::commands::fit::read_samples(&path).is_err());
}
