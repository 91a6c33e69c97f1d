use std::path::Path;

use crate::args::{PlotKind, PlotdataArgs};
use crate::io::{fmt, read_json, write_csv};
use crate::reports::{CharacterizationReport, SweepReport, TickleReport};
use crate::CliError;

pub const PSEUDOPOTENTIAL_CSV: &str = "pseudopotential_xy.csv";
pub const OMEGA_VS_URF_CSV: &str = "omega_vs_Urf.csv";
pub const TICKLE_CSV: &str = "tickle.csv";

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

pub fn write_pseudopotential_csv(dir: &Path, r: &CharacterizationReport) -> Result<(), CliError> {
    let g = r.pseudopotential_xy.as_ref().filter(|g| !g.x_m.is_empty() && !g.y_m.is_empty()).ok_or_else(|| CliError::Usage("report has no pseudopotential grid".into()))?;
    let rows = g.y_m.iter().enumerate().flat_map(|(j, y)| g.x_m.iter().enumerate().map(move |(i, x)| vec![fmt(x * 1e6), fmt(y * 1e6), opt(g.energy_ev[j][i])]));
    write_csv(&dir.join(PSEUDOPOTENTIAL_CSV), &["x_um", "y_um", "energy_eV"], rows)
}

pub fn write_sweep_csv(dir: &Path, r: &SweepReport) -> Result<(), CliError> {
    if r.points.is_empty() {
        return Err(CliError::Usage("sweep report has no points".into()));
    }
    let rows = r.points.iter().map(|p| vec![fmt(p.u_rf_v), opt(p.frequencies_hz[0]), opt(p.frequencies_hz[1]), opt(p.frequencies_hz[2])]);
    write_csv(&dir.join(OMEGA_VS_URF_CSV), &["U_rf_V", "f_rad1_Hz", "f_rad2_Hz", "f_ax_Hz"], rows)
}

pub fn write_tickle_csv(dir: &Path, r: &TickleReport) -> Result<(), CliError> {
    if r.points.is_empty() {
        return Err(CliError::Usage("tickle report has no points".into()));
    }
    let rows = r.points.iter().map(|p| vec![fmt(p.omega / std::f64::consts::TAU), fmt(p.response_j)]);
    write_csv(&dir.join(TICKLE_CSV), &["freq_Hz", "response_J"], rows)
}

pub fn plotdata_cmd(a: PlotdataArgs) -> Result<(), CliError> {
    match a.kind {
        PlotKind::Pseudopotential => write_pseudopotential_csv(&a.out_dir, &read_json(&a.report, "characterization report")?),
        PlotKind::OmegaVsUrf => write_sweep_csv(&a.out_dir, &read_json(&a.report, "sweep report")?),
        PlotKind::Tickle => write_tickle_csv(&a.out_dir, &read_json(&a.report, "tickle report")?),
    }
}
