use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Deserialize;
use trapkit::characterization_fit::{compare_to_simulation, fit_axial, fit_radial, resonator_amplification, MeasurementSeries, ResonatorParams, Sample, SeriesKind, SimulatedCoefficients};
use trapkit::constants::TWO_PI;

use crate::args::{FitArgs, FitCmd};
use crate::io::{emit_json, read_json, read_text};
use crate::reports::{CharacterizationReport, FitReport, Metadata, ResonatorReport};
use crate::CliError;

#[derive(Debug, Deserialize)]
struct Row {
    #[serde(rename = "voltage_V")]
    voltage: f64,
    #[serde(rename = "omega_Hz")]
    freq: f64,
    #[serde(rename = "sigma_Hz")]
    sigma: f64,
}

/// Measurement rows from CSV; frequencies in Hz become angular frequencies.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>, CliError> {
    let text = read_text(path, "measurement CSV")?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.with_context(|| format!("reading {}", path.display()))?;
        out.push(Sample { voltage_v: row.voltage, omega: TWO_PI * row.freq, sigma_omega: TWO_PI * row.sigma });
    }
    Ok(out)
}

fn load(f: &FitArgs, kind: SeriesKind) -> Result<(MeasurementSeries, SimulatedCoefficients, CharacterizationReport), CliError> {
    let report: CharacterizationReport = read_json(&f.sim, "characterization report")?;
    let sim = SimulatedCoefficients::from_characterization(&report.characterization, &report.drive).map_err(|e| CliError::Usage(e.to_string()))?;
    let series = MeasurementSeries::new(kind, report.drive.omega_rf_rad_per_s, read_samples(&f.data)?).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((series, sim, report))
}

pub fn fit_cmd(cmd: FitCmd) -> Result<(), CliError> {
    match cmd {
        FitCmd::Radial { fit, axis, amplification, u_dc } => {
            if !(axis == 1 || axis == 2) {
                return Err(CliError::Usage("radial axis must be 1 or 2".into()));
            }
            let (series, sim, report) = load(&fit, SeriesKind::RfInputVoltage)?;
            let u_dc = u_dc.unwrap_or_else(|| report.drive.dc_voltages_v.values().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m }));
            let r = fit_radial(&series, &sim, axis - 1, amplification, u_dc).map_err(|e| anyhow!("{e}"))?;
            let mut slots = [None, None];
            slots[axis - 1] = Some(&r);
            let comparison = compare_to_simulation(slots, None);
            emit_json(fit.out.as_ref(), &FitReport { metadata: Metadata::default(), kind: SeriesKind::RfInputVoltage, axis, amplification: Some(amplification), result: r.clone(), comparison })
        }
        FitCmd::Axial { fit } => {
            let (series, sim, _) = load(&fit, SeriesKind::DcVoltage)?;
            let r = fit_axial(&series, &sim).map_err(|e| anyhow!("{e}"))?;
            let comparison = compare_to_simulation([None, None], Some(&r));
            emit_json(fit.out.as_ref(), &FitReport { metadata: Metadata::default(), kind: SeriesKind::DcVoltage, axis: 3, amplification: None, result: r.clone(), comparison })
        }
        FitCmd::Resonator { params, out } => {
            let p: ResonatorParams = read_json(&params, "resonator parameters")?;
            let a = resonator_amplification(&p).map_err(|e| CliError::Usage(e.to_string()))?;
            emit_json(out.as_ref(), &ResonatorReport { metadata: Metadata::default(), params: p, amplification: a })
        }
    }
}
