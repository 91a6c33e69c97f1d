//! Secular-frequency fits with imperfection coefficients and offsets, and the
//! helical-resonator amplification estimate.
//!
//! Radial model: `w^2 = (W^2/4) [ (eta q)^2 / 2 + a + b ]`, `q = q_per_volt * A * U_in`.
//! Axial model: `w^2 = (W^2/4) (eta a + b)`, `a = a_per_volt * U_dc`.

use serde::{Deserialize, Serialize};

use crate::trap_analysis::{DriveConfig, TrapCharacterization};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("series kind {got:?} cannot be used here (expected {expected:?})")]
    WrongKind { expected: SeriesKind, got: SeriesKind },
    #[error("design matrix is singular")]
    Singular,
    #[error("fit did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesKind {
    /// Swept rf input voltage ahead of the resonator.
    #[serde(rename = "RF_INPUT_VOLTAGE")]
    RfInputVoltage,
    /// Swept endcap dc voltage.
    #[serde(rename = "DC_VOLTAGE")]
    DcVoltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub voltage_v: f64,
    /// Measured secular angular frequency and its standard error, rad/s.
    pub omega: f64,
    pub sigma_omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSeries {
    pub kind: SeriesKind,
    pub omega_rf_rad_per_s: f64,
    pub samples: Vec<Sample>,
}

impl MeasurementSeries {
    pub fn new(kind: SeriesKind, omega_rf_rad_per_s: f64, samples: Vec<Sample>) -> Result<Self, FitError> {
        let s = MeasurementSeries { kind, omega_rf_rad_per_s, samples };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.samples.len() < 3 {
            return Err(FitError::InsufficientSamples { needed: 3, got: self.samples.len() });
        }
        if !(self.omega_rf_rad_per_s > 0.0 && self.omega_rf_rad_per_s.is_finite()) {
            return Err(FitError::InvalidSeries("rf frequency must be positive".into()));
        }
        for w in self.samples.windows(2) {
            if !(w[1].voltage_v > w[0].voltage_v) {
                return Err(FitError::InvalidSeries("voltages must be strictly increasing".into()));
            }
        }
        for s in &self.samples {
            if !(s.sigma_omega > 0.0 && s.sigma_omega.is_finite()) || !s.omega.is_finite() || !s.voltage_v.is_finite() {
                return Err(FitError::InvalidSeries("samples need finite values and sigma > 0".into()));
            }
        }
        Ok(())
    }
}

/// Mathieu parameters per unit voltage along (radial 1, radial 2, axial).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCoefficients {
    /// q at 1 V rf amplitude on the trap.
    pub q_per_volt: [f64; 3],
    /// a at 1 V on the endcaps.
    pub a_per_volt: [f64; 3],
}

impl SimulatedCoefficients {
    /// From a characterization under `drive`; the endcap voltage is the largest dc
    /// voltage of the drive, the others are assumed to scale with it.
    pub fn from_characterization(c: &TrapCharacterization, drive: &DriveConfig) -> Result<Self, FitError> {
        let u_dc = drive.dc_voltages_v.values().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
        if drive.u_rf_peak_v == 0.0 || u_dc == 0.0 {
            return Err(FitError::InvalidParameter("drive needs nonzero rf and dc voltages".into()));
        }
        Ok(SimulatedCoefficients {
            q_per_volt: c.mathieu_q.map(|q| q / drive.u_rf_peak_v),
            a_per_volt: c.mathieu_a.map(|a| a / u_dc),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub eta: f64,
    pub b: f64,
    /// Covariance of (eta, b) from the weighted Jacobian.
    pub covariance: [[f64; 2]; 2],
    pub reduced_chi2: f64,
    pub iterations: usize,
    /// Set when eta is not resolved from zero or the normal matrix is ill conditioned.
    pub degenerate: bool,
}

impl FitResult {
    pub fn eta_sigma(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn b_sigma(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }
}

/// Weighted least squares for `residuals(p) = (model - data) / sigma` by Gauss-Newton with
/// Levenberg damping. `eval` returns the weighted residuals and their Jacobian rows.
/// Returns the parameters, covariance `(J^T J)^-1`, chi-square and iterations.
pub fn gauss_newton<const N: usize>(
    p0: [f64; N],
    eval: &dyn Fn(&[f64; N]) -> (Vec<f64>, Vec<[f64; N]>),
    max_iter: usize,
) -> Result<([f64; N], [[f64; N]; N], f64, usize), FitError> {
    let chi2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let normal = |p: &[f64; N]| {
        let (r, j) = eval(p);
        let mut jtj = nalgebra::DMatrix::<f64>::zeros(N, N);
        let mut jtr = nalgebra::DVector::<f64>::zeros(N);
        for (ri, row) in r.iter().zip(&j) {
            for a in 0..N {
                jtr[a] += row[a] * ri;
                for b in 0..N {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        (chi2(&r), jtj, jtr)
    };
    let mut p = p0;
    let (mut c, mut jtj, mut jtr) = normal(&p);
    let mut lambda = 1e-12;
    for it in 1..=max_iter {
        let mut damped = jtj.clone();
        for a in 0..N {
            damped[(a, a)] *= 1.0 + lambda;
        }
        let step = damped.lu().solve(&(-&jtr)).ok_or(FitError::Singular)?;
        let trial: [f64; N] = std::array::from_fn(|a| p[a] + step[a]);
        let (ct, jt, rt) = normal(&trial);
        let small = (0..N).all(|a| step[a].abs() <= 1e-13 * (1.0 + p[a].abs()));
        if ct.is_finite() && ct <= c * (1.0 + 1e-15) {
            p = trial;
            c = ct;
            jtj = jt;
            jtr = rt;
            lambda = (lambda * 0.1).max(1e-15);
            if small {
                let cov = jtj.try_inverse().ok_or(FitError::Singular)?;
                return Ok((p, std::array::from_fn(|a| std::array::from_fn(|b| cov[(a, b)])), c, it));
            }
        } else {
            if small {
                let cov = jtj.clone().try_inverse().ok_or(FitError::Singular)?;
                return Ok((p, std::array::from_fn(|a| std::array::from_fn(|b| cov[(a, b)])), c, it));
            }
            lambda *= 10.0;
        }
    }
    Err(FitError::NoConvergence(max_iter))
}

fn finish(eta: f64, b: f64, cov: [[f64; 2]; 2], chi2: f64, n: usize, iterations: usize) -> FitResult {
    let cond = {
        let (a, d, o) = (cov[0][0], cov[1][1], cov[0][1]);
        let tr = a + d;
        let disc = ((a - d) * (a - d) + 4.0 * o * o).sqrt();
        let (hi, lo) = (0.5 * (tr + disc), 0.5 * (tr - disc));
        if lo > 0.0 { hi / lo } else { f64::INFINITY }
    };
    let degenerate = !(eta.abs() > 2.0 * cov[0][0].sqrt()) || cond > 1e12;
    FitResult { eta, b, covariance: cov, reduced_chi2: chi2 / (n as f64 - 2.0).max(1.0), iterations, degenerate }
}

/// Radial model frequency for one sample.
pub fn radial_model(omega_rf: f64, q: f64, a: f64, eta: f64, b: f64) -> f64 {
    let s = 0.5 * (eta * q).powi(2) + a + b;
    0.5 * omega_rf * s.max(0.0).sqrt()
}

/// Axial model frequency for one sample.
pub fn axial_model(omega_rf: f64, a: f64, eta: f64, b: f64) -> f64 {
    0.5 * omega_rf * (eta * a + b).max(0.0).sqrt()
}

/// Fit (eta, b) along radial `axis` (0 or 1) from an rf input-voltage sweep. `a` is held at
/// the simulated value for endcap voltage `u_dc`.
pub fn fit_radial(
    series: &MeasurementSeries,
    sim: &SimulatedCoefficients,
    axis: usize,
    amplification: f64,
    u_dc: f64,
) -> Result<FitResult, FitError> {
    series.validate()?;
    if series.kind != SeriesKind::RfInputVoltage {
        return Err(FitError::WrongKind { expected: SeriesKind::RfInputVoltage, got: series.kind });
    }
    if axis > 1 {
        return Err(FitError::InvalidParameter("radial axis must be 0 or 1".into()));
    }
    if !(amplification > 0.0 && amplification.is_finite()) {
        return Err(FitError::InvalidParameter("amplification must be positive".into()));
    }
    let w = series.omega_rf_rad_per_s;
    let a = sim.a_per_volt[axis] * u_dc;
    let qs: Vec<f64> = series.samples.iter().map(|s| sim.q_per_volt[axis] * amplification * s.voltage_v).collect();

    // Start from the exact linear solve in (eta^2, b) on w^2.
    let k = 4.0 / (w * w);
    let rows: Vec<([f64; 2], f64, f64)> = series
        .samples
        .iter()
        .zip(&qs)
        .map(|(s, q)| ([0.5 * q * q, 1.0], k * s.omega * s.omega - a, 2.0 * k * s.omega * s.sigma_omega))
        .collect();
    let (lin, _) = weighted_linear(&rows)?;
    let eta0 = lin[0].max(1e-6).sqrt();

    let eval = |p: &[f64; 2]| {
        let mut r = Vec::with_capacity(qs.len());
        let mut j = Vec::with_capacity(qs.len());
        for (s, q) in series.samples.iter().zip(&qs) {
            let m = radial_model(w, *q, a, p[0], p[1]);
            r.push((m - s.omega) / s.sigma_omega);
            let d = w * w / (8.0 * m.max(1e-300));
            j.push([d * p[0] * q * q / s.sigma_omega, d / s.sigma_omega]);
        }
        (r, j)
    };
    let (p, cov, chi2, it) = gauss_newton([eta0, lin[1]], &eval, 200)?;
    Ok(finish(p[0].abs(), p[1], cov, chi2, qs.len(), it))
}

/// Weighted linear least squares `y ~ x . p` with rows `(x, y, sigma)`; returns `p` and its covariance.
fn weighted_linear(rows: &[([f64; 2], f64, f64)]) -> Result<([f64; 2], [[f64; 2]; 2]), FitError> {
    let mut n = [[0.0; 2]; 2];
    let mut v = [0.0; 2];
    for (x, y, s) in rows {
        let wt = 1.0 / (s * s);
        for a in 0..2 {
            v[a] += wt * x[a] * y;
            for b in 0..2 {
                n[a][b] += wt * x[a] * x[b];
            }
        }
    }
    let det = n[0][0] * n[1][1] - n[0][1] * n[1][0];
    let scale = n[0][0] * n[1][1];
    if !(det.abs() > 1e-14 * scale) || !det.is_finite() {
        return Err(FitError::Singular);
    }
    let inv = [[n[1][1] / det, -n[0][1] / det], [-n[1][0] / det, n[0][0] / det]];
    let p = [inv[0][0] * v[0] + inv[0][1] * v[1], inv[1][0] * v[0] + inv[1][1] * v[1]];
    Ok((p, inv))
}

/// Fit (eta, b) along the axis from an endcap-voltage sweep, closed form on
/// `4 w^2 / W^2 = eta a + b` with first-order weights from the frequency errors.
pub fn fit_axial(series: &MeasurementSeries, sim: &SimulatedCoefficients) -> Result<FitResult, FitError> {
    series.validate()?;
    if series.kind != SeriesKind::DcVoltage {
        return Err(FitError::WrongKind { expected: SeriesKind::DcVoltage, got: series.kind });
    }
    let rows = axial_rows(series, sim);
    let (p, cov) = weighted_linear(&rows)?;
    let chi2: f64 = rows.iter().map(|(x, y, s)| ((x[0] * p[0] + x[1] * p[1] - y) / s).powi(2)).sum();
    Ok(finish(p[0], p[1], cov, chi2, rows.len(), 1))
}

/// `(x = [a, 1], y = 4 w^2 / W^2, sigma_y)` for each axial sample.
pub fn axial_rows(series: &MeasurementSeries, sim: &SimulatedCoefficients) -> Vec<([f64; 2], f64, f64)> {
    let k = 4.0 / series.omega_rf_rad_per_s.powi(2);
    series
        .samples
        .iter()
        .map(|s| ([sim.a_per_volt[2] * s.voltage_v, 1.0], k * s.omega * s.omega, 2.0 * k * s.omega * s.sigma_omega))
        .collect()
}

/// A value with a symmetric standard uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    #[serde(default)]
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Measured { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Measured { value, sigma: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    /// Loaded quality factor.
    pub q: Measured,
    /// Load and connection resistance, ohm.
    pub r_ohm: Measured,
    /// Input power, W.
    pub p_w: Measured,
    /// Input voltage amplitude, V.
    pub u_in_v: Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amplification {
    pub kappa: f64,
    pub a: f64,
    pub sigma_a: f64,
}

/// `kappa = sqrt(Q R)`, `A = kappa sqrt(2 P Q) / U_in`, with first-order propagation of
/// independent uncertainties.
pub fn resonator_amplification(p: &ResonatorParams) -> Result<Amplification, FitError> {
    for (name, m) in [("Q", p.q), ("R", p.r_ohm), ("P", p.p_w), ("U_in", p.u_in_v)] {
        if !(m.value > 0.0 && m.value.is_finite()) || !(m.sigma >= 0.0 && m.sigma.is_finite()) {
            return Err(FitError::InvalidParameter(format!("{name} must be positive with a non-negative uncertainty")));
        }
    }
    let (q, r, pw, u) = (p.q.value, p.r_ohm.value, p.p_w.value, p.u_in_v.value);
    let kappa = (q * r).sqrt();
    let a = kappa * (2.0 * pw * q).sqrt() / u;
    // A = Q sqrt(2 P R) / U_in: relative sensitivities 1, 1/2, 1/2, -1.
    let rel = ((p.q.sigma / q).powi(2) + (0.5 * p.r_ohm.sigma / r).powi(2) + (0.5 * p.p_w.sigma / pw).powi(2) + (p.u_in_v.sigma / u).powi(2)).sqrt();
    Ok(Amplification { kappa, a, sigma_a: a * rel })
}

/// Input power that yields amplification `a` for the given Q, R and input voltage.
pub fn power_for_amplification(a: f64, q: f64, r: f64, u_in: f64) -> f64 {
    (a * u_in / q).powi(2) / (2.0 * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "weaker than simulation")]
    Weaker,
    #[serde(rename = "consistent with simulation")]
    Consistent,
    #[serde(rename = "stronger than simulation")]
    Stronger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisComparison {
    pub axis: String,
    pub eta: f64,
    pub eta_sigma: f64,
    pub verdict: Verdict,
    /// |eta - 1| in units of its standard error.
    pub significance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub axes: Vec<AxisComparison>,
    /// |b1 - b2| / mean(|b1|, |b2|) for the two radial fits, when both are given.
    pub b_rad_relative_difference: Option<f64>,
    /// Averaged radial offset when the two agree within 1 %.
    pub b_rad_average: Option<f64>,
    pub summary: String,
}

/// Tolerance below which eta counts as exactly one.
const UNITY_TOLERANCE: f64 = 1e-9;

/// Classify each fitted eta against 1 and check the radial offsets. `rad` holds the two
/// radial fits (either may be absent), `ax` the axial one.
pub fn compare_to_simulation(rad: [Option<&FitResult>; 2], ax: Option<&FitResult>) -> ComparisonReport {
    let mut axes = Vec::new();
    for (name, f) in [("rad1", rad[0]), ("rad2", rad[1]), ("ax", ax)] {
        let Some(f) = f else { continue };
        let d = f.eta - 1.0;
        let verdict = if d.abs() <= UNITY_TOLERANCE {
            Verdict::Consistent
        } else if d < 0.0 {
            Verdict::Weaker
        } else {
            Verdict::Stronger
        };
        let s = f.eta_sigma();
        axes.push(AxisComparison {
            axis: name.into(),
            eta: f.eta,
            eta_sigma: s,
            verdict,
            significance: if s > 0.0 { d.abs() / s } else if d == 0.0 { 0.0 } else { f64::INFINITY },
        });
    }
    let (mut diff, mut avg) = (None, None);
    if let [Some(a), Some(b)] = rad {
        let mean = 0.5 * (a.b.abs() + b.b.abs());
        let rel = if mean > 0.0 { (a.b - b.b).abs() / mean } else { 0.0 };
        diff = Some(rel);
        if rel < 0.01 {
            avg = Some(0.5 * (a.b + b.b));
        }
    }
    let mut summary = axes
        .iter()
        .map(|c| format!("eta_{} = {:.4} +- {:.4}: {}", c.axis, c.eta, c.eta_sigma, verdict_text(c.verdict)))
        .collect::<Vec<_>>()
        .join("; ");
    if let Some(rel) = diff {
        summary.push_str(&match avg {
            Some(m) => format!("; b_rad differs by {:.2}% (negligible), average {m:.6e}", 100.0 * rel),
            None => format!("; b_rad differs by {:.2}%", 100.0 * rel),
        });
    }
    ComparisonReport { axes, b_rad_relative_difference: diff, b_rad_average: avg, summary }
}

fn verdict_text(v: Verdict) -> &'static str {
    match v {
        Verdict::Weaker => "weaker than simulation",
        Verdict::Consistent => "consistent with simulation",
        Verdict::Stronger => "stronger than simulation",
    }
}

/// Noise-free series from the radial model.
pub fn synthetic_radial(
    sim: &SimulatedCoefficients,
    axis: usize,
    omega_rf: f64,
    amplification: f64,
    u_dc: f64,
    eta: f64,
    b: f64,
    voltages: &[f64],
    rel_sigma: f64,
) -> Result<MeasurementSeries, FitError> {
    let a = sim.a_per_volt[axis] * u_dc;
    let samples = voltages
        .iter()
        .map(|&u| {
            let w = radial_model(omega_rf, sim.q_per_volt[axis] * amplification * u, a, eta, b);
            Sample { voltage_v: u, omega: w, sigma_omega: rel_sigma * w }
        })
        .collect();
    MeasurementSeries::new(SeriesKind::RfInputVoltage, omega_rf, samples)
}

/// Noise-free series from the axial model.
pub fn synthetic_axial(
    sim: &SimulatedCoefficients,
    omega_rf: f64,
    eta: f64,
    b: f64,
    voltages: &[f64],
    rel_sigma: f64,
) -> Result<MeasurementSeries, FitError> {
    let samples = voltages
        .iter()
        .map(|&u| {
            let w = axial_model(omega_rf, sim.a_per_volt[2] * u, eta, b);
            Sample { voltage_v: u, omega: w, sigma_omega: rel_sigma * w }
        })
        .collect();
    MeasurementSeries::new(SeriesKind::DcVoltage, omega_rf, samples)
}

#[cfg(test)]
mod tests;
