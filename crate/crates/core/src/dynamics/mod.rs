//! Time-domain ion motion in the full rf + dc field: trajectories, spectra,
//! micromotion and tickle scans.

pub mod io;

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::field_solver::{grid::GridData, FieldError, FieldSource};
use crate::math::{Point3, Vec3};
use crate::par;
use crate::trap_analysis::{find_equilibrium, AnalysisError, AnalysisSettings, DriveConfig, ResolvedDrive};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("ion left the field region at t = {time:e} s, position {position:?}")]
    Escaped { time: f64, position: [f64; 3] },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid time step: {0}")]
    InvalidStep(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory covers {periods:.1} periods of the dominant motion; at least {needed} are needed")]
    TooShort { periods: f64, needed: f64 },
    #[error("trajectory format: {0}")]
    Format(String),
}

impl From<FieldError> for DynamicsError {
    fn from(e: FieldError) -> Self {
        DynamicsError::Analysis(AnalysisError::Field(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonState {
    pub position: Point3,
    pub velocity: Vec3,
    pub time: f64,
}

impl IonState {
    pub fn at_rest(position: Point3) -> Self {
        IonState { position, velocity: Vec3::ZERO, time: 0.0 }
    }
}

/// Uniformly sampled states, one per integration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    /// Drive angular frequency, used to label micromotion sidebands.
    pub rf_omega: Option<f64>,
    pub states: Vec<IonState>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.dt.abs() * self.states.len().saturating_sub(1) as f64
    }

    pub fn last(&self) -> Option<&IonState> {
        self.states.last()
    }
}

/// Largest step allowed for drive angular frequency `omega`: 40 steps per rf cycle.
pub fn max_step(omega: f64) -> f64 {
    std::f64::consts::TAU / (40.0 * omega)
}

/// Rf, dc and optional extra ac field seen by the ion.
struct ForceField<'a> {
    source: &'a dyn FieldSource,
    drive: ResolvedDrive,
    /// Unit weights, amplitude (V) and angular frequency of an extra ac drive.
    extra: Option<(Vec<f64>, f64, f64)>,
    /// Channels rf, dc, extra pre-combined from a sampled grid.
    grid: Option<GridData>,
}

impl<'a> ForceField<'a> {
    fn new(source: &'a dyn FieldSource, drive: &DriveConfig, extra: Option<(&str, f64, f64)>) -> Result<Self, DynamicsError> {
        let drive = drive.resolve(source)?;
        let extra = match extra {
            None => None,
            Some((name, amp, w)) => {
                let k = source
                    .index_of(name)
                    .ok_or_else(|| DynamicsError::InvalidConfig(format!("unknown electrode `{name}`")))?;
                let mut weights = vec![0.0; drive.dc.len()];
                weights[k] = 1.0;
                Some((weights, amp, w))
            }
        };
        let grid = source.as_grid().map(|g| {
            let mut ch = vec![drive.rf_unit.clone(), drive.dc.clone()];
            if let Some((w, _, _)) = &extra {
                ch.push(w.clone());
            }
            g.combine(&ch)
        });
        Ok(ForceField { source, drive, extra, grid })
    }

    fn qm(&self) -> f64 {
        self.drive.charge / self.drive.mass
    }

    /// Field at `p`, time `t`.
    fn field(&self, p: Point3, t: f64) -> Result<Vec3, FieldError> {
        let rf_c = self.drive.u_rf * (self.drive.omega * t).cos();
        if let Some(g) = &self.grid {
            let v = g.interpolate(p)?;
            let mut e = v[0].1 * rf_c + v[1].1;
            if let Some((_, amp, w)) = &self.extra {
                e += v[2].1 * (amp * (w * t).cos());
            }
            return Ok(e);
        }
        let unit = self.source.unit_fields(p)?;
        let mut e = Vec3::ZERO;
        for (k, (_, f)) in unit.iter().enumerate() {
            let mut c = self.drive.rf_unit[k] * rf_c + self.drive.dc[k];
            if let Some((wts, amp, w)) = &self.extra {
                c += wts[k] * amp * (w * t).cos();
            }
            if c != 0.0 {
                e += *f * c;
            }
        }
        Ok(e)
    }

    /// Velocity Verlet for `steps` steps of `dt`; `observe` sees every state including the first.
    fn run(&self, initial: IonState, steps: usize, dt: f64, mut observe: impl FnMut(&IonState)) -> Result<IonState, DynamicsError> {
        let qm = self.qm();
        let escaped = |s: &IonState| DynamicsError::Escaped { time: s.time, position: s.position.to_array() };
        let mut s = initial;
        if !(s.position.is_finite() && s.velocity.is_finite() && s.time.is_finite()) {
            return Err(DynamicsError::InvalidConfig("initial state must be finite".into()));
        }
        let mut a = self.field(s.position, s.time).map_err(|_| escaped(&s))? * qm;
        observe(&s);
        for k in 0..steps {
            let v_half = s.velocity + a * (0.5 * dt);
            let x = s.position + v_half * dt;
            let t = initial.time + (k + 1) as f64 * dt;
            let next = IonState { position: x, velocity: v_half, time: t };
            a = match self.field(x, t) {
                Ok(e) => e * qm,
                Err(_) => return Err(escaped(&next)),
            };
            s = IonState { position: x, velocity: v_half + a * (0.5 * dt), time: t };
            if !(s.position.is_finite() && s.velocity.is_finite()) {
                return Err(escaped(&s));
            }
            observe(&s);
        }
        Ok(s)
    }
}

fn check_step(dt: f64, omega: f64) -> Result<(), DynamicsError> {
    let limit = max_step(omega);
    if !(dt.is_finite() && dt != 0.0) {
        return Err(DynamicsError::InvalidStep("dt must be finite and nonzero".into()));
    }
    if dt.abs() > limit * (1.0 + 1e-12) {
        return Err(DynamicsError::InvalidStep(format!("|dt| = {:e} s exceeds {limit:e} s (40 steps per rf cycle)", dt.abs())));
    }
    Ok(())
}

/// Integrate for `duration` seconds (rounded to whole steps). A negative `dt` runs backwards in time.
pub fn integrate(
    source: &dyn FieldSource,
    drive: &DriveConfig,
    initial: IonState,
    duration: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    check_step(dt, drive.omega_rf_rad_per_s)?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(DynamicsError::InvalidConfig("duration must be non-negative".into()));
    }
    let ff = ForceField::new(source, drive, None)?;
    let steps = (duration / dt.abs()).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    ff.run(initial, steps, dt, |s| states.push(*s))?;
    Ok(Trajectory { dt: dt.abs(), rf_omega: Some(drive.omega_rf_rad_per_s), states })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    /// rad/s
    pub omega: f64,
    /// Amplitude of the sinusoid (m).
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// All local maxima above 1e-4 of the largest, strongest first.
    pub peaks: Vec<SpectralPeak>,
    /// Strongest peak below half the drive frequency.
    pub secular: SpectralPeak,
    /// Peaks at drive +- secular.
    pub sidebands: Vec<SpectralPeak>,
    /// FFT bin width, rad/s.
    pub bin_width: f64,
}

/// Minimum number of secular periods a spectrum needs.
pub const MIN_SPECTRUM_PERIODS: f64 = 100.0;

/// Hann-windowed FFT of the motion projected on `axis`.
pub fn secular_spectrum(traj: &Trajectory, axis: Vec3) -> Result<Spectrum, DynamicsError> {
    let axis = axis
        .try_normalize()
        .ok_or_else(|| DynamicsError::InvalidConfig("axis must be nonzero".into()))?;
    let n = traj.states.len();
    if n < 16 {
        return Err(DynamicsError::TooShort { periods: 0.0, needed: MIN_SPECTRUM_PERIODS });
    }
    let x: Vec<f64> = traj.states.iter().map(|s| s.position.dot(axis)).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let w: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos())
        .collect();
    let wsum: f64 = w.iter().sum();
    let nfft = (4 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..nfft)
        .map(|i| if i < n { Complex::new((x[i] - mean) * w[i], 0.0) } else { Complex::new(0.0, 0.0) })
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let half = nfft / 2;
    let amp: Vec<f64> = buf[..=half].iter().map(|c| 2.0 * c.norm() / wsum).collect();
    let df = std::f64::consts::TAU / (nfft as f64 * traj.dt);
    let top = amp[1..].iter().cloned().fold(0.0, f64::max);
    let mut peaks = Vec::new();
    for k in 1..half {
        if amp[k] > amp[k - 1] && amp[k] >= amp[k + 1] && amp[k] > 1e-4 * top {
            // parabolic refinement on log amplitude
            let (a, b, c) = (amp[k - 1].max(1e-300).ln(), amp[k].ln(), amp[k + 1].max(1e-300).ln());
            let den = a - 2.0 * b + c;
            let off = if den < 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            let off = off.clamp(-0.5, 0.5);
            peaks.push(SpectralPeak { omega: (k as f64 + off) * df, amplitude: (b - 0.25 * (a - c) * off).exp() });
        }
    }
    peaks.sort_by(|p, q| q.amplitude.total_cmp(&p.amplitude));
    let limit = traj.rf_omega.map_or(f64::INFINITY, |w| 0.5 * w);
    let secular = *peaks
        .iter()
        .find(|p| p.omega < limit)
        .ok_or(DynamicsError::TooShort { periods: 0.0, needed: MIN_SPECTRUM_PERIODS })?;
    let periods = traj.duration() * secular.omega / std::f64::consts::TAU;
    if periods < MIN_SPECTRUM_PERIODS {
        return Err(DynamicsError::TooShort { periods, needed: MIN_SPECTRUM_PERIODS });
    }
    let bin_width = std::f64::consts::TAU / traj.duration();
    let sidebands = match traj.rf_omega {
        Some(rf) => peaks
            .iter()
            .filter(|p| [rf - secular.omega, rf + secular.omega].iter().any(|s| (p.omega - s).abs() <= 2.0 * bin_width))
            .copied()
            .collect(),
        None => Vec::new(),
    };
    Ok(Spectrum { peaks, secular, sidebands, bin_width })
}

/// Amplitude of the Hann-windowed Fourier component at `omega` in each lab coordinate.
pub fn component_amplitude(states: &[IonState], omega: f64) -> [f64; 3] {
    let n = states.len();
    if n < 2 {
        return [0.0; 3];
    }
    let mut acc = [Complex::new(0.0, 0.0); 3];
    let mut mean = [0.0; 3];
    for s in states {
        for k in 0..3 {
            mean[k] += s.position[k] / n as f64;
        }
    }
    let mut wsum = 0.0;
    for (i, s) in states.iter().enumerate() {
        let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos();
        wsum += w;
        let ph = Complex::from_polar(1.0, -omega * s.time);
        for k in 0..3 {
            acc[k] += ph * (w * (s.position[k] - mean[k]));
        }
    }
    acc.map(|c| 2.0 * c.norm() / wsum)
}

/// Integration length and resolution for micromotion runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicromotionOptions {
    pub rf_cycles: usize,
    pub steps_per_cycle: usize,
}

impl Default for MicromotionOptions {
    fn default() -> Self {
        MicromotionOptions { rf_cycles: 400, steps_per_cycle: 40 }
    }
}

/// Driven motion at the rf frequency (m, per lab axis) for an ion released at the
/// equilibrium reached with `dc_offsets` (volts added per electrode).
pub fn micromotion_amplitude(
    source: &dyn FieldSource,
    drive: &DriveConfig,
    dc_offsets: &BTreeMap<String, f64>,
    settings: &AnalysisSettings,
    opts: &MicromotionOptions,
) -> Result<[f64; 3], DynamicsError> {
    if opts.steps_per_cycle < 40 || opts.rf_cycles < 10 {
        return Err(DynamicsError::InvalidConfig("need >= 40 steps per cycle and >= 10 cycles".into()));
    }
    let mut d = drive.clone();
    for (k, v) in dc_offsets {
        d = d.with_dc_offset(k, *v);
    }
    let eq = find_equilibrium(source, &d, settings)?;
    let dt = std::f64::consts::TAU / (d.omega_rf_rad_per_s * opts.steps_per_cycle as f64);
    let traj = integrate(source, &d, IonState::at_rest(eq), (opts.rf_cycles * opts.steps_per_cycle) as f64 * dt, dt)?;
    Ok(component_amplitude(&traj.states, d.omega_rf_rad_per_s))
}

/// Frequency scan with a small extra ac voltage on one electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickleConfig {
    pub electrode: String,
    pub amplitude_v: f64,
    pub omega_start: f64,
    pub omega_stop: f64,
    pub omega_step: f64,
    /// Integration time per scan point, s.
    pub duration_s: f64,
    #[serde(default = "default_steps_per_cycle")]
    pub steps_per_cycle: usize,
}

fn default_steps_per_cycle() -> usize {
    40
}

impl TickleConfig {
    /// `points` frequencies spanning `center * (1 +- rel_half_width)`, each integrated for
    /// `cycles` periods of `center`.
    pub fn around(electrode: &str, amplitude_v: f64, center: f64, rel_half_width: f64, points: usize, cycles: f64) -> Self {
        let lo = center * (1.0 - rel_half_width);
        let hi = center * (1.0 + rel_half_width);
        TickleConfig {
            electrode: electrode.to_string(),
            amplitude_v,
            omega_start: lo,
            omega_stop: hi,
            omega_step: (hi - lo) / (points.max(2) - 1) as f64,
            duration_s: cycles * std::f64::consts::TAU / center,
            steps_per_cycle: 40,
        }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = ((self.omega_stop - self.omega_start) / self.omega_step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.omega_start + i as f64 * self.omega_step).collect()
    }

    pub fn validate(&self, drive: &DriveConfig) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::InvalidConfig(m.to_string()));
        if !(self.omega_step > 0.0 && self.omega_start > 0.0 && self.omega_stop >= self.omega_start) {
            return bad("scan needs 0 < start <= stop and step > 0");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive");
        }
        if !(self.amplitude_v >= 0.0 && self.amplitude_v <= 0.01 * drive.u_rf_peak_v.abs()) {
            return bad("tickle amplitude must lie in [0, 1% of the rf amplitude]");
        }
        if self.steps_per_cycle < 40 {
            return bad("steps_per_cycle must be >= 40");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TicklePoint {
    pub omega: f64,
    /// Mean secular kinetic energy over the last 20% of the run, J.
    pub response_j: f64,
}

/// Response curve of the ion to the tickle, started at rest at the equilibrium.
/// Secular velocity is the velocity averaged over each rf cycle.
pub fn tickle_scan(
    source: &dyn FieldSource,
    drive: &DriveConfig,
    settings: &AnalysisSettings,
    config: &TickleConfig,
) -> Result<Vec<TicklePoint>, DynamicsError> {
    config.validate(drive)?;
    let eq = find_equilibrium(source, drive, settings)?;
    let spc = config.steps_per_cycle;
    let dt = std::f64::consts::TAU / (drive.omega_rf_rad_per_s * spc as f64);
    let cycles = (config.duration_s / (dt * spc as f64)).ceil().max(5.0) as usize;
    let keep_from = cycles - (cycles / 5).max(1);
    let mass = drive.species.mass_kg;
    let freqs = config.frequencies();
    let results = par::map_slice(&freqs, |&w| -> Result<TicklePoint, DynamicsError> {
        let ff = ForceField::new(source, drive, Some((&config.electrode, config.amplitude_v, w)))?;
        let mut sum_v = Vec3::ZERO;
        let mut count = 0usize;
        let mut energy = 0.0;
        let mut blocks = 0usize;
        ff.run(IonState::at_rest(eq), cycles * spc, dt, |s| {
            count += 1;
            if count == 1 {
                return;
            }
            let step = count - 2;
            let cycle = step / spc;
            if cycle >= keep_from {
                sum_v += s.velocity;
                if (step + 1) % spc == 0 {
                    let v = sum_v / spc as f64;
                    energy += 0.5 * mass * v.norm2();
                    blocks += 1;
                    sum_v = Vec3::ZERO;
                }
            }
        })?;
        Ok(TicklePoint { omega: w, response_j: energy / blocks.max(1) as f64 })
    });
    results.into_iter().collect()
}

/// Scan point with the largest response.
pub fn tickle_peak(points: &[TicklePoint]) -> Option<TicklePoint> {
    points.iter().copied().max_by(|a, b| a.response_j.total_cmp(&b.response_j))
}

#[cfg(test)]
mod tests;
