//! Pseudopotential, rf null, secular frequencies, Mathieu parameters, stability and depth.

pub mod depth;
pub mod stability;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constants::{joule_to_ev, ATOMIC_MASS_UNIT, CA40_MASS_U, ELEMENTARY_CHARGE, TWO_PI};
use crate::field_solver::{FieldError, FieldSource};
use crate::geometry::ElectrodeRole;
use crate::math::{Point3, Vec3};

pub use depth::{trap_depth, DepthOptions};
pub use stability::{characteristic_exponent, coupled_is_stable, is_stable, stability_boundary_q, stability_check};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid drive: {0}")]
    InvalidDrive(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { what: &'static str, iterations: usize, residual: f64 },
    #[error("point {0:?} lies inside a conductor")]
    InsideConductor([f64; 3]),
    #[error("escape path not enclosed by the sampled region; enlarge the region ({0})")]
    Unbounded(String),
}

/// Ion mass and charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    pub mass_kg: f64,
    pub charge_c: f64,
}

impl IonSpecies {
    /// Singly charged calcium-40.
    pub fn ca40() -> Self {
        IonSpecies { mass_kg: CA40_MASS_U * ATOMIC_MASS_UNIT, charge_c: ELEMENTARY_CHARGE }
    }
}

/// Rf and dc drive. The rf amplitude goes to the named electrodes (default: every RF-role electrode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub omega_rf_rad_per_s: f64,
    pub u_rf_peak_v: f64,
    #[serde(default)]
    pub rf_electrodes: Option<Vec<String>>,
    /// Static voltage per electrode name; unlisted electrodes are grounded.
    #[serde(default)]
    pub dc_voltages_v: BTreeMap<String, f64>,
    pub species: IonSpecies,
}

const DEFAULT_DRIVE_JSON: &str = include_str!("../../configs/default_drive.json");

impl Default for DriveConfig {
    /// 15.82 MHz, 30 V peak rf, 60 V on each endcap of the default trap, 40Ca+.
    fn default() -> Self {
        serde_json::from_str(DEFAULT_DRIVE_JSON).expect("bundled default drive is valid")
    }
}

impl DriveConfig {
    pub fn with_rf(&self, u_rf: f64) -> Self {
        DriveConfig { u_rf_peak_v: u_rf, ..self.clone() }
    }

    /// Same drive with every dc voltage multiplied by `s`.
    pub fn with_dc_scaled(&self, s: f64) -> Self {
        let mut d = self.clone();
        d.dc_voltages_v.values_mut().for_each(|v| *v *= s);
        d
    }

    /// Add `dv` to the dc voltage of `name`.
    pub fn with_dc_offset(&self, name: &str, dv: f64) -> Self {
        let mut d = self.clone();
        *d.dc_voltages_v.entry(name.to_string()).or_insert(0.0) += dv;
        d
    }

    /// Same drive with endcap `name` held at 0 V (a shorted lead).
    pub fn with_shorted_endcap(&self, name: &str) -> Result<Self, AnalysisError> {
        let mut d = self.clone();
        match d.dc_voltages_v.get_mut(name) {
            Some(v) => *v = 0.0,
            None => return Err(AnalysisError::InvalidDrive(format!("no dc voltage set on `{name}`"))),
        }
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.omega_rf_rad_per_s > 0.0 && self.omega_rf_rad_per_s.is_finite()) {
            return Err(AnalysisError::InvalidDrive("omega_rf_rad_per_s must be positive".into()));
        }
        if !self.u_rf_peak_v.is_finite() || self.dc_voltages_v.values().any(|v| !v.is_finite()) {
            return Err(AnalysisError::InvalidDrive("voltages must be finite".into()));
        }
        if !(self.species.mass_kg > 0.0) || self.species.charge_c == 0.0 || !self.species.charge_c.is_finite() {
            return Err(AnalysisError::InvalidDrive("species needs positive mass and nonzero charge".into()));
        }
        Ok(())
    }

    /// Bind the drive to a field source's electrode ordering.
    pub fn resolve(&self, source: &dyn FieldSource) -> Result<ResolvedDrive, AnalysisError> {
        self.validate()?;
        let names = source.electrode_names();
        let roles = source.electrode_roles();
        let rf_unit: Vec<f64> = match &self.rf_electrodes {
            None => roles.iter().map(|r| if *r == ElectrodeRole::Rf { 1.0 } else { 0.0 }).collect(),
            Some(list) => {
                for n in list {
                    if !names.contains(n) {
                        return Err(AnalysisError::InvalidDrive(format!("unknown rf electrode `{n}`")));
                    }
                }
                names.iter().map(|n| if list.contains(n) { 1.0 } else { 0.0 }).collect()
            }
        };
        for n in self.dc_voltages_v.keys() {
            if !names.contains(n) {
                return Err(AnalysisError::InvalidDrive(format!("unknown dc electrode `{n}`")));
            }
        }
        let dc = names.iter().map(|n| self.dc_voltages_v.get(n).copied().unwrap_or(0.0)).collect();
        Ok(ResolvedDrive {
            rf_unit,
            dc,
            u_rf: self.u_rf_peak_v,
            omega: self.omega_rf_rad_per_s,
            mass: self.species.mass_kg,
            charge: self.species.charge_c,
        })
    }
}

/// Drive expressed as weight vectors over a source's electrodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDrive {
    /// Rf weights per electrode (multiplied by `u_rf`).
    pub rf_unit: Vec<f64>,
    /// Dc volts per electrode.
    pub dc: Vec<f64>,
    pub u_rf: f64,
    pub omega: f64,
    pub mass: f64,
    pub charge: f64,
}

/// Values of the drive-combined fields at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSample {
    /// Rf potential and field per volt of rf amplitude.
    pub rf_potential: f64,
    pub rf_field: Vec3,
    /// Static potential (V) and field (V/m).
    pub dc_potential: f64,
    pub dc_field: Vec3,
}

impl ResolvedDrive {
    pub fn sample(&self, source: &dyn FieldSource, p: Point3) -> Result<DriveSample, AnalysisError> {
        if source.inside_conductor(p) {
            return Err(AnalysisError::InsideConductor(p.to_array()));
        }
        let unit = source.unit_fields(p)?;
        let mut s = DriveSample { rf_potential: 0.0, rf_field: Vec3::ZERO, dc_potential: 0.0, dc_field: Vec3::ZERO };
        for (k, (phi, e)) in unit.iter().enumerate() {
            let (w, v) = (self.rf_unit[k], self.dc[k]);
            if w != 0.0 {
                s.rf_potential += w * phi;
                s.rf_field += *e * w;
            }
            if v != 0.0 {
                s.dc_potential += v * phi;
                s.dc_field += *e * v;
            }
        }
        Ok(s)
    }

    /// `q^2 / (4 m Omega^2)`: converts |E_rf|^2 to pseudopotential energy (J).
    pub fn ponderomotive_factor(&self) -> f64 {
        self.charge * self.charge / (4.0 * self.mass * self.omega * self.omega)
    }

    /// Total pseudopotential energy in joules.
    pub fn energy(&self, source: &dyn FieldSource, p: Point3) -> Result<f64, AnalysisError> {
        let s = self.sample(source, p)?;
        Ok(self.energy_of(&s))
    }

    pub fn energy_of(&self, s: &DriveSample) -> f64 {
        self.ponderomotive_factor() * self.u_rf * self.u_rf * s.rf_field.norm2() + self.charge * s.dc_potential
    }
}

/// Pseudopotential (rf part plus static potential energy) in eV.
pub fn pseudopotential(source: &dyn FieldSource, drive: &DriveConfig, p: Point3) -> Result<f64, AnalysisError> {
    let r = drive.resolve(source)?;
    Ok(joule_to_ev(r.energy(source, p)?))
}

/// Length scale and starting point for the searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    /// Characteristic ion-electrode distance; finite-difference steps are r0 / 200.
    pub r0: f64,
    pub guess: Point3,
    #[serde(default)]
    pub depth: Option<DepthOptions>,
}

impl AnalysisSettings {
    pub fn new(r0: f64) -> Self {
        AnalysisSettings { r0, guess: Vec3::ZERO, depth: Some(DepthOptions::default()) }
    }

    pub fn without_depth(mut self) -> Self {
        self.depth = None;
        self
    }

    fn step(&self) -> f64 {
        self.r0 / 200.0
    }
}

/// Largest |E_rf| (per applied volt) accepted at the rf null, V/m.
pub const NULL_TOLERANCE: f64 = 1e-3;
const MAX_ITERATIONS: usize = 100;

fn solve3(a: &Matrix3<f64>, b: Vec3) -> Option<Vec3> {
    let x = a.lu().solve(&nalgebra::Vector3::new(b.x, b.y, b.z))?;
    Some(Vec3::new(x[0], x[1], x[2]))
}

fn to_m3(h: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| h[i][j])
}

/// Jacobian d E_i / d x_j of the unit rf field by central differences.
fn rf_jacobian(source: &dyn FieldSource, d: &ResolvedDrive, p: Point3, h: f64) -> Result<Matrix3<f64>, AnalysisError> {
    let mut j = Matrix3::zeros();
    for k in 0..3 {
        let mut dp = Vec3::ZERO;
        dp.set(k, h);
        let ep = d.sample(source, p + dp)?.rf_field;
        let em = d.sample(source, p - dp)?.rf_field;
        let col = (ep - em) / (2.0 * h);
        for i in 0..3 {
            j[(i, k)] = col[i];
        }
    }
    Ok(j)
}

/// Point where the rf field amplitude vanishes, by damped Gauss-Newton on |E_rf|^2.
///
/// Each step solves `(J^T J + lambda I) dx = -J^T E` with `lambda = 1e-9 tr(J^T J)`, which
/// keeps steps along the nearly field-free trap axis small, then halves the step
/// until |E_rf| decreases.
pub fn find_rf_null(
    source: &dyn FieldSource,
    drive: &DriveConfig,
    settings: &AnalysisSettings,
) -> Result<Point3, AnalysisError> {
    let d = drive.resolve(source)?;
    let mut x = settings.guess;
    let mut e = d.sample(source, x)?.rf_field;
    for _ in 0..MAX_ITERATIONS {
        if e.norm() < NULL_TOLERANCE {
            return Ok(x);
        }
        let j = rf_jacobian(source, &d, x, settings.step())?;
        let jtj = j.transpose() * j;
        let lambda = 1e-9 * jtj.trace();
        let rhs = j.transpose() * nalgebra::Vector3::new(-e.x, -e.y, -e.z);
        let a = jtj + Matrix3::identity() * lambda;
        let Some(mut dx) = solve3(&a, Vec3::new(rhs[0], rhs[1], rhs[2])) else { break };
        let mut accepted = false;
        for _ in 0..40 {
            let cand = x + dx;
            if let Ok(s) = d.sample(source, cand) {
                if s.rf_field.norm() < e.norm() {
                    x = cand;
                    e = s.rf_field;
                    accepted = true;
                    break;
                }
            }
            dx = dx * 0.5;
        }
        if !accepted {
            break;
        }
    }
    if e.norm() < NULL_TOLERANCE {
        return Ok(x);
    }
    Err(AnalysisError::NoConvergence { what: "rf null search", iterations: MAX_ITERATIONS, residual: e.norm() })
}

/// Central-difference Hessian of `f` with one Richardson extrapolation (steps h and h/2).
pub fn hessian_fd(f: &dyn Fn(Point3) -> Result<f64, AnalysisError>, p: Point3, h: f64) -> Result<[[f64; 3]; 3], AnalysisError> {
    let raw = |h: f64| -> Result<[[f64; 3]; 3], AnalysisError> {
        let f0 = f(p)?;
        let mut out = [[0.0; 3]; 3];
        let unit = [Vec3::X, Vec3::Y, Vec3::Z];
        for i in 0..3 {
            let fp = f(p + unit[i] * h)?;
            let fm = f(p - unit[i] * h)?;
            out[i][i] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let fpp = f(p + (unit[i] + unit[j]) * h)?;
                let fpm = f(p + (unit[i] - unit[j]) * h)?;
                let fmp = f(p + (unit[j] - unit[i]) * h)?;
                let fmm = f(p - (unit[i] + unit[j]) * h)?;
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        Ok(out)
    };
    let coarse = raw(h)?;
    let fine = raw(0.5 * h)?;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (4.0 * fine[i][j] - coarse[i][j]) / 3.0;
        }
    }
    Ok(out)
}

/// Central-difference gradient.
fn gradient_fd(f: &dyn Fn(Point3) -> Result<f64, AnalysisError>, p: Point3, h: f64) -> Result<Vec3, AnalysisError> {
    let mut g = Vec3::ZERO;
    for k in 0..3 {
        let mut dp = Vec3::ZERO;
        dp.set(k, h);
        g.set(k, (f(p + dp)? - f(p - dp)?) / (2.0 * h));
    }
    Ok(g)
}

/// Minimum of the total pseudopotential (rf plus static), by damped Newton iteration.
/// Differs from the rf null when static fields push the ion off the null.
pub fn find_equilibrium(
    source: &dyn FieldSource,
    drive: &DriveConfig,
    settings: &AnalysisSettings,
) -> Result<Point3, AnalysisError> {
    let d = drive.resolve(source)?;
    let f = |p: Point3| d.energy(source, p);
    let h = settings.step();
    let mut x = settings.guess;
    let mut fx = f(x)?;
    for _ in 0..MAX_ITERATIONS {
        let g = gradient_fd(&f, x, h)?;
        let hess = to_m3(&hessian_fd(&f, x, h)?);
        let mut dx = match solve3(&hess, -g) {
            Some(v) if v.is_finite() => v,
            _ => -g * (h / g.norm().max(1e-300)),
        };
        if dx.dot(g) > 0.0 {
            dx = -dx;
        }
        if dx.norm() < 1e-13 {
            return Ok(x);
        }
        let mut accepted = false;
        for _ in 0..40 {
            if let Ok(fc) = f(x + dx) {
                if fc <= fx {
                    x = x + dx;
                    fx = fc;
                    accepted = true;
                    break;
                }
            }
            dx = dx * 0.5;
        }
        if !accepted || dx.norm() < 1e-13 {
            return Ok(x);
        }
    }
    Err(AnalysisError::NoConvergence { what: "equilibrium search", iterations: MAX_ITERATIONS, residual: fx })
}

/// Secular-motion summary at the rf null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapCharacterization {
    pub rf_null: [f64; 3],
    /// Principal axes: radial 1, radial 2, axial.
    pub axes: [[f64; 3]; 3],
    /// Curvature of the total pseudopotential along each axis, J/m^2.
    pub curvatures: [f64; 3],
    /// Secular angular frequencies, rad/s; `None` where the axis is not confining.
    pub omega: [Option<f64>; 3],
    pub mathieu_q: [f64; 3],
    pub mathieu_a: [f64; 3],
    /// Radial entries come from one coupled Floquet test of the radial pair.
    pub stable: [bool; 3],
    pub depth_ev: Option<f64>,
    pub saddle: Option<[f64; 3]>,
}

impl TrapCharacterization {
    pub fn omega_hz(&self) -> [Option<f64>; 3] {
        self.omega.map(|w| w.map(|w| w / TWO_PI))
    }

    /// |w1 - w2| / mean of the radial pair.
    pub fn radial_asymmetry(&self) -> Option<f64> {
        let (a, b) = (self.omega[0]?, self.omega[1]?);
        Some((a - b).abs() / (0.5 * (a + b)))
    }
}

fn canonical_sign(v: Vec3) -> Vec3 {
    let a = v.to_array();
    let k = (0..3).max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs())).unwrap();
    if a[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// Hessian of the unit-rf and dc potentials at `p`.
pub fn potential_hessians(
    source: &dyn FieldSource,
    d: &ResolvedDrive,
    p: Point3,
    h: f64,
) -> Result<([[f64; 3]; 3], [[f64; 3]; 3]), AnalysisError> {
    let rf = hessian_fd(&|x| Ok(d.sample(source, x)?.rf_potential), p, h)?;
    let dc = hessian_fd(&|x| Ok(d.sample(source, x)?.dc_potential), p, h)?;
    Ok((rf, dc))
}

/// Full characterization: rf null, principal axes, secular frequencies, Mathieu q and a,
/// per-axis stability and (if requested) trap depth.
pub fn characterize(
    source: &dyn FieldSource,
    drive: &DriveConfig,
    settings: &AnalysisSettings,
) -> Result<TrapCharacterization, AnalysisError> {
    let d = drive.resolve(source)?;
    let null = find_rf_null(source, drive, settings)?;
    let h = settings.step();
    let total = to_m3(&hessian_fd(&|x| d.energy(source, x), null, h)?);
    let (hrf, hdc) = potential_hessians(source, &d, null, h)?;
    let (hrf, hdc) = (to_m3(&hrf), to_m3(&hdc));

    let eig = SymmetricEigen::new(total);
    let vecs: Vec<Vec3> = (0..3).map(|i| {
        let c = eig.eigenvectors.column(i);
        Vec3::new(c[0], c[1], c[2])
    }).collect();
    let ax = (0..3).max_by(|&i, &j| vecs[i].z.abs().total_cmp(&vecs[j].z.abs())).unwrap();
    let rad: Vec<usize> = (0..3).filter(|&i| i != ax).collect();
    let (mut r1, mut r2) = (vecs[rad[0]], vecs[rad[1]]);
    let (l1, l2) = (eig.eigenvalues[rad[0]], eig.eigenvalues[rad[1]]);
    let quad = |m: &Matrix3<f64>, u: Vec3| {
        let v = nalgebra::Vector3::new(u.x, u.y, u.z);
        (v.transpose() * m * v)[0]
    };
    if (l1 - l2).abs() <= 1e-2 * l1.abs().max(l2.abs()) {
        // nearly degenerate: fix the radial pair by the rf curvature within their plane
        let (a, b, c) = (quad(&hrf, r1), quad(&hrf, r2), {
            let v1 = nalgebra::Vector3::new(r1.x, r1.y, r1.z);
            let v2 = nalgebra::Vector3::new(r2.x, r2.y, r2.z);
            (v1.transpose() * hrf * v2)[0]
        });
        let theta = 0.5 * (2.0 * c).atan2(a - b);
        let (s, co) = theta.sin_cos();
        let (n1, n2) = (r1 * co + r2 * s, r2 * co - r1 * s);
        r1 = n1;
        r2 = n2;
    }
    if quad(&hrf, r2) > quad(&hrf, r1) {
        std::mem::swap(&mut r1, &mut r2);
    }
    let axes = [canonical_sign(r1), canonical_sign(r2), canonical_sign(vecs[ax])];
    let m_omega2 = d.mass * d.omega * d.omega;
    let mut out = TrapCharacterization {
        rf_null: null.to_array(),
        axes: axes.map(|a| a.to_array()),
        curvatures: [0.0; 3],
        omega: [None; 3],
        mathieu_q: [0.0; 3],
        mathieu_a: [0.0; 3],
        stable: [false; 3],
        depth_ev: None,
        saddle: None,
    };
    let bilinear = |m: &Matrix3<f64>, u: Vec3, v: Vec3| {
        let (u, v) = (nalgebra::Vector3::new(u.x, u.y, u.z), nalgebra::Vector3::new(v.x, v.y, v.z));
        (u.transpose() * m * v)[0]
    };
    let qf = 2.0 * d.charge * d.u_rf / m_omega2;
    let af = 4.0 * d.charge / m_omega2;
    for (i, u) in axes.iter().enumerate() {
        out.curvatures[i] = quad(&total, *u);
        out.mathieu_q[i] = qf * quad(&hrf, *u);
        out.mathieu_a[i] = af * quad(&hdc, *u);
    }
    // the radial pair is tested as a coupled system: the rf and dc principal axes need not agree
    let block = |m: &Matrix3<f64>, f: f64| {
        let mut b = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                b[i][j] = f * bilinear(m, axes[i], axes[j]);
            }
        }
        b
    };
    let radial = coupled_is_stable(block(&hdc, af), block(&hrf, qf));
    out.stable = [radial, radial, is_stable(out.mathieu_q[2], out.mathieu_a[2])];
    for i in 0..3 {
        if out.stable[i] && out.curvatures[i] > 0.0 {
            out.omega[i] = Some((out.curvatures[i] / d.mass).sqrt());
        }
    }
    if let Some(opts) = &settings.depth {
        let (depth, saddle) = trap_depth(source, drive, &AnalysisSettings { guess: null, ..*settings }, opts)?;
        out.depth_ev = Some(depth);
        out.saddle = Some(saddle.to_array());
    }
    Ok(out)
}
