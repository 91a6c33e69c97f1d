//! Stray fields from charged dielectric patches and the dc offsets that cancel them.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constants::{e_per_um2_to_c_per_m2, COULOMB_K};
use crate::dynamics::{micromotion_amplitude, DynamicsError, MicromotionOptions};
use crate::field_solver::{sample_grid, Factorization, FieldError, FieldSource, GridRegion, Panel, PanelSystem, SolverOptions};
use crate::geometry::primitives::disk;
use crate::geometry::{validate_mesh, ElectrodeRole, SurfaceMesh};
use crate::math::{Point3, Vec3};
use crate::par;
use crate::trap_analysis::{find_equilibrium, find_rf_null, potential_hessians, AnalysisError, AnalysisSettings, DriveConfig};

/// Name of the extra channel carrying the stray field in [`WithStray`].
pub const STRAY_CHANNEL: &str = "stray";

#[derive(Debug, thiserror::Error)]
pub enum CompensationError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("unknown compensation electrode `{0}`")]
    UnknownElectrode(String),
    #[error("ion is not held with the {which} stray field: {reason}")]
    NotTrapped { which: &'static str, reason: String, offsets: Box<OffsetSolution> },
    #[error("compensation electrodes span rank {rank}; {unexplained:.3e} of the stray field at the null is out of reach")]
    RankDeficient { rank: usize, unexplained: f64 },
}

/// Uniformly charged surface region.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargedPatch {
    pub mesh: SurfaceMesh,
    /// C/m^2.
    pub sigma: f64,
}

impl ChargedPatch {
    /// Patch with density given in elementary charges per square micrometer.
    pub fn new(mesh: SurfaceMesh, sigma_e_per_um2: f64) -> Result<Self, CompensationError> {
        if !sigma_e_per_um2.is_finite() {
            return Err(CompensationError::InvalidPatch("density must be finite".into()));
        }
        if mesh.is_empty() || !(mesh.total_area() > 0.0) || !mesh.total_area().is_finite() {
            return Err(CompensationError::InvalidPatch("mesh has no finite area".into()));
        }
        Ok(ChargedPatch { mesh, sigma: e_per_um2_to_c_per_m2(sigma_e_per_um2) })
    }

    pub fn sigma_e_per_um2(&self) -> f64 {
        self.sigma / e_per_um2_to_c_per_m2(1.0)
    }

    pub fn charge(&self) -> f64 {
        self.sigma * self.mesh.total_area()
    }

    pub fn scaled(&self, s: f64) -> Self {
        ChargedPatch { mesh: self.mesh.clone(), sigma: self.sigma * s }
    }
}

/// Serialized patch description, lengths in micrometers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub sigma_e_per_um2: f64,
    pub shape: PatchShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatchShape {
    Disk { center_um: [f64; 3], normal: [f64; 3], inner_diameter_um: f64, outer_diameter_um: f64, rings: usize },
    Mesh { vertices_um: Vec<[f64; 3]>, triangles: Vec<[usize; 3]> },
}

impl PatchSpec {
    pub fn to_patch(&self) -> Result<ChargedPatch, CompensationError> {
        let mesh = match &self.shape {
            PatchShape::Disk { center_um, normal, inner_diameter_um, outer_diameter_um, rings } => {
                if !(outer_diameter_um > inner_diameter_um) || *inner_diameter_um < 0.0 || *rings == 0 {
                    return Err(CompensationError::InvalidPatch("need 0 <= inner < outer diameter and rings >= 1".into()));
                }
                let n = Vec3::from_array(*normal);
                if n.try_normalize().is_none() {
                    return Err(CompensationError::InvalidPatch("zero normal".into()));
                }
                disk(Vec3::from_array(*center_um) * 1e-6, n, inner_diameter_um * 0.5e-6, outer_diameter_um * 0.5e-6, *rings)
            }
            PatchShape::Mesh { vertices_um, triangles } => {
                if triangles.iter().flatten().any(|&i| i >= vertices_um.len()) {
                    return Err(CompensationError::InvalidPatch("triangle index out of range".into()));
                }
                SurfaceMesh::new(vertices_um.iter().map(|v| Vec3::from_array(*v) * 1e-6).collect(), triangles.clone())
            }
        };
        ChargedPatch::new(mesh, self.sigma_e_per_um2)
    }
}

/// Two facing fiber facets of a Fabry-Perot cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberCavity {
    pub center: Point3,
    /// Cavity axis (normalized on use).
    pub axis: Vec3,
    /// Mirror separation, m.
    pub length: f64,
    pub outer_diameter: f64,
    /// Uncharged central hole; 0 for a full facet.
    pub inner_diameter: f64,
    pub rings: usize,
}

impl Default for FiberCavity {
    fn default() -> Self {
        FiberCavity { center: Vec3::ZERO, axis: Vec3::X, length: 350e-6, outer_diameter: 125e-6, inner_diameter: 0.0, rings: 6 }
    }
}

impl FiberCavity {
    /// Facet specs at `center +- axis * length / 2`, normals facing the cavity center.
    pub fn facets(&self, sigma_e_per_um2: f64) -> [PatchSpec; 2] {
        let a = self.axis.normalize();
        let spec = |s: f64| PatchSpec {
            sigma_e_per_um2,
            shape: PatchShape::Disk {
                center_um: ((self.center + a * (s * self.length / 2.0)) * 1e6).to_array(),
                normal: (a * -s).to_array(),
                inner_diameter_um: self.inner_diameter * 1e6,
                outer_diameter_um: self.outer_diameter * 1e6,
                rings: self.rings,
            },
        };
        [spec(1.0), spec(-1.0)]
    }
}

/// Field of fixed patch charges plus the charges they induce on grounded conductors.
#[derive(Debug, Clone)]
pub struct StrayField {
    sources: Vec<(Panel, f64)>,
    conductors: Option<(PanelSystem, Vec<f64>)>,
}

impl StrayField {
    /// Patches in free space.
    pub fn free_space(patches: &[ChargedPatch]) -> Result<Self, CompensationError> {
        let mut sources = Vec::new();
        for p in patches {
            if !validate_mesh(&p.mesh).is_empty() {
                return Err(CompensationError::InvalidPatch("degenerate patch mesh".into()));
            }
            if p.sigma != 0.0 {
                sources.extend((0..p.mesh.len()).map(|i| (Panel::new(p.mesh.triangle(i)), p.sigma)));
            }
        }
        Ok(StrayField { sources, conductors: None })
    }

    /// Patches next to the conductors of `system`, all held at 0 V. Reuses the
    /// factorization of the same system.
    pub fn new(system: &PanelSystem, factorization: &Factorization, patches: &[ChargedPatch]) -> Result<Self, CompensationError> {
        let mut out = Self::free_space(patches)?;
        if out.sources.is_empty() {
            out.conductors = Some((system.clone(), vec![0.0; system.len()]));
            return Ok(out);
        }
        let rhs: Vec<f64> = par::map_range(system.len(), |i| -out.free_potential(system.panels[i].centroid));
        let rhs: Vec<f64> = rhs.into_iter().map(|v| v / COULOMB_K).collect();
        let (x, residual) = factorization.solve(std::slice::from_ref(&rhs));
        if residual > crate::field_solver::RESIDUAL_TOLERANCE {
            return Err(FieldError::NonConvergence { residual }.into());
        }
        let induced: Vec<f64> = x.into_iter().next().unwrap_or_default();
        if induced.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::Singular.into());
        }
        out.conductors = Some((system.clone(), induced));
        Ok(out)
    }

    /// Factorizes `system` first; prefer [`StrayField::new`] when a factorization exists.
    pub fn solve(system: &PanelSystem, patches: &[ChargedPatch], options: &SolverOptions) -> Result<Self, CompensationError> {
        let f = system.factorize(options)?;
        Self::new(system, &f, patches)
    }

    pub fn is_zero(&self) -> bool {
        self.sources.is_empty()
    }

    /// Total induced charge on the conductors, C.
    pub fn induced_charge(&self) -> f64 {
        self.conductors
            .as_ref()
            .map(|(s, sig)| s.panels.iter().zip(sig).map(|(p, v)| p.area * v).sum())
            .unwrap_or(0.0)
    }

    fn free_potential(&self, p: Point3) -> f64 {
        COULOMB_K * self.sources.iter().map(|(panel, s)| s * panel.potential(p)).sum::<f64>()
    }

    /// `(potential V, field V/m)` at `p`.
    pub fn evaluate(&self, p: Point3) -> Result<(f64, Vec3), FieldError> {
        let mut phi = 0.0;
        let mut g = Vec3::ZERO;
        for (panel, s) in &self.sources {
            let limit = 0.1 * panel.diameter;
            if p.distance(panel.centroid) < 2.0 * panel.diameter && panel.distance_to(p) < limit {
                return Err(FieldError::TooCloseToSurface { point: p.to_array(), distance: panel.distance_to(p), limit });
            }
            let (k, grad) = panel.potential_and_gradient(p);
            phi += s * k;
            g -= grad * *s;
        }
        let (mut phi, mut e) = (phi * COULOMB_K, g * COULOMB_K);
        if let Some((system, sigma)) = &self.conductors {
            let (ip, ie) = system.field_from_charges(&[sigma.as_slice()], p)?[0];
            phi += ip;
            e += ie;
        }
        Ok((phi, e))
    }

    pub fn field(&self, p: Point3) -> Result<Vec3, FieldError> {
        Ok(self.evaluate(p)?.1)
    }

    /// Curvature of the stray potential at `p`, V/m^2, from differences of the field.
    pub fn hessian(&self, p: Point3, h: f64) -> Result<[[f64; 3]; 3], FieldError> {
        let mut out = [[0.0; 3]; 3];
        for j in 0..3 {
            let d = Vec3::unit(j) * h;
            let g = (self.field(p + d)? - self.field(p - d)?) / (-2.0 * h);
            for (i, row) in out.iter_mut().enumerate() {
                row[j] = g[i];
            }
        }
        for i in 0..3 {
            for j in 0..i {
                let m = 0.5 * (out[i][j] + out[j][i]);
                out[i][j] = m;
                out[j][i] = m;
            }
        }
        Ok(out)
    }
}

/// Stray field in a grounded-conductor system at one point (factorizes `system`).
pub fn stray_field(system: &PanelSystem, patches: &[ChargedPatch], point: Point3) -> Result<Vec3, CompensationError> {
    Ok(StrayField::solve(system, patches, &SolverOptions::default())?.field(point)?)
}

/// A field source with the stray field appended as one more channel, [`STRAY_CHANNEL`],
/// meant to be driven at 1 V.
pub struct WithStray<'a> {
    inner: &'a dyn FieldSource,
    stray: &'a StrayField,
    names: Vec<String>,
    roles: Vec<ElectrodeRole>,
}

impl<'a> WithStray<'a> {
    pub fn new(inner: &'a dyn FieldSource, stray: &'a StrayField) -> Self {
        let mut names = inner.electrode_names().to_vec();
        names.push(STRAY_CHANNEL.to_string());
        let mut roles = inner.electrode_roles().to_vec();
        roles.push(ElectrodeRole::Ground);
        WithStray { inner, stray, names, roles }
    }
}

impl FieldSource for WithStray<'_> {
    fn electrode_names(&self) -> &[String] {
        &self.names
    }

    fn electrode_roles(&self) -> &[ElectrodeRole] {
        &self.roles
    }

    fn inside_conductor(&self, p: Point3) -> bool {
        self.inner.inside_conductor(p)
    }

    fn unit_fields(&self, p: Point3) -> Result<Vec<(f64, Vec3)>, FieldError> {
        let mut v = self.inner.unit_fields(p)?;
        v.push(self.stray.evaluate(p)?);
        Ok(v)
    }
}

/// Drive with the stray channel switched on.
pub fn with_stray_drive(drive: &DriveConfig) -> DriveConfig {
    let mut d = drive.clone();
    d.dc_voltages_v.insert(STRAY_CHANNEL.to_string(), 1.0);
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationOptions {
    /// Electrodes allowed to carry offsets; default: every radial blade.
    pub electrodes: Option<Vec<String>>,
    /// Largest fraction of the stray field at the null that may stay uncancelled.
    pub span_tolerance: f64,
    /// Run rf-resolved dynamics before and after compensation.
    pub micromotion: Option<MicromotionOptions>,
    /// Half-width and spacing of the local grids sampled for the dynamics runs, m.
    pub grid_half_width: f64,
    pub grid_spacing: f64,
}

impl Default for CompensationOptions {
    fn default() -> Self {
        CompensationOptions { electrodes: None, span_tolerance: 1e-3, micromotion: None, grid_half_width: 8e-6, grid_spacing: 2e-6 }
    }
}

/// Offsets and the fields they cancel at the rf null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSolution {
    /// dc offsets, V, on the compensation electrodes only.
    pub offsets_v: BTreeMap<String, f64>,
    pub rf_null: [f64; 3],
    /// Stray field at the rf null before compensation, V/m.
    pub stray_field_v_per_m: [f64; 3],
    /// Static field of the uncompensated dc drive at the null, V/m.
    pub drive_field_v_per_m: [f64; 3],
    /// Static field left at the null after compensation, V/m.
    pub residual_field_v_per_m: [f64; 3],
    /// Number of independent field directions the electrodes reach.
    pub rank: usize,
}

impl OffsetSolution {
    pub fn max_abs_offset(&self) -> f64 {
        self.offsets_v.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationSolution {
    #[serde(flatten)]
    pub offsets: OffsetSolution,
    /// Equilibrium distance from the rf null before and after, m.
    pub uncompensated_displacement_m: f64,
    pub residual_displacement_m: f64,
    /// Rf-frequency motion amplitude (vector norm) before and after, m.
    pub uncompensated_micromotion_m: Option<f64>,
    pub residual_micromotion_m: Option<f64>,
}

impl CompensationSolution {
    pub fn max_abs_offset(&self) -> f64 {
        self.offsets.max_abs_offset()
    }
}

/// Singular values below this fraction of the largest are treated as zero.
const RANK_CUTOFF: f64 = 1e-3;
/// Radial targets weaker than the field of this many volts on the strongest electrode
/// combination count as already compensated.
const FIELD_FLOOR_V: f64 = 1e-6;

/// Projector onto the plane normal to the rf-field-free direction at `p`: the eigenvector
/// of the rf-potential Hessian with the smallest |eigenvalue|.
fn radial_projector(
    fields: &dyn FieldSource,
    d: &crate::trap_analysis::ResolvedDrive,
    p: Point3,
    settings: &AnalysisSettings,
) -> Result<impl Fn(Vec3) -> Vec3, CompensationError> {
    let (hrf, _) = potential_hessians(fields, d, p, settings.r0 / 200.0)?;
    let eig = nalgebra::SymmetricEigen::new(nalgebra::Matrix3::from_fn(|i, j| hrf[i][j]));
    let k = (0..3).min_by(|&a, &b| eig.eigenvalues[a].abs().total_cmp(&eig.eigenvalues[b].abs())).unwrap_or(2);
    let c = eig.eigenvectors.column(k);
    let axis = Vec3::new(c[0], c[1], c[2]);
    Ok(move |v: Vec3| v - axis * v.dot(axis))
}

/// Offsets on the compensation electrodes that cancel the total static field (dc drive
/// plus stray charges) at the rf null, least squares with minimum norm. Only the radial
/// part must be reachable; the component along the rf-free axis moves the ion along the
/// null line and is reported in the residual.
pub fn solve_offsets(
    fields: &dyn FieldSource,
    drive: &DriveConfig,
    stray: &StrayField,
    settings: &AnalysisSettings,
    opts: &CompensationOptions,
) -> Result<OffsetSolution, CompensationError> {
    let names: Vec<String> = match &opts.electrodes {
        Some(list) => list.clone(),
        None => fields
            .electrode_names()
            .iter()
            .zip(fields.electrode_roles())
            .filter(|(_, r)| r.is_radial_blade())
            .map(|(n, _)| n.clone())
            .collect(),
    };
    let idx: Vec<usize> = names
        .iter()
        .map(|n| fields.index_of(n).ok_or_else(|| CompensationError::UnknownElectrode(n.clone())))
        .collect::<Result<_, _>>()?;
    if drive.dc_voltages_v.contains_key(STRAY_CHANNEL) {
        return Err(AnalysisError::InvalidDrive(format!("`{STRAY_CHANNEL}` is reserved")).into());
    }

    let null = find_rf_null(fields, drive, settings)?;
    let resolved = drive.resolve(fields)?;
    let e_drive = resolved.sample(fields, null)?.dc_field;
    let es = stray.field(null)?;
    let target = es + e_drive;
    let radial = radial_projector(fields, &resolved, null, settings)?;
    let unit = fields.unit_fields(null)?;
    let m = DMatrix::from_fn(3, idx.len(), |r, c| unit[idx[c]].1[r]);
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, b| a.max(*b));
    let cutoff = RANK_CUTOFF * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    let b = DMatrix::from_column_slice(3, 1, &(-target).to_array());
    let v = if idx.is_empty() || smax == 0.0 {
        DMatrix::zeros(idx.len(), 1)
    } else {
        svd.solve(&b, cutoff).map_err(|e| AnalysisError::InvalidDrive(e.to_string()))?
    };
    let residual = Vec3::from_array(std::array::from_fn(|r| target[r] + (m.row(r) * &v)[(0, 0)]));
    let reach = radial(target).norm();
    let unexplained = if reach > FIELD_FLOOR_V * smax { radial(residual).norm() / reach } else { 0.0 };
    if rank < 2 || unexplained > opts.span_tolerance {
        return Err(CompensationError::RankDeficient { rank, unexplained });
    }
    Ok(OffsetSolution {
        offsets_v: names.iter().cloned().zip(v.iter().copied()).collect(),
        rf_null: null.to_array(),
        stray_field_v_per_m: es.to_array(),
        drive_field_v_per_m: e_drive.to_array(),
        residual_field_v_per_m: residual.to_array(),
        rank,
    })
}

/// [`solve_offsets`], then the equilibrium with and without the offsets and, if asked,
/// the rf-frequency motion at each.
pub fn compensate(
    fields: &dyn FieldSource,
    drive: &DriveConfig,
    stray: &StrayField,
    settings: &AnalysisSettings,
    opts: &CompensationOptions,
) -> Result<CompensationSolution, CompensationError> {
    let offsets = solve_offsets(fields, drive, stray, settings, opts)?;
    let null = Vec3::from_array(offsets.rf_null);
    let src = WithStray::new(fields, stray);
    let base = with_stray_drive(drive);
    let mut compensated = base.clone();
    for (k, dv) in &offsets.offsets_v {
        compensated = compensated.with_dc_offset(k, *dv);
    }
    let local = AnalysisSettings { guess: null, depth: None, ..*settings };
    let held = |d: &DriveConfig, which: &'static str| {
        let fail = |reason: String| CompensationError::NotTrapped { which, reason, offsets: Box::new(offsets.clone()) };
        let eq = find_equilibrium(&src, d, &local).map_err(|e| fail(e.to_string()))?;
        if eq.distance(null) > settings.r0 {
            return Err(fail(format!("equilibrium search ended {:.1} um from the rf null, beyond r0", eq.distance(null) * 1e6)));
        }
        Ok(eq)
    };
    let eq0 = held(&base, "uncompensated")?;
    let eq1 = held(&compensated, "compensated")?;

    let (mut mm0, mut mm1) = (None, None);
    if let Some(mo) = &opts.micromotion {
        let run = |d: &DriveConfig, eq: Point3| -> Result<f64, CompensationError> {
            let h = opts.grid_half_width;
            let grid = sample_grid(&src, &GridRegion::cube(eq, [h; 3], opts.grid_spacing))?;
            let s = AnalysisSettings { guess: eq, depth: None, ..*settings };
            let a = micromotion_amplitude(&grid, d, &BTreeMap::new(), &s, mo)?;
            Ok(Vec3::from_array(a).norm())
        };
        mm0 = Some(run(&base, eq0)?);
        mm1 = Some(run(&compensated, eq1)?);
    }

    Ok(CompensationSolution {
        uncompensated_displacement_m: eq0.distance(null),
        residual_displacement_m: eq1.distance(null),
        uncompensated_micromotion_m: mm0,
        residual_micromotion_m: mm1,
        offsets,
    })
}
