//! Collocation boundary-element solver: constant charge density on flat triangles,
//! one unit-voltage basis solution per electrode.

pub mod analytic;
pub mod cache;
pub mod grid;
pub mod kernel;

use serde::{Deserialize, Serialize};

use crate::constants::{COULOMB_K, EPSILON_0};
use crate::geometry::raycast::{containing_owner, Bvh, SceneTriangle};
use crate::geometry::{validate_mesh, ElectrodeRole, TrapGeometry};
use crate::math::{Point3, Vec3};
use crate::par;

pub use analytic::AnalyticSource;
pub use grid::{cache_grid, sample_grid, FieldGrid, GridData, GridRegion};
pub use kernel::Panel;

/// Panels are capped to keep the dense system within desktop memory.
pub const MAX_PANELS: usize = 20_000;
/// Largest acceptable collocation residual (volts per applied volt).
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("geometry has no panels")]
    EmptyGeometry,
    #[error("electrode `{0}` has an invalid mesh")]
    InvalidMesh(String),
    #[error("{0} panels exceeds the limit of {MAX_PANELS}")]
    TooManyPanels(usize),
    #[error("unknown electrode `{0}`")]
    UnknownElectrode(String),
    #[error("boundary system is singular")]
    Singular,
    #[error("solve did not converge: collocation residual {residual:e}")]
    NonConvergence { residual: f64 },
    #[error("point {point:?} is {distance:e} m from a panel (minimum {limit:e} m)")]
    TooCloseToSurface { point: [f64; 3], distance: f64, limit: f64 },
    #[error("point {0:?} lies outside the cached region")]
    OutOfRegion([f64; 3]),
    #[error("cached region overlaps electrode `{0}`")]
    RegionOverlapsElectrode(String),
    #[error("expected {expected} voltages, got {got}")]
    VoltageCount { expected: usize, got: usize },
    #[error("cache error: {0}")]
    Cache(String),
}

/// Anything that can report the potential and field of each electrode at unit voltage.
pub trait FieldSource: Sync {
    fn electrode_names(&self) -> &[String];
    fn electrode_roles(&self) -> &[ElectrodeRole];
    /// `(potential V, field V/m)` per electrode at 1 V, all others grounded.
    fn unit_fields(&self, p: Point3) -> Result<Vec<(f64, Vec3)>, FieldError>;

    /// True if `p` lies inside a conductor, where fields are meaningless.
    fn inside_conductor(&self, _p: Point3) -> bool {
        false
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.electrode_names().iter().position(|n| n == name)
    }

    /// The sampled grid behind this source, if it is one; lets callers pre-combine channels.
    fn as_grid(&self) -> Option<&grid::GridData> {
        None
    }

    /// Superposed potential and field for per-electrode `voltages`.
    fn evaluate(&self, voltages: &[f64], p: Point3) -> Result<(f64, Vec3), FieldError> {
        let n = self.electrode_names().len();
        if voltages.len() != n {
            return Err(FieldError::VoltageCount { expected: n, got: voltages.len() });
        }
        let unit = self.unit_fields(p)?;
        let mut phi = 0.0;
        let mut e = Vec3::ZERO;
        for ((u, g), v) in unit.iter().zip(voltages) {
            phi += u * v;
            e += *g * *v;
        }
        Ok((phi, e))
    }
}

/// Flat panels from every electrode mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSystem {
    pub panels: Vec<Panel>,
    /// Electrode index of each panel.
    pub owner: Vec<usize>,
    pub names: Vec<String>,
    pub roles: Vec<ElectrodeRole>,
}

/// Options for [`PanelSystem::solve_all`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SolverOptions {
    /// Beyond this many panel diameters, matrix entries use the centroid point-charge
    /// approximation. `None` keeps the closed-form integral for every entry.
    pub far_field_crossover: Option<f64>,
}

/// Charge density for 1 V on `electrode`, all others grounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSolution {
    pub electrode: String,
    /// Per-panel surface charge density, C/m^2 per volt.
    pub sigma: Vec<f64>,
}

pub fn assemble(geometry: &TrapGeometry) -> Result<PanelSystem, FieldError> {
    let mut panels = Vec::new();
    let mut owner = Vec::new();
    for (k, e) in geometry.electrodes.iter().enumerate() {
        if !validate_mesh(&e.mesh).is_empty() {
            return Err(FieldError::InvalidMesh(e.name.clone()));
        }
        for i in 0..e.mesh.len() {
            panels.push(Panel::new(e.mesh.triangle(i)));
            owner.push(k);
        }
    }
    if panels.is_empty() {
        return Err(FieldError::EmptyGeometry);
    }
    Ok(PanelSystem {
        panels,
        owner,
        names: geometry.electrodes.iter().map(|e| e.name.clone()).collect(),
        roles: geometry.electrodes.iter().map(|e| e.role).collect(),
    })
}

/// Dense LU of the collocation matrix, reusable for any right-hand side.
pub struct Factorization {
    n: usize,
    /// Column-major influence matrix: entry (i, j) = integral of 1/R over panel j at centroid i.
    matrix: Vec<f64>,
    lu: faer::linalg::solvers::PartialPivLu<f64>,
}

impl Factorization {
    /// Solve `A x = rhs` for each column and refine once if needed.
    /// Returns the solutions and the largest residual max-norm.
    pub fn solve(&self, rhs: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
        use faer::prelude::*;
        let n = self.n;
        let k = rhs.len();
        let b = faer::Mat::<f64>::from_fn(n, k, |i, j| rhs[j][i]);
        let x = self.lu.solve(&b);
        let mut out: Vec<Vec<f64>> = (0..k).map(|j| (0..n).map(|i| x.read(i, j)).collect()).collect();
        let mut worst = 0.0f64;
        for (j, col) in out.iter_mut().enumerate() {
            let mut r = self.residual(col, &rhs[j]);
            let scale = rhs[j].iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) > RESIDUAL_TOLERANCE * scale * 1e-3 {
                r.iter_mut().for_each(|v| *v = -*v);
                let rb = faer::Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
                let dx = self.lu.solve(&rb);
                for (i, v) in col.iter_mut().enumerate() {
                    *v += dx.read(i, 0);
                }
                r = self.residual(col, &rhs[j]);
            }
            worst = worst.max(r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
        }
        (out, worst)
    }

    /// `A x - b`.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut r: Vec<f64> = b.iter().map(|v| -v).collect();
        for (j, xj) in x.iter().enumerate() {
            let col = &self.matrix[j * n..(j + 1) * n];
            for (ri, a) in r.iter_mut().zip(col) {
                *ri += a * xj;
            }
        }
        r
    }
}

impl PanelSystem {
    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.panels.iter().map(|p| p.area).sum()
    }

    /// Panel indices belonging to electrode `k`.
    pub fn panels_of(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.owner.iter().enumerate().filter(move |(_, &o)| o == k).map(|(i, _)| i)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Build and factor the collocation matrix.
    pub fn factorize(&self, options: &SolverOptions) -> Result<Factorization, FieldError> {
        let n = self.len();
        if n == 0 {
            return Err(FieldError::EmptyGeometry);
        }
        if n > MAX_PANELS {
            return Err(FieldError::TooManyPanels(n));
        }
        let mut matrix = vec![0.0; n * n];
        par::for_each_row(&mut matrix, n, |j, col| {
            let src = &self.panels[j];
            let cross = options.far_field_crossover.map(|c| c * src.diameter);
            for (i, out) in col.iter_mut().enumerate() {
                let target = self.panels[i].centroid;
                *out = match cross {
                    Some(c) if i != j && target.distance(src.centroid) > c => src.far_potential_and_gradient(target).0,
                    _ => src.potential(target),
                };
            }
        });
        let a = faer::mat::from_column_major_slice::<f64>(&matrix, n, n);
        let lu = a.partial_piv_lu();
        Ok(Factorization { n, matrix, lu })
    }

    /// One basis solution per electrode from a single factorization.
    pub fn solve_all(&self, options: &SolverOptions) -> Result<BasisFieldSet, FieldError> {
        let f = self.factorize(options)?;
        self.solve_with(&f)
    }

    pub fn solve_with(&self, f: &Factorization) -> Result<BasisFieldSet, FieldError> {
        let rhs: Vec<Vec<f64>> = (0..self.names.len())
            .map(|k| self.owner.iter().map(|&o| if o == k { 1.0 } else { 0.0 }).collect())
            .collect();
        let (x, residual) = f.solve(&rhs);
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FieldError::Singular);
        }
        if residual > RESIDUAL_TOLERANCE {
            return Err(FieldError::NonConvergence { residual });
        }
        let scale = 4.0 * std::f64::consts::PI * EPSILON_0;
        let solutions = x
            .into_iter()
            .zip(&self.names)
            .map(|(col, name)| BasisSolution { electrode: name.clone(), sigma: col.into_iter().map(|v| v * scale).collect() })
            .collect();
        Ok(BasisFieldSet::new(self.clone(), solutions))
    }

    /// Basis solution for one named electrode.
    pub fn solve_basis(&self, electrode: &str, options: &SolverOptions) -> Result<BasisSolution, FieldError> {
        let k = self.index_of(electrode).ok_or_else(|| FieldError::UnknownElectrode(electrode.to_string()))?;
        let set = self.solve_all(options)?;
        Ok(set.solutions[k].clone())
    }

    /// `(potential, field)` at `p` from per-panel charge densities `sigma` (C/m^2).
    /// Fails within a tenth of a panel diameter of any panel.
    pub fn field_from_charges(&self, sigmas: &[&[f64]], p: Point3) -> Result<Vec<(f64, Vec3)>, FieldError> {
        let mut out = vec![(0.0, Vec3::ZERO); sigmas.len()];
        for (j, panel) in self.panels.iter().enumerate() {
            let d = p.distance(panel.centroid);
            if d < 2.0 * panel.diameter {
                let dist = panel.distance_to(p);
                let limit = 0.1 * panel.diameter;
                if dist < limit {
                    return Err(FieldError::TooCloseToSurface { point: p.to_array(), distance: dist, limit });
                }
            }
            let (k, g) = panel.potential_and_gradient(p);
            for (o, s) in out.iter_mut().zip(sigmas) {
                let sj = s[j];
                o.0 += sj * k;
                o.1 -= g * sj;
            }
        }
        for o in &mut out {
            o.0 *= COULOMB_K;
            o.1 = o.1 * COULOMB_K;
        }
        Ok(out)
    }
}

/// Basis solutions for every electrode plus the panels they live on.
#[derive(Debug, Clone)]
pub struct BasisFieldSet {
    pub system: PanelSystem,
    pub solutions: Vec<BasisSolution>,
    bvh: std::sync::OnceLock<Bvh>,
}

impl PartialEq for BasisFieldSet {
    fn eq(&self, other: &Self) -> bool {
        self.system == other.system && self.solutions == other.solutions
    }
}

impl BasisFieldSet {
    pub fn new(system: PanelSystem, solutions: Vec<BasisSolution>) -> Self {
        BasisFieldSet { system, solutions, bvh: std::sync::OnceLock::new() }
    }

    /// Ray-casting acceleration structure over all panels (built on first use).
    pub fn bvh(&self) -> &Bvh {
        self.bvh.get_or_init(|| {
            Bvh::build(self.system.panels.iter().enumerate().map(|(i, p)| SceneTriangle { v: p.v, id: i }).collect())
        })
    }

    /// Electrode whose closed surface contains `p`.
    pub fn electrode_containing(&self, p: Point3) -> Option<usize> {
        containing_owner(self.bvh(), &self.system.owner, self.system.names.len(), p)
    }

    /// Induced charge on electrode `i` when electrode `j` is at 1 V (farads).
    pub fn capacitance_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.system.names.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| self.system.panels_of(i).map(|k| self.solutions[j].sigma[k] * self.system.panels[k].area).sum())
                    .collect()
            })
            .collect()
    }

    /// Total charge for 1 V on electrode `j`, summed over all panels.
    pub fn total_charge(&self, j: usize) -> f64 {
        self.solutions[j].sigma.iter().zip(&self.system.panels).map(|(s, p)| s * p.area).sum()
    }

    /// Largest deviation of the centroid potentials from the imposed boundary values.
    pub fn collocation_residual(&self) -> f64 {
        let n = self.system.len();
        let rows = par::map_range(n, |i| {
            let c = self.system.panels[i].centroid;
            let mut pot = vec![0.0; self.solutions.len()];
            for (j, panel) in self.system.panels.iter().enumerate() {
                let k = panel.potential(c);
                for (p, s) in pot.iter_mut().zip(&self.solutions) {
                    *p += s.sigma[j] * k;
                }
            }
            pot.iter()
                .enumerate()
                .map(|(b, v)| (v * COULOMB_K - if self.system.owner[i] == b { 1.0 } else { 0.0 }).abs())
                .fold(0.0f64, f64::max)
        });
        rows.into_iter().fold(0.0, f64::max)
    }
}

impl FieldSource for BasisFieldSet {
    fn electrode_names(&self) -> &[String] {
        &self.system.names
    }

    fn electrode_roles(&self) -> &[ElectrodeRole] {
        &self.system.roles
    }

    fn inside_conductor(&self, p: Point3) -> bool {
        self.electrode_containing(p).is_some()
    }

    fn unit_fields(&self, p: Point3) -> Result<Vec<(f64, Vec3)>, FieldError> {
        let sig: Vec<&[f64]> = self.solutions.iter().map(|s| s.sigma.as_slice()).collect();
        self.system.field_from_charges(&sig, p)
    }
}

#[cfg(test)]
mod tests;
