//! Directional metalization: line-of-sight deposition with a cosine flux law onto a
//! tilted, rotating part, and conductive connectivity of the resulting film.

mod connectivity;
pub mod trench;


use serde::{Deserialize, Serialize};

use crate::geometry::raycast::{Bvh, SceneTriangle};
use crate::geometry::{SurfaceMesh, TrapGeometry};
use crate::math::Vec3;
use crate::par;

pub use connectivity::{connectivity, Component, ConductiveGraph, Pad};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaporationError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("coverage map does not match the scene ({0})")]
    Mismatch(String),
    #[error("unknown surface `{0}`")]
    UnknownSurface(String),
}

/// Source direction (unit vector from the part toward the source) and the film
/// thickness it would deposit at normal incidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub toward_source: Vec3,
    pub thickness_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaporationConfig {
    /// Angle between the beam and the part's base normal.
    pub tilt_rad: f64,
    /// Equally spaced rotation angles about the base normal.
    pub samples: usize,
    /// Thickness deposited on a surface normal to the beam over the whole run.
    pub nominal_thickness_m: f64,
    /// Part normal facing the source; the rotation axis.
    pub base_normal: Vec3,
    /// Repeat the run with the part flipped (source on the `-base_normal` side).
    pub two_sided: bool,
    /// Recorded only; continuous rotation is modeled by the discrete samples.
    pub rotations_per_minute: f64,
}

impl Default for EvaporationConfig {
    fn default() -> Self {
        EvaporationConfig {
            tilt_rad: std::f64::consts::FRAC_PI_3,
            samples: 360,
            nominal_thickness_m: 2e-6,
            base_normal: Vec3::Z,
            two_sided: false,
            rotations_per_minute: 3.0,
        }
    }
}

impl EvaporationConfig {
    pub fn validate(&self) -> Result<(), EvaporationError> {
        if !(self.tilt_rad > 0.0 && self.tilt_rad < std::f64::consts::FRAC_PI_2) {
            return Err(EvaporationError::InvalidConfig(format!("tilt must lie in (0, 90) degrees, got {}", self.tilt_rad.to_degrees())));
        }
        if self.samples < 8 {
            return Err(EvaporationError::InvalidConfig(format!("need at least 8 rotation samples, got {}", self.samples)));
        }
        if !(self.nominal_thickness_m > 0.0 && self.nominal_thickness_m.is_finite()) {
            return Err(EvaporationError::InvalidConfig("nominal thickness must be positive".into()));
        }
        if self.base_normal.try_normalize().is_none() {
            return Err(EvaporationError::InvalidConfig("base normal must be non-zero".into()));
        }
        Ok(())
    }

    /// The discrete beams of the run, each side carrying the full nominal thickness.
    pub fn beams(&self) -> Result<Vec<Beam>, EvaporationError> {
        self.validate()?;
        let n = self.base_normal.normalize();
        let sides: &[f64] = if self.two_sided { &[1.0, -1.0] } else { &[1.0] };
        let (st, ct) = self.tilt_rad.sin_cos();
        let w = self.nominal_thickness_m / self.samples as f64;
        let mut out = Vec::with_capacity(sides.len() * self.samples);
        for &s in sides {
            let axis = n * s;
            let e1 = axis.any_orthonormal();
            let e2 = axis.cross(e1);
            for k in 0..self.samples {
                let th = std::f64::consts::TAU * k as f64 / self.samples as f64;
                let d = axis * ct + (e1 * th.cos() + e2 * th.sin()) * st;
                out.push(Beam { toward_source: d, thickness_m: w });
            }
        }
        Ok(out)
    }

    /// Upper bound on any triangle's thickness.
    pub fn max_thickness(&self) -> f64 {
        self.nominal_thickness_m * if self.two_sided { 2.0 } else { 1.0 }
    }
}

/// Named surfaces receiving and shadowing the beam. Triangles are numbered globally
/// in surface order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub surfaces: Vec<(String, SurfaceMesh)>,
}

impl Scene {
    pub fn single(name: &str, mesh: SurfaceMesh) -> Self {
        Scene { surfaces: vec![(name.to_string(), mesh)] }
    }

    pub fn from_geometry(g: &TrapGeometry) -> Self {
        Scene { surfaces: g.electrodes.iter().map(|e| (e.name.clone(), e.mesh.clone())).collect() }
    }

    pub fn triangle_count(&self) -> usize {
        self.surfaces.iter().map(|(_, m)| m.len()).sum()
    }

    /// Global index of the first triangle of each surface, plus the total.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = vec![0];
        for (_, m) in &self.surfaces {
            out.push(out.last().unwrap() + m.len());
        }
        out
    }

    pub fn surface_index(&self, name: &str) -> Result<usize, EvaporationError> {
        self.surfaces.iter().position(|(n, _)| n == name).ok_or_else(|| EvaporationError::UnknownSurface(name.to_string()))
    }

    /// `(surface, local triangle)` for a global triangle index.
    pub fn locate(&self, global: usize) -> (usize, usize) {
        let off = self.offsets();
        let s = off.partition_point(|&o| o <= global) - 1;
        (s, global - off[s])
    }

    fn flat(&self) -> Vec<(Vec3, Vec3, [Vec3; 3])> {
        self.surfaces
            .iter()
            .flat_map(|(_, m)| (0..m.len()).map(move |i| (m.centroid(i), m.normals[i], m.triangle(i))))
            .collect()
    }

    pub fn bvh(&self) -> Bvh {
        let tris = self.flat().into_iter().enumerate().map(|(id, (_, _, v))| SceneTriangle { v, id }).collect();
        Bvh::build(tris)
    }

    fn extent(&self) -> f64 {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for (_, m) in &self.surfaces {
            if let Some((a, b)) = m.bounds() {
                lo = lo.min_by_component(a);
                hi = hi.max_by_component(b);
            }
        }
        if lo.x.is_finite() { (hi - lo).norm() } else { 0.0 }
    }
}

/// Deposited thickness per triangle, in scene order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMap {
    pub thickness_m: Vec<f64>,
}

impl CoverageMap {
    pub fn len(&self) -> usize {
        self.thickness_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thickness_m.is_empty()
    }

    /// Area-weighted mean and minimum over the given global triangles.
    pub fn stats(&self, scene: &Scene, triangles: &[usize]) -> Option<FacetStats> {
        if triangles.is_empty() {
            return None;
        }
        let (mut sum, mut area, mut min) = (0.0, 0.0, f64::INFINITY);
        for &g in triangles {
            let (s, i) = scene.locate(g);
            let a = scene.surfaces[s].1.area(i);
            sum += a * self.thickness_m[g];
            area += a;
            min = min.min(self.thickness_m[g]);
        }
        Some(FacetStats { mean_m: sum / area, min_m: min, triangles: triangles.len(), area_m2: area })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacetStats {
    pub mean_m: f64,
    pub min_m: f64,
    pub triangles: usize,
    pub area_m2: f64,
}

/// Thickness deposited by explicit beams. A triangle collects `thickness * cos(alpha)`
/// from each beam whose ray from its centroid toward the source is unobstructed.
pub fn deposit(scene: &Scene, beams: &[Beam]) -> CoverageMap {
    let tris = scene.flat();
    let bvh = scene.bvh();
    let eps = 1e-9 * scene.extent().max(f64::MIN_POSITIVE);
    let thickness_m = par::map_range(tris.len(), |i| {
        let (c, n, _) = tris[i];
        let origin = c + n * eps;
        let mut t = 0.0;
        for b in beams {
            let cos = n.dot(b.toward_source);
            if cos > 0.0 && !bvh.occluded(origin, b.toward_source, 0.0, f64::INFINITY, Some(i)) {
                t += b.thickness_m * cos;
            }
        }
        t
    });
    CoverageMap { thickness_m }
}

/// Thickness after a full tilted, rotating run.
pub fn coverage(scene: &Scene, config: &EvaporationConfig) -> Result<CoverageMap, EvaporationError> {
    Ok(deposit(scene, &config.beams()?))
}

/// Facet statistics of the blade tips facing the trap axis, per electrode and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetReport {
    pub per_electrode: Vec<(String, FacetStats)>,
    pub overall: FacetStats,
}

/// Blade-tip facet thickness of a trap geometry; `z_window` limits the facets to the
/// central region around the trap center.
pub fn facet_report(g: &TrapGeometry, coverage: &CoverageMap, z_window: f64) -> Result<FacetReport, EvaporationError> {
    let scene = Scene::from_geometry(g);
    if coverage.len() != scene.triangle_count() {
        return Err(EvaporationError::Mismatch(format!("{} values for {} triangles", coverage.len(), scene.triangle_count())));
    }
    let off = scene.offsets();
    let facets = crate::geometry::trap::ion_facing_facets(g, 1e-9 * g.r0.max(1e-6), z_window);
    let mut per_electrode = Vec::new();
    for (k, e) in g.electrodes.iter().enumerate() {
        let ids: Vec<usize> = facets.iter().filter(|f| f.0 == k).map(|f| off[k] + f.1).collect();
        if let Some(s) = coverage.stats(&scene, &ids) {
            per_electrode.push((e.name.clone(), s));
        }
    }
    let all: Vec<usize> = facets.iter().map(|f| off[f.0] + f.1).collect();
    let overall = coverage.stats(&scene, &all).ok_or_else(|| EvaporationError::Mismatch("geometry has no ion-facing facets".into()))?;
    Ok(FacetReport { per_electrode, overall })
}
