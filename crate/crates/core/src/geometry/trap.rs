//! Electrode geometry of the monolithic blade trap and its parametric builder.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::mesh::{validate_mesh, SurfaceMesh};
use super::primitives::graded_prism;
use super::raycast::{containing_owner, Bvh, SceneTriangle};
use super::GeometryError;
use crate::math::{closest_point_on_triangle, Point3, Vec3};

/// Electrical role of an electrode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElectrodeRole {
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "RF_GROUND")]
    RfGround,
    #[serde(rename = "DC_ENDCAP_1")]
    DcEndcap1,
    #[serde(rename = "DC_ENDCAP_2")]
    DcEndcap2,
    #[serde(rename = "DC_ENDCAP_3")]
    DcEndcap3,
    #[serde(rename = "DC_ENDCAP_4")]
    DcEndcap4,
    #[serde(rename = "GROUND")]
    Ground,
}

impl ElectrodeRole {
    pub fn is_endcap(self) -> bool {
        matches!(self, Self::DcEndcap1 | Self::DcEndcap2 | Self::DcEndcap3 | Self::DcEndcap4)
    }

    /// Radial blades, the electrodes that may carry dc compensation offsets by default.
    pub fn is_radial_blade(self) -> bool {
        matches!(self, Self::Rf | Self::RfGround)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rf => "RF",
            Self::RfGround => "RF_GROUND",
            Self::DcEndcap1 => "DC_ENDCAP_1",
            Self::DcEndcap2 => "DC_ENDCAP_2",
            Self::DcEndcap3 => "DC_ENDCAP_3",
            Self::DcEndcap4 => "DC_ENDCAP_4",
            Self::Ground => "GROUND",
        }
    }
}

/// A named conductor surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub role: ElectrodeRole,
    pub mesh: SurfaceMesh,
}

/// Collection of electrodes around a nominal trap center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapGeometry {
    pub electrodes: Vec<Electrode>,
    /// Nominal trap center (origin of the blade layout).
    pub center: Point3,
    /// Minimum distance from `center` to any electrode surface, m.
    pub r0: f64,
}

impl TrapGeometry {
    /// Assemble a geometry and compute `r0` from the meshes.
    pub fn new(electrodes: Vec<Electrode>, center: Point3) -> Self {
        let r0 = electrodes
            .iter()
            .flat_map(|e| (0..e.mesh.len()).map(move |i| (e, i)))
            .map(|(e, i)| {
                let [a, b, c] = e.mesh.triangle(i);
                closest_point_on_triangle(center, a, b, c).distance(center)
            })
            .fold(f64::INFINITY, f64::min);
        TrapGeometry { electrodes, center, r0 }
    }

    pub fn empty() -> Self {
        TrapGeometry { electrodes: Vec::new(), center: Vec3::ZERO, r0: f64::INFINITY }
    }

    pub fn electrode(&self, name: &str) -> Option<&Electrode> {
        self.electrodes.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.electrodes.iter().map(|e| e.name.clone()).collect()
    }

    pub fn triangle_count(&self) -> usize {
        self.electrodes.iter().map(|e| e.mesh.len()).sum()
    }

    /// All triangles in electrode order; ids are global triangle indices.
    pub fn scene_triangles(&self) -> Vec<SceneTriangle> {
        let mut out = Vec::with_capacity(self.triangle_count());
        for e in &self.electrodes {
            for i in 0..e.mesh.len() {
                out.push(SceneTriangle { v: e.mesh.triangle(i), id: out.len() });
            }
        }
        out
    }

    pub fn bvh(&self) -> Bvh {
        Bvh::build(self.scene_triangles())
    }

    /// Electrode owning each global triangle index.
    pub fn triangle_owner(&self) -> Vec<usize> {
        self.electrodes
            .iter()
            .enumerate()
            .flat_map(|(k, e)| std::iter::repeat(k).take(e.mesh.len()))
            .collect()
    }

    /// Index of the electrode whose (closed) volume contains `p`.
    pub fn electrode_containing(&self, bvh: &Bvh, p: Point3) -> Option<usize> {
        containing_owner(bvh, &self.triangle_owner(), self.electrodes.len(), p)
    }
}

/// Grounded slabs on both sides of the trap, parallel to the y-z plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundFrame {
    /// Distance from the trap axis to the inner face of each slab, m.
    pub offset: f64,
    pub thickness: f64,
    /// Half extent along y, m.
    pub half_height: f64,
    /// Half extent along z, m.
    pub half_length: f64,
}

/// Parameters of the four-blade linear trap. All lengths in meters, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricTrapParams {
    /// Axial length of every blade line (RF_GROUND blades span it entirely).
    pub blade_length: f64,
    /// Width of the flat facet at each blade tip.
    pub blade_tip_width: f64,
    /// Tip-to-tip distance across the trap center; r0 is half of it.
    pub blade_separation: f64,
    /// Radial extent of a blade from tip to root.
    pub blade_depth: f64,
    /// Half opening angle of the blade wedge.
    pub blade_wedge_half_angle: f64,
    /// Angular position of the first RF blade, measured from +x toward +y.
    pub rf_blade_angle: f64,
    /// Axial gap between the central RF blades and the endcap segments.
    pub endcap_axial_gap: f64,
    /// Axial centers of the two isolation trenches that split the RF blade lines.
    pub trench_positions: Vec<f64>,
    pub ground_frame: Option<GroundFrame>,
    /// Target maximum triangle edge at the blade tips.
    pub mesh_resolution: f64,
    /// Growth of the target edge per meter of distance beyond r0.
    pub mesh_grading: f64,
    /// Upper bound on any triangle edge.
    pub mesh_max_edge: f64,
}

const DEFAULT_TRAP_JSON: &str = include_str!("../../configs/default_trap.json");

impl Default for ParametricTrapParams {
    fn default() -> Self {
        super::config::params_from_json(DEFAULT_TRAP_JSON).expect("bundled default trap config is valid")
    }
}

impl ParametricTrapParams {
    pub fn r0(&self) -> f64 {
        0.5 * self.blade_separation
    }

    /// Scale every length (not the mesh grading, which is dimensionless).
    pub fn scaled(&self, s: f64) -> Self {
        let mut p = self.clone();
        p.blade_length *= s;
        p.blade_tip_width *= s;
        p.blade_separation *= s;
        p.blade_depth *= s;
        p.endcap_axial_gap *= s;
        p.trench_positions.iter_mut().for_each(|z| *z *= s);
        if let Some(g) = p.ground_frame.as_mut() {
            g.offset *= s;
            g.thickness *= s;
            g.half_height *= s;
            g.half_length *= s;
        }
        p.mesh_resolution *= s;
        p.mesh_max_edge *= s;
        p
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let positive = [
            ("blade_length", self.blade_length),
            ("blade_tip_width", self.blade_tip_width),
            ("blade_separation", self.blade_separation),
            ("blade_depth", self.blade_depth),
            ("endcap_axial_gap", self.endcap_axial_gap),
            ("mesh_resolution", self.mesh_resolution),
            ("mesh_max_edge", self.mesh_max_edge),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GeometryError::invalid(field, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.mesh_grading >= 0.0 && self.mesh_grading.is_finite()) {
            return Err(GeometryError::invalid("mesh_grading", "must be non-negative"));
        }
        if self.mesh_resolution > self.blade_tip_width / 4.0 {
            return Err(GeometryError::invalid(
                "mesh_resolution",
                format!("must be at most blade_tip_width / 4 = {}", self.blade_tip_width / 4.0),
            ));
        }
        if self.mesh_max_edge < self.mesh_resolution {
            return Err(GeometryError::invalid("mesh_max_edge", "must be at least mesh_resolution"));
        }
        if !(self.blade_wedge_half_angle >= 0.0 && self.blade_wedge_half_angle < PI / 4.0) {
            return Err(GeometryError::invalid("blade_wedge_half_angle", "must lie in [0, pi/4)"));
        }
        if !self.rf_blade_angle.is_finite() {
            return Err(GeometryError::invalid("rf_blade_angle", "must be finite"));
        }
        // the blade half-width at its root must keep neighbouring blades apart
        let root_half = 0.5 * self.blade_tip_width + self.blade_depth * self.blade_wedge_half_angle.tan();
        if self.blade_tip_width >= self.blade_separation || root_half >= (self.r0() + self.blade_depth) * (PI / 4.0).sin() {
            return Err(GeometryError::invalid("blade_tip_width", "blades would overlap their neighbours"));
        }
        let half = 0.5 * self.blade_length;
        match self.trench_positions.as_slice() {
            [a, b] if a < b => {
                let g = 0.5 * self.endcap_axial_gap;
                if !(*a - g > -half && *b + g < half && *a + g < *b - g) {
                    return Err(GeometryError::invalid(
                        "trench_positions",
                        "trenches and their gaps must fit inside the blade length without overlapping",
                    ));
                }
            }
            _ => {
                return Err(GeometryError::invalid("trench_positions", "expected two increasing axial positions"));
            }
        }
        if let Some(g) = &self.ground_frame {
            for (field, v) in [
                ("ground_frame.offset", g.offset),
                ("ground_frame.thickness", g.thickness),
                ("ground_frame.half_height", g.half_height),
                ("ground_frame.half_length", g.half_length),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(GeometryError::invalid(field, "must be positive and finite"));
                }
            }
            let reach = [0.0, 0.5, 1.0, 1.5]
                .iter()
                .flat_map(|k| blade_polygon(self, self.rf_blade_angle + k * PI))
                .map(|(x, _)| x.abs())
                .fold(0.0, f64::max);
            if g.offset <= reach {
                return Err(GeometryError::invalid("ground_frame.offset", format!("must clear the blades (> {reach} m)")));
            }
        }
        Ok(())
    }
}

/// Build the four-blade trap.
///
/// Layout: RF_GROUND blades at `rf_blade_angle + pi/2` and `+3pi/2` span the full blade
/// length. The blade lines at `rf_blade_angle` and `+pi` are split by the two trenches
/// into a central RF blade and an endcap segment at each end, giving four DC endcaps
/// hidden axially behind the RF blades. Optional ground slabs flank the trap in x.
pub fn build_linear_trap(params: &ParametricTrapParams) -> Result<TrapGeometry, GeometryError> {
    params.validate()?;
    let r0 = params.r0();
    let center = Vec3::ZERO;
    let size = |cell: &[Vec3; 4]| -> f64 {
        let d = distance_to_quad(center, cell);
        (params.mesh_resolution + params.mesh_grading * (d - r0).max(0.0)).min(params.mesh_max_edge)
    };

    let half_len = 0.5 * params.blade_length;
    let g = 0.5 * params.endcap_axial_gap;
    let (za, zb) = (params.trench_positions[0], params.trench_positions[1]);

    let blade = |angle: f64, z0: f64, z1: f64| -> SurfaceMesh { graded_prism(&blade_polygon(params, angle), z0, z1, &size) };

    let a_rf = params.rf_blade_angle;
    let a_gnd = a_rf + 0.5 * PI;
    let mut electrodes = vec![
        Electrode { name: "rf_a".into(), role: ElectrodeRole::Rf, mesh: blade(a_rf, za + g, zb - g) },
        Electrode { name: "rf_b".into(), role: ElectrodeRole::Rf, mesh: blade(a_rf + PI, za + g, zb - g) },
        Electrode { name: "rfgnd_a".into(), role: ElectrodeRole::RfGround, mesh: blade(a_gnd, -half_len, half_len) },
        Electrode { name: "rfgnd_b".into(), role: ElectrodeRole::RfGround, mesh: blade(a_gnd + PI, -half_len, half_len) },
        Electrode { name: "dc_1".into(), role: ElectrodeRole::DcEndcap1, mesh: blade(a_rf, zb + g, half_len) },
        Electrode { name: "dc_2".into(), role: ElectrodeRole::DcEndcap2, mesh: blade(a_rf + PI, zb + g, half_len) },
        Electrode { name: "dc_3".into(), role: ElectrodeRole::DcEndcap3, mesh: blade(a_rf, -half_len, za - g) },
        Electrode { name: "dc_4".into(), role: ElectrodeRole::DcEndcap4, mesh: blade(a_rf + PI, -half_len, za - g) },
    ];

    if let Some(f) = &params.ground_frame {
        let mut mesh = SurfaceMesh::empty();
        for sign in [-1.0, 1.0] {
            let x0 = sign * f.offset;
            let x1 = sign * (f.offset + f.thickness);
            let (lo, hi) = (x0.min(x1), x0.max(x1));
            let poly = [(lo, -f.half_height), (hi, -f.half_height), (hi, f.half_height), (lo, f.half_height)];
            mesh.append(&graded_prism(&poly, -f.half_length, f.half_length, &size));
        }
        electrodes.push(Electrode { name: "gnd".into(), role: ElectrodeRole::Ground, mesh });
    }

    for e in &electrodes {
        let defects = validate_mesh(&e.mesh);
        if !defects.is_empty() {
            return Err(GeometryError::InvalidMesh { electrode: e.name.clone(), defects });
        }
    }
    Ok(TrapGeometry::new(electrodes, center))
}

/// Cross-section of the blade at `angle`: tip corners at r0, root corners at r0 + depth.
fn blade_polygon(params: &ParametricTrapParams, angle: f64) -> [(f64, f64); 4] {
    let r0 = params.r0();
    let rb = r0 + params.blade_depth;
    let tip = 0.5 * params.blade_tip_width;
    let back = tip + params.blade_depth * params.blade_wedge_half_angle.tan();
    let (s, c) = angle.sin_cos();
    let rot = |r: f64, t: f64| (r * c - t * s, r * s + t * c);
    [rot(r0, -tip), rot(rb, -back), rot(rb, back), rot(r0, tip)]
}

/// Distance from `p` to a planar quad (split along its 0-2 diagonal).
fn distance_to_quad(p: Vec3, c: &[Vec3; 4]) -> f64 {
    let d1 = closest_point_on_triangle(p, c[0], c[1], c[2]).distance(p);
    let d2 = closest_point_on_triangle(p, c[0], c[2], c[3]).distance(p);
    d1.min(d2)
}

/// Blade tip facets the ion sees: triangles whose outward normal points at the axis
/// and whose plane lies within `r_tol` of r0, with centroids within `z_window` of the
/// center plane. Returns `(electrode index, triangle index)` pairs.
pub fn ion_facing_facets(geometry: &TrapGeometry, r_tol: f64, z_window: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (k, e) in geometry.electrodes.iter().enumerate() {
        for i in 0..e.mesh.len() {
            let c = e.mesh.centroid(i) - geometry.center;
            let radial = Vec3::new(c.x, c.y, 0.0);
            let r = radial.norm();
            let n = e.mesh.normals[i];
            if r == 0.0 || c.z.abs() > z_window || n.dot(-radial / r) < 0.99 {
                continue;
            }
            if (-c.dot(n) - geometry.r0).abs() <= r_tol {
                out.push((k, i));
            }
        }
    }
    out
}
