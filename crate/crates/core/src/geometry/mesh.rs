use serde::{Deserialize, Serialize};

use crate::math::Vec3;

/// Triangles with area at or below this are considered degenerate, m^2.
pub const MIN_TRIANGLE_AREA: f64 = 1e-18;

/// Indexed triangle surface with one outward normal per triangle.
///
/// Normals follow the counter-clockwise winding of each triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Vec<Vec3>,
}

/// A defect found by [`validate_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshDefect {
    /// Triangle references a vertex index past the end of the vertex list.
    IndexOutOfRange(usize),
    /// Triangle area is at or below [`MIN_TRIANGLE_AREA`].
    DegenerateTriangle(usize),
    /// Stored normal is not unit length within 1e-9.
    NonUnitNormal(usize),
    /// Stored normal disagrees with the triangle winding.
    NormalWindingMismatch(usize),
    /// A vertex used by this triangle has a non-finite coordinate.
    NonFiniteVertex(usize),
    /// Normals list length differs from the triangle count.
    NormalCountMismatch,
}

impl SurfaceMesh {
    pub fn empty() -> Self {
        SurfaceMesh { vertices: Vec::new(), triangles: Vec::new(), normals: Vec::new() }
    }

    /// Build a mesh, deriving normals from the winding order.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        let mut mesh = SurfaceMesh { vertices, triangles, normals: Vec::new() };
        mesh.recompute_normals();
        mesh
    }

    pub fn recompute_normals(&mut self) {
        self.normals = (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                (b - a).cross(c - a).normalize()
            })
            .collect();
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    #[inline]
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn centroid(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle(i);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.len()).map(|i| self.area(i)).sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.distance(b).max(b.distance(c)).max(c.distance(a))
            })
            .fold(0.0, f64::max)
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), &v| {
            (lo.min_by_component(v), hi.max_by_component(v))
        }))
    }

    /// Append another mesh, keeping its triangles and normals.
    pub fn append(&mut self, other: &SurfaceMesh) {
        let offset = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
        self.normals.extend_from_slice(&other.normals);
    }

    /// Apply `f` to every vertex and recompute normals.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> SurfaceMesh {
        SurfaceMesh::new(self.vertices.iter().map(|&v| f(v)).collect(), self.triangles.clone())
    }

    pub fn translated(&self, d: Vec3) -> SurfaceMesh {
        self.map_vertices(|v| v + d)
    }

    pub fn scaled(&self, s: f64) -> SurfaceMesh {
        self.map_vertices(|v| v * s)
    }

    /// Reverse the winding of every triangle (flips normals).
    pub fn flipped(&self) -> SurfaceMesh {
        SurfaceMesh::new(self.vertices.clone(), self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect())
    }

    /// Angle-weighted vertex normals. Vertices not referenced by any triangle get zero.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::ZERO; self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let n = self.normals[t];
            for k in 0..3 {
                let p = self.vertices[tri[k]];
                let e1 = (self.vertices[tri[(k + 1) % 3]] - p).normalize();
                let e2 = (self.vertices[tri[(k + 2) % 3]] - p).normalize();
                let angle = e1.dot(e2).clamp(-1.0, 1.0).acos();
                acc[tri[k]] += n * angle;
            }
        }
        acc.into_iter().map(|n| n.normalize()).collect()
    }
}

/// Check structural invariants. Empty result means the mesh is valid.
pub fn validate_mesh(mesh: &SurfaceMesh) -> Vec<MeshDefect> {
    let mut defects = Vec::new();
    if mesh.normals.len() != mesh.triangles.len() {
        defects.push(MeshDefect::NormalCountMismatch);
    }
    let nv = mesh.vertices.len();
    for (i, tri) in mesh.triangles.iter().enumerate() {
        if tri.iter().any(|&k| k >= nv) {
            defects.push(MeshDefect::IndexOutOfRange(i));
            continue;
        }
        if tri.iter().any(|&k| !mesh.vertices[k].is_finite()) {
            defects.push(MeshDefect::NonFiniteVertex(i));
            continue;
        }
        let [a, b, c] = mesh.triangle(i);
        let cross = (b - a).cross(c - a);
        let area = 0.5 * cross.norm();
        if !(area > MIN_TRIANGLE_AREA) {
            defects.push(MeshDefect::DegenerateTriangle(i));
            continue;
        }
        if let Some(&n) = mesh.normals.get(i) {
            if !((n.norm() - 1.0).abs() <= 1e-9) {
                defects.push(MeshDefect::NonUnitNormal(i));
            } else if n.dot(cross / (2.0 * area)) < 1.0 - 1e-6 {
                defects.push(MeshDefect::NormalWindingMismatch(i));
            }
        }
    }
    defects
}
