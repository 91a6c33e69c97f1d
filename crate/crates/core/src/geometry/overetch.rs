//! Pre-compensation of laser-etch over-etching by offsetting surfaces along vertex normals.

use serde::{Deserialize, Serialize};

use super::mesh::SurfaceMesh;
use super::raycast::triangles_intersect;
use super::GeometryError;
use crate::math::Vec3;

/// Where depth is measured from: `depth = surface_height - p . up`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFrame {
    pub up: Vec3,
    pub surface_height: f64,
}

impl DepthFrame {
    pub fn depth(&self, p: Vec3) -> f64 {
        self.surface_height - p.dot(self.up)
    }
}

/// `offset(depth) = intercept + slope * depth`, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOveretch {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearOveretch {
    pub fn offset(&self, depth: f64) -> f64 {
        self.intercept + self.slope * depth
    }
}

/// Move every vertex along its angle-weighted vertex normal by `model(depth)`.
///
/// Topology is kept. Fails if two non-adjacent triangles intersect afterwards.
pub fn apply_overetch_offset(
    mesh: &SurfaceMesh,
    frame: &DepthFrame,
    model: &dyn Fn(f64) -> f64,
) -> Result<SurfaceMesh, GeometryError> {
    let normals = mesh.vertex_normals();
    let mut vertices = Vec::with_capacity(mesh.vertices.len());
    for (v, n) in mesh.vertices.iter().zip(&normals) {
        let d = model(frame.depth(*v));
        if !d.is_finite() {
            return Err(GeometryError::invalid("model", format!("offset is not finite at depth {}", frame.depth(*v))));
        }
        vertices.push(if d == 0.0 { *v } else { *v + *n * d });
    }
    let out = SurfaceMesh::new(vertices, mesh.triangles.clone());
    let pairs = self_intersections(&out);
    if !pairs.is_empty() {
        return Err(GeometryError::SelfIntersection(pairs));
    }
    Ok(out)
}

/// Intersecting pairs of triangles that share no vertex (sweep and prune along x).
pub fn self_intersections(mesh: &SurfaceMesh) -> Vec<(usize, usize)> {
    let boxes: Vec<(f64, f64, Vec3, Vec3)> = (0..mesh.len())
        .map(|i| {
            let [a, b, c] = mesh.triangle(i);
            let lo = a.min_by_component(b).min_by_component(c);
            let hi = a.max_by_component(b).max_by_component(c);
            (lo.x, hi.x, lo, hi)
        })
        .collect();
    let mut order: Vec<usize> = (0..mesh.len()).collect();
    order.sort_by(|&i, &j| boxes[i].0.total_cmp(&boxes[j].0));
    let mut out = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if boxes[j].0 > boxes[i].1 {
                break;
            }
            let (lo1, hi1, lo2, hi2) = (boxes[i].2, boxes[i].3, boxes[j].2, boxes[j].3);
            if lo1.y > hi2.y || lo2.y > hi1.y || lo1.z > hi2.z || lo2.z > hi1.z {
                continue;
            }
            let (ti, tj) = (mesh.triangles[i], mesh.triangles[j]);
            if ti.iter().any(|v| tj.contains(v)) {
                continue;
            }
            if triangles_intersect(&mesh.triangle(i), &mesh.triangle(j)) {
                out.push((i.min(j), i.max(j)));
            }
        }
    }
    out.sort_unstable();
    out
}
