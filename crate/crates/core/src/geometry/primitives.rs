//! Mesh generators: structured quads, graded quadtree faces, boxes, spheres, disks
//! and extruded prisms.

use std::collections::HashMap;

use super::mesh::SurfaceMesh;
use crate::math::Vec3;

/// Bilinear map of the unit square onto a planar quad given counter-clockwise
/// (seen from the outward side) corners.
fn bilinear(c: &[Vec3; 4], u: f64, v: f64) -> Vec3 {
    c[0] * ((1.0 - u) * (1.0 - v)) + c[1] * (u * (1.0 - v)) + c[2] * (u * v) + c[3] * ((1.0 - u) * v)
}

/// Conforming `nu x nv` grid over a planar quad. Corners are counter-clockwise
/// seen from the side the normals should point to.
pub fn quad_grid(corners: [Vec3; 4], nu: usize, nv: usize) -> SurfaceMesh {
    assert!(nu > 0 && nv > 0);
    let mut vertices = Vec::with_capacity((nu + 1) * (nv + 1));
    for j in 0..=nv {
        for i in 0..=nu {
            vertices.push(bilinear(&corners, i as f64 / nu as f64, j as f64 / nv as f64));
        }
    }
    let idx = |i: usize, j: usize| j * (nu + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    SurfaceMesh::new(vertices, triangles)
}

/// Quadtree-refined mesh of a planar quad. A cell is split until the diagonal of its
/// two triangles is no longer than `size(nearest_point_hint)`, where the hint is the
/// cell point passed to `size`. Cells are split along their long side first so the
/// output stays close to isotropic. The result is not conforming across refinement
/// levels, which is fine for constant-density panels.
pub fn graded_quad(corners: [Vec3; 4], size: &dyn Fn(&[Vec3; 4]) -> f64) -> SurfaceMesh {
    let lu = corners[0].distance(corners[1]).max(corners[3].distance(corners[2]));
    let lv = corners[0].distance(corners[3]).max(corners[1].distance(corners[2]));
    let short = lu.min(lv).max(f64::MIN_POSITIVE);
    let nu = (lu / short).round().max(1.0) as usize;
    let nv = (lv / short).round().max(1.0) as usize;

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut cache: HashMap<(u64, u64), usize> = HashMap::new();
    let mut vertex = |u: f64, v: f64, vertices: &mut Vec<Vec3>| -> usize {
        let key = (u.to_bits(), v.to_bits());
        *cache.entry(key).or_insert_with(|| {
            vertices.push(bilinear(&corners, u, v));
            vertices.len() - 1
        })
    };

    let mut stack: Vec<(f64, f64, f64, f64, u32)> = Vec::new();
    for j in 0..nv {
        for i in 0..nu {
            stack.push((
                i as f64 / nu as f64,
                (i + 1) as f64 / nu as f64,
                j as f64 / nv as f64,
                (j + 1) as f64 / nv as f64,
                0,
            ));
        }
    }
    while let Some((u0, u1, v0, v1, depth)) = stack.pop() {
        let cell = [
            bilinear(&corners, u0, v0),
            bilinear(&corners, u1, v0),
            bilinear(&corners, u1, v1),
            bilinear(&corners, u0, v1),
        ];
        let su = cell[0].distance(cell[1]).max(cell[3].distance(cell[2]));
        let sv = cell[0].distance(cell[3]).max(cell[1].distance(cell[2]));
        let diag = cell[0].distance(cell[2]).max(cell[1].distance(cell[3])).max(su).max(sv);
        let target = size(&cell);
        if diag <= target || depth > 40 {
            let a = vertex(u0, v0, &mut vertices);
            let b = vertex(u1, v0, &mut vertices);
            let c = vertex(u1, v1, &mut vertices);
            let d = vertex(u0, v1, &mut vertices);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
            continue;
        }
        let (um, vm) = (0.5 * (u0 + u1), 0.5 * (v0 + v1));
        if su > 1.5 * sv {
            stack.push((u0, um, v0, v1, depth + 1));
            stack.push((um, u1, v0, v1, depth + 1));
        } else if sv > 1.5 * su {
            stack.push((u0, u1, v0, vm, depth + 1));
            stack.push((u0, u1, vm, v1, depth + 1));
        } else {
            stack.push((u0, um, v0, vm, depth + 1));
            stack.push((um, u1, v0, vm, depth + 1));
            stack.push((u0, um, vm, v1, depth + 1));
            stack.push((um, u1, vm, v1, depth + 1));
        }
    }
    SurfaceMesh::new(vertices, triangles)
}

/// Axis-aligned box with `n x n` cells per face and outward normals.
pub fn box_mesh(min: Vec3, max: Vec3, n: usize) -> SurfaceMesh {
    let p = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let (a, b) = (min, max);
    let faces = [
        // -x, +x
        [p(a.x, a.y, a.z), p(a.x, a.y, b.z), p(a.x, b.y, b.z), p(a.x, b.y, a.z)],
        [p(b.x, a.y, a.z), p(b.x, b.y, a.z), p(b.x, b.y, b.z), p(b.x, a.y, b.z)],
        // -y, +y
        [p(a.x, a.y, a.z), p(b.x, a.y, a.z), p(b.x, a.y, b.z), p(a.x, a.y, b.z)],
        [p(a.x, b.y, a.z), p(a.x, b.y, b.z), p(b.x, b.y, b.z), p(b.x, b.y, a.z)],
        // -z, +z
        [p(a.x, a.y, a.z), p(a.x, b.y, a.z), p(b.x, b.y, a.z), p(b.x, a.y, a.z)],
        [p(a.x, a.y, b.z), p(b.x, a.y, b.z), p(b.x, b.y, b.z), p(a.x, b.y, b.z)],
    ];
    let mut mesh = SurfaceMesh::empty();
    for f in faces {
        mesh.append(&quad_grid(f, n, n));
    }
    mesh
}

/// Geodesic sphere: each icosahedron face split into `freq^2` triangles and
/// projected onto the sphere. Shared vertices are merged.
pub fn icosphere(center: Vec3, radius: f64, freq: usize) -> SurfaceMesh {
    assert!(freq >= 1);
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let base = [
        Vec3::new(-1.0, t, 0.0),
        Vec3::new(1.0, t, 0.0),
        Vec3::new(-1.0, -t, 0.0),
        Vec3::new(1.0, -t, 0.0),
        Vec3::new(0.0, -1.0, t),
        Vec3::new(0.0, 1.0, t),
        Vec3::new(0.0, -1.0, -t),
        Vec3::new(0.0, 1.0, -t),
        Vec3::new(t, 0.0, -1.0),
        Vec3::new(t, 0.0, 1.0),
        Vec3::new(-t, 0.0, -1.0),
        Vec3::new(-t, 0.0, 1.0),
    ];
    let faces: [[usize; 3]; 20] = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut lookup: HashMap<[i64; 3], usize> = HashMap::new();
    let quant = |v: Vec3| [(v.x * 1e9).round() as i64, (v.y * 1e9).round() as i64, (v.z * 1e9).round() as i64];
    let mut triangles = Vec::new();
    for f in faces {
        let (a, b, c) = (base[f[0]], base[f[1]], base[f[2]]);
        let mut idx = vec![vec![0usize; freq + 1]; freq + 1];
        for i in 0..=freq {
            for j in 0..=(freq - i) {
                let p = a + (b - a) * (i as f64 / freq as f64) + (c - a) * (j as f64 / freq as f64);
                let unit = p.normalize();
                let key = quant(unit);
                let id = *lookup.entry(key).or_insert_with(|| {
                    vertices.push(center + unit * radius);
                    vertices.len() - 1
                });
                idx[i][j] = id;
            }
        }
        for i in 0..freq {
            for j in 0..(freq - i) {
                triangles.push([idx[i][j], idx[i + 1][j], idx[i][j + 1]]);
                if j + 1 < freq - i + 1 && i + 1 <= freq && j + 1 <= freq - (i + 1) {
                    triangles.push([idx[i + 1][j], idx[i + 1][j + 1], idx[i][j + 1]]);
                }
            }
        }
    }
    SurfaceMesh::new(vertices, triangles)
}

/// Smallest icosphere frequency whose longest edge is at most `h`.
pub fn icosphere_for_resolution(center: Vec3, radius: f64, h: f64) -> SurfaceMesh {
    let mut freq = ((1.4 * radius / h).ceil() as usize).max(1);
    loop {
        let m = icosphere(center, radius, freq);
        if m.max_edge_length() <= h || freq > 400 {
            return m;
        }
        freq += 1;
    }
}

/// Flat disk (or annulus when `inner > 0`) facing along `normal`, in `rings`
/// concentric rings with roughly square cells.
pub fn disk(center: Vec3, normal: Vec3, inner: f64, outer: f64, rings: usize) -> SurfaceMesh {
    assert!(outer > inner && inner >= 0.0 && rings >= 1);
    let n = normal.normalize();
    let e1 = n.any_orthonormal();
    let e2 = n.cross(e1);
    let dr = (outer - inner) / rings as f64;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let point = |r: f64, a: f64| center + e1 * (r * a.cos()) + e2 * (r * a.sin());
    for k in 0..rings {
        let r0 = inner + dr * k as f64;
        let r1 = r0 + dr;
        let segs = ((std::f64::consts::TAU * r1 / dr).ceil() as usize).max(6);
        for s in 0..segs {
            let a0 = std::f64::consts::TAU * s as f64 / segs as f64;
            let a1 = std::f64::consts::TAU * (s + 1) as f64 / segs as f64;
            let base = vertices.len();
            if r0 == 0.0 {
                vertices.extend([center, point(r1, a0), point(r1, a1)]);
                triangles.push([base, base + 1, base + 2]);
            } else {
                vertices.extend([point(r0, a0), point(r1, a0), point(r1, a1), point(r0, a1)]);
                triangles.push([base, base + 1, base + 2]);
                triangles.push([base, base + 2, base + 3]);
            }
        }
    }
    SurfaceMesh::new(vertices, triangles)
}

/// Closed prism: a convex quadrilateral cross-section `polygon` in the xy plane
/// (counter-clockwise seen from +z) extruded from `z0` to `z1`. Every face is
/// refined by `size`.
pub fn graded_prism(polygon: &[(f64, f64); 4], z0: f64, z1: f64, size: &dyn Fn(&[Vec3; 4]) -> f64) -> SurfaceMesh {
    assert!(z1 > z0);
    let p = |i: usize, z: f64| Vec3::new(polygon[i % 4].0, polygon[i % 4].1, z);
    let mut mesh = SurfaceMesh::empty();
    for i in 0..4 {
        mesh.append(&graded_quad([p(i, z0), p(i + 1, z0), p(i + 1, z1), p(i, z1)], size));
    }
    mesh.append(&graded_quad([p(0, z1), p(1, z1), p(2, z1), p(3, z1)], size));
    mesh.append(&graded_quad([p(0, z0), p(3, z0), p(2, z0), p(1, z0)], size));
    mesh
}
