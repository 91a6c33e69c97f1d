//! ASCII STL and indexed JSON mesh formats.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::mesh::SurfaceMesh;
use super::trap::{Electrode, ElectrodeRole, TrapGeometry};
use super::GeometryError;
use crate::math::Vec3;

pub const MESH_FORMAT_VERSION: u32 = 1;

pub fn write_stl(name: &str, mesh: &SurfaceMesh) -> String {
    let mut s = String::new();
    writeln!(s, "solid {name}").unwrap();
    for i in 0..mesh.len() {
        let n = mesh.normals[i];
        writeln!(s, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z).unwrap();
        writeln!(s, "    outer loop").unwrap();
        for v in mesh.triangle(i) {
            writeln!(s, "      vertex {:e} {:e} {:e}", v.x, v.y, v.z).unwrap();
        }
        writeln!(s, "    endloop").unwrap();
        writeln!(s, "  endfacet").unwrap();
    }
    writeln!(s, "endsolid {name}").unwrap();
    s
}

/// Parse every solid in an ASCII STL. Vertices with bit-identical coordinates are merged;
/// normals are rederived from the winding.
pub fn read_stl(text: &str) -> Result<Vec<(String, SurfaceMesh)>, GeometryError> {
    let mut solids = Vec::new();
    let mut current: Option<(String, Vec<Vec3>, Vec<[usize; 3]>, HashMap<[u64; 3], usize>)> = None;
    let mut corner = Vec::with_capacity(3);
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        let bad = |msg: &str| GeometryError::Format(format!("stl line {}: {msg}", lineno + 1));
        match tok.next() {
            Some("solid") => {
                let name = tok.collect::<Vec<_>>().join(" ");
                current = Some((name, Vec::new(), Vec::new(), HashMap::new()));
            }
            Some("vertex") => {
                let cur = current.as_mut().ok_or_else(|| bad("vertex outside solid"))?;
                let c: Vec<f64> = tok.map(|t| t.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad("bad number"))?;
                if c.len() != 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                let key = [c[0].to_bits(), c[1].to_bits(), c[2].to_bits()];
                let next = cur.1.len();
                let idx = *cur.3.entry(key).or_insert(next);
                if idx == next {
                    cur.1.push(Vec3::new(c[0], c[1], c[2]));
                }
                corner.push(idx);
            }
            Some("endloop") => {
                let cur = current.as_mut().ok_or_else(|| bad("endloop outside solid"))?;
                if corner.len() != 3 {
                    return Err(bad("only triangular facets are supported"));
                }
                cur.2.push([corner[0], corner[1], corner[2]]);
                corner.clear();
            }
            Some("endsolid") => {
                let (name, v, t, _) = current.take().ok_or_else(|| bad("endsolid without solid"))?;
                solids.push((name, SurfaceMesh::new(v, t)));
            }
            _ => {}
        }
    }
    if current.is_some() {
        return Err(GeometryError::Format("stl: missing endsolid".into()));
    }
    Ok(solids)
}

#[derive(Serialize, Deserialize)]
struct JsonElectrode {
    name: String,
    role: ElectrodeRole,
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
struct JsonGeometry {
    format_version: u32,
    length_unit: String,
    center: [f64; 3],
    electrodes: Vec<JsonElectrode>,
}

/// Indexed JSON form of a geometry (SI meters).
pub fn geometry_to_json(g: &TrapGeometry) -> String {
    let doc = JsonGeometry {
        format_version: MESH_FORMAT_VERSION,
        length_unit: "m".into(),
        center: g.center.to_array(),
        electrodes: g
            .electrodes
            .iter()
            .map(|e| JsonElectrode {
                name: e.name.clone(),
                role: e.role,
                vertices: e.mesh.vertices.iter().map(|v| v.to_array()).collect(),
                triangles: e.mesh.triangles.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("geometry serializes")
}

pub fn geometry_from_json(text: &str) -> Result<TrapGeometry, GeometryError> {
    let doc: JsonGeometry = serde_json::from_str(text).map_err(|e| GeometryError::Format(e.to_string()))?;
    if doc.format_version != MESH_FORMAT_VERSION {
        return Err(GeometryError::invalid("format_version", format!("unsupported version {}", doc.format_version)));
    }
    let s = super::config::length_scale(&doc.length_unit)
        .ok_or_else(|| GeometryError::invalid("length_unit", format!("unknown unit '{}'", doc.length_unit)))?;
    let electrodes = doc
        .electrodes
        .into_iter()
        .map(|e| {
            let mesh = SurfaceMesh::new(e.vertices.iter().map(|&v| Vec3::from_array(v) * s).collect(), e.triangles);
            let defects = super::mesh::validate_mesh(&mesh);
            if defects.is_empty() {
                Ok(Electrode { name: e.name, role: e.role, mesh })
            } else {
                Err(GeometryError::InvalidMesh { electrode: e.name, defects })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrapGeometry::new(electrodes, Vec3::from_array(doc.center) * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::box_mesh;

    #[test]
    fn stl_round_trip() {
        let cube = box_mesh(Vec3::ZERO, Vec3::new(1e-3, 2e-3, 3e-3), 2);
        let text = write_stl("cube", &cube);
        let back = read_stl(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, "cube");
        let m = &back[0].1;
        assert_eq!(m.len(), cube.len());
        assert!((m.total_area() - cube.total_area()).abs() < 1e-15);
        for i in 0..m.len() {
            assert!(m.normals[i].dot(cube.normals[i]) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let cube = box_mesh(Vec3::ZERO, Vec3::new(1e-3, 1e-3, 1e-3), 2);
        let g = TrapGeometry::new(vec![Electrode { name: "c".into(), role: ElectrodeRole::DcEndcap2, mesh: cube }], Vec3::new(5e-3, 0.0, 0.0));
        let back = geometry_from_json(&geometry_to_json(&g)).unwrap();
        assert_eq!(back, g);
    }
}
