use std::collections::{BTreeMap, BTreeSet, HashMap};

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use super::{CoverageMap, EvaporationError, Scene};
use crate::math::Vec3;

/// A contact region: global triangle indices belonging to one electrical terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pad {
    pub name: String,
    pub triangles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Sorted global triangle indices.
    pub triangles: Vec<usize>,
    /// Pads touched by this component, sorted.
    pub pads: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductiveGraph {
    pub threshold_m: f64,
    /// Components ordered by their smallest triangle index.
    pub components: Vec<Component>,
}

impl ConductiveGraph {
    pub fn conductive_triangles(&self) -> usize {
        self.components.iter().map(|c| c.triangles.len()).sum()
    }

    /// No component joins two different pads.
    pub fn isolated(&self) -> bool {
        self.components.iter().all(|c| c.pads.len() < 2)
    }

    /// Pairs of pads joined by some component.
    pub fn shorts(&self) -> Vec<(String, String)> {
        let mut out = BTreeSet::new();
        for c in &self.components {
            for (i, a) in c.pads.iter().enumerate() {
                for b in &c.pads[i + 1..] {
                    out.insert((a.clone(), b.clone()));
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn component_of(&self, triangle: usize) -> Option<usize> {
        self.components.iter().position(|c| c.triangles.binary_search(&triangle).is_ok())
    }
}

/// Join triangles at or above `threshold_m` that share an edge (including edges split
/// by a T-junction), and label the components by the pads they touch.
pub fn connectivity(scene: &Scene, coverage: &CoverageMap, threshold_m: f64, pads: &[Pad]) -> Result<ConductiveGraph, EvaporationError> {
    let n = scene.triangle_count();
    if coverage.len() != n {
        return Err(EvaporationError::Mismatch(format!("{} values for {} triangles", coverage.len(), n)));
    }
    if !(threshold_m > 0.0) {
        return Err(EvaporationError::InvalidConfig("threshold must be positive".into()));
    }
    for p in pads {
        if let Some(&bad) = p.triangles.iter().find(|&&t| t >= n) {
            return Err(EvaporationError::Mismatch(format!("pad `{}` references triangle {bad}", p.name)));
        }
    }
    let on: Vec<bool> = coverage.thickness_m.iter().map(|&t| t >= threshold_m).collect();
    let edges = shared_edges(scene);
    let mut uf = UnionFind::<usize>::new(n);
    for (a, b) in edges {
        if on[a] && on[b] {
            uf.union(a, b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for t in (0..n).filter(|&t| on[t]) {
        groups.entry(uf.find(t)).or_default().push(t);
    }
    let mut pad_of: HashMap<usize, Vec<&str>> = HashMap::new();
    for p in pads {
        for &t in &p.triangles {
            pad_of.entry(t).or_default().push(&p.name);
        }
    }
    let mut components: Vec<Component> = groups
        .into_values()
        .map(|triangles| {
            let pads: BTreeSet<String> = triangles.iter().flat_map(|t| pad_of.get(t).into_iter().flatten()).map(|s| s.to_string()).collect();
            Component { triangles, pads: pads.into_iter().collect() }
        })
        .collect();
    components.sort_by_key(|c| c.triangles[0]);
    Ok(ConductiveGraph { threshold_m, components })
}

type Key = (i64, i64, i64);

/// Pairs of global triangles sharing an edge segment of positive length.
fn shared_edges(scene: &Scene) -> Vec<(usize, usize)> {
    let extent = scene.extent().max(f64::MIN_POSITIVE);
    let tol = 1e-9 * extent;
    let key = |p: Vec3| -> Key { ((p.x / tol).round() as i64, (p.y / tol).round() as i64, (p.z / tol).round() as i64) };

    let mut by_edge: HashMap<(Key, Key), Vec<usize>> = HashMap::new();
    let mut segs: Vec<(Vec3, Vec3, usize)> = Vec::new();
    let mut g = 0;
    for (_, m) in &scene.surfaces {
        for i in 0..m.len() {
            let v = m.triangle(i);
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                let (ka, kb) = (key(a), key(b));
                by_edge.entry(if ka < kb { (ka, kb) } else { (kb, ka) }).or_default().push(g);
                segs.push((a, b, g));
            }
            g += 1;
        }
    }
    let mut pairs = BTreeSet::new();
    let mut open = Vec::new();
    for (e, ts) in &by_edge {
        for (i, &a) in ts.iter().enumerate() {
            for &b in &ts[i + 1..] {
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
        if ts.len() == 1 {
            open.push(*e);
        }
    }

    // unmatched edges may still overlap another one along a T-junction
    let open: BTreeSet<(Key, Key)> = open.into_iter().collect();
    let loose: Vec<&(Vec3, Vec3, usize)> = segs
        .iter()
        .filter(|(a, b, _)| {
            let (ka, kb) = (key(*a), key(*b));
            open.contains(&if ka < kb { (ka, kb) } else { (kb, ka) })
        })
        .collect();
    if loose.len() > 1 {
        let cell = loose.iter().map(|(a, b, _)| a.distance(*b)).fold(0.0, f64::max).max(tol);
        let ckey = |p: Vec3| -> Key { ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64) };
        let mut grid: HashMap<Key, Vec<usize>> = HashMap::new();
        for (i, (a, b, _)) in loose.iter().enumerate() {
            grid.entry(ckey((*a + *b) * 0.5)).or_default().push(i);
        }
        for (i, (a, b, ta)) in loose.iter().enumerate() {
            let c = ckey((*a + *b) * 0.5);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(list) = grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) else { continue };
                        for &j in list {
                            let (p, q, tb) = loose[j];
                            if j > i && ta != tb && overlap(*a, *b, *p, *q, tol) {
                                pairs.insert(((*ta).min(*tb), (*ta).max(*tb)));
                            }
                        }
                    }
                }
            }
        }
    }
    pairs.into_iter().collect()
}

/// Collinear segments sharing a stretch longer than `tol`.
fn overlap(a: Vec3, b: Vec3, p: Vec3, q: Vec3, tol: f64) -> bool {
    let d = b - a;
    let len = d.norm();
    if len <= tol {
        return false;
    }
    let u = d / len;
    let off = |x: Vec3| {
        let r = x - a;
        (r - u * r.dot(u)).norm()
    };
    if off(p) > tol || off(q) > tol {
        return false;
    }
    let (s0, s1) = ((p - a).dot(u), (q - a).dot(u));
    let (lo, hi) = (s0.min(s1).max(0.0), s0.max(s1).min(len));
    hi - lo > tol
}
