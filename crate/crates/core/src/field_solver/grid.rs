//! Regular-grid cache of basis potentials and fields with tricubic interpolation.

use serde::{Deserialize, Serialize};

use super::{BasisFieldSet, FieldError, FieldSource};
use crate::geometry::raycast::containing_owner;
use crate::geometry::ElectrodeRole;
use crate::math::{Point3, Vec3};
use crate::par;

/// Axis-aligned box sampled at uniform per-axis spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRegion {
    pub min: Point3,
    pub max: Point3,
    pub spacing: [f64; 3],
}

impl GridRegion {
    /// Cube of half-width `half` about `center` with equal spacing.
    pub fn cube(center: Point3, half: [f64; 3], spacing: f64) -> Self {
        let h = Vec3::new(half[0], half[1], half[2]);
        GridRegion { min: center - h, max: center + h, spacing: [spacing; 3] }
    }

    fn dims(&self) -> [usize; 3] {
        let ext = (self.max - self.min).to_array();
        std::array::from_fn(|k| ((ext[k] / self.spacing[k]).round() as usize).max(1) + 1)
    }
}

/// Node values `(potential, Ex, Ey, Ez)` for a set of channels on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridData {
    pub origin: Point3,
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    pub channels: usize,
    /// `values[((node * channels) + c) * 4 + k]`, node = (iz * ny + iy) * nx + ix.
    pub values: Vec<f64>,
}

/// Catmull-Rom weights for the four nodes around fractional offset `t` in [0, 1].
#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

impl GridData {
    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn node_position(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        self.origin
            + Vec3::new(ix as f64 * self.spacing[0], iy as f64 * self.spacing[1], iz as f64 * self.spacing[2])
    }

    pub fn upper_corner(&self) -> Point3 {
        self.node_position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    pub fn contains(&self, p: Point3) -> bool {
        let hi = self.upper_corner();
        p.x >= self.origin.x && p.y >= self.origin.y && p.z >= self.origin.z && p.x <= hi.x && p.y <= hi.y && p.z <= hi.z
    }

    /// Stored `(potential, field)` of channel `c` at a node.
    pub fn node(&self, c: usize, ix: usize, iy: usize, iz: usize) -> (f64, Vec3) {
        let n = (iz * self.dims[1] + iy) * self.dims[0] + ix;
        let b = (n * self.channels + c) * 4;
        let v = &self.values[b..b + 4];
        (v[0], Vec3::new(v[1], v[2], v[3]))
    }

    /// Tricubic Catmull-Rom interpolation of every channel. Stencils are clamped at the
    /// boundary, so the outermost cell layer is only quadratically accurate.
    pub fn interpolate(&self, p: Point3) -> Result<Vec<(f64, Vec3)>, FieldError> {
        if !self.contains(p) {
            return Err(FieldError::OutOfRegion(p.to_array()));
        }
        let rel = (p - self.origin).to_array();
        let mut base = [0usize; 3];
        let mut w = [[0.0; 4]; 3];
        for k in 0..3 {
            let s = rel[k] / self.spacing[k];
            let cells = self.dims[k] - 1;
            let i = if cells == 0 { 0 } else { (s.floor() as usize).min(cells - 1) };
            base[k] = i;
            w[k] = if cells == 0 { [0.0, 1.0, 0.0, 0.0] } else { catmull_rom(s - i as f64) };
        }
        let idx = |k: usize, o: usize| -> usize { (base[k] + o).saturating_sub(1).min(self.dims[k] - 1) };
        let mut acc = vec![[0.0f64; 4]; self.channels];
        for (oz, wz) in w[2].iter().enumerate() {
            if *wz == 0.0 {
                continue;
            }
            let iz = idx(2, oz);
            for (oy, wy) in w[1].iter().enumerate() {
                if *wy == 0.0 {
                    continue;
                }
                let iy = idx(1, oy);
                let wyz = wy * wz;
                for (ox, wx) in w[0].iter().enumerate() {
                    let ix = idx(0, ox);
                    let weight = wx * wyz;
                    let n = (iz * self.dims[1] + iy) * self.dims[0] + ix;
                    let row = &self.values[n * self.channels * 4..(n + 1) * self.channels * 4];
                    for (a, v) in acc.iter_mut().zip(row.chunks_exact(4)) {
                        a[0] += weight * v[0];
                        a[1] += weight * v[1];
                        a[2] += weight * v[2];
                        a[3] += weight * v[3];
                    }
                }
            }
        }
        Ok(acc.into_iter().map(|a| (a[0], Vec3::new(a[1], a[2], a[3]))).collect())
    }

    /// New grid whose channel `i` is `sum_c weights[i][c] * channel c`.
    pub fn combine(&self, weights: &[Vec<f64>]) -> GridData {
        let nodes = self.node_count();
        let m = weights.len();
        let mut values = vec![0.0; nodes * m * 4];
        for n in 0..nodes {
            let src = &self.values[n * self.channels * 4..(n + 1) * self.channels * 4];
            for (i, w) in weights.iter().enumerate() {
                let dst = &mut values[(n * m + i) * 4..(n * m + i) * 4 + 4];
                for (c, wc) in w.iter().enumerate() {
                    for k in 0..4 {
                        dst[k] += wc * src[c * 4 + k];
                    }
                }
            }
        }
        GridData { origin: self.origin, spacing: self.spacing, dims: self.dims, channels: m, values }
    }
}

/// Cached unit-voltage fields of every electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub names: Vec<String>,
    pub roles: Vec<ElectrodeRole>,
    pub data: GridData,
}

/// Sample every basis at the nodes of `region`. Fails if a node lies inside an
/// electrode or within a tenth of a panel diameter of a surface.
pub fn cache_grid(fields: &BasisFieldSet, region: &GridRegion) -> Result<FieldGrid, FieldError> {
    let dims = region.dims();
    let spacing = region.spacing;
    if spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(FieldError::Cache("grid spacing must be positive".into()));
    }
    let sys = &fields.system;
    let bvh = fields.bvh();
    let channels = sys.names.len();
    let origin = region.min;
    let plane = dims[0] * dims[1];
    let nodes = plane * dims[2];
    let pos = |n: usize| {
        let (iz, rem) = (n / plane, n % plane);
        origin + Vec3::new((rem % dims[0]) as f64 * spacing[0], (rem / dims[0]) as f64 * spacing[1], iz as f64 * spacing[2])
    };
    let sampled = par::map_range(nodes, |n| {
        let p = pos(n);
        if let Some(k) = containing_owner(bvh, &sys.owner, channels, p) {
            return Err(FieldError::RegionOverlapsElectrode(sys.names[k].clone()));
        }
        match fields.unit_fields(p) {
            Err(FieldError::TooCloseToSurface { .. }) => {
                let k = sys.owner[nearest_panel(sys, p)];
                Err(FieldError::RegionOverlapsElectrode(sys.names[k].clone()))
            }
            other => other,
        }
    });
    let mut values = Vec::with_capacity(nodes * channels * 4);
    for s in sampled {
        for (phi, e) in s? {
            values.extend([phi, e.x, e.y, e.z]);
        }
    }
    Ok(FieldGrid {
        names: sys.names.clone(),
        roles: sys.roles.clone(),
        data: GridData { origin, spacing, dims, channels, values },
    })
}

/// Sample any field source at the nodes of `region`.
pub fn sample_grid(source: &dyn FieldSource, region: &GridRegion) -> Result<FieldGrid, FieldError> {
    let dims = region.dims();
    let spacing = region.spacing;
    if spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(FieldError::Cache("grid spacing must be positive".into()));
    }
    let origin = region.min;
    let plane = dims[0] * dims[1];
    let nodes = plane * dims[2];
    let sampled = par::map_range(nodes, |n| {
        let (iz, rem) = (n / plane, n % plane);
        let p = origin + Vec3::new((rem % dims[0]) as f64 * spacing[0], (rem / dims[0]) as f64 * spacing[1], iz as f64 * spacing[2]);
        if source.inside_conductor(p) {
            return Err(FieldError::RegionOverlapsElectrode(format!("{:?}", p.to_array())));
        }
        source.unit_fields(p)
    });
    let channels = source.electrode_names().len();
    let mut values = Vec::with_capacity(nodes * channels * 4);
    for s in sampled {
        for (phi, e) in s? {
            values.extend([phi, e.x, e.y, e.z]);
        }
    }
    Ok(FieldGrid {
        names: source.electrode_names().to_vec(),
        roles: source.electrode_roles().to_vec(),
        data: GridData { origin, spacing, dims, channels, values },
    })
}

fn nearest_panel(sys: &super::PanelSystem, p: Point3) -> usize {
    (0..sys.len())
        .min_by(|&a, &b| sys.panels[a].distance_to(p).total_cmp(&sys.panels[b].distance_to(p)))
        .unwrap_or(0)
}

impl FieldGrid {
    /// Channels combined with per-channel weight vectors (e.g. rf and dc drives).
    pub fn combine(&self, weights: &[Vec<f64>]) -> GridData {
        self.data.combine(weights)
    }
}

impl FieldSource for FieldGrid {
    fn as_grid(&self) -> Option<&GridData> {
        Some(&self.data)
    }

    fn electrode_names(&self) -> &[String] {
        &self.names
    }

    fn electrode_roles(&self) -> &[ElectrodeRole] {
        &self.roles
    }

    fn unit_fields(&self, p: Point3) -> Result<Vec<(f64, Vec3)>, FieldError> {
        self.data.interpolate(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic(p: Vec3) -> (f64, Vec3) {
        // harmonic test potential phi = x^2 - y^2 + x y z + 0.3 z
        let phi = p.x * p.x - p.y * p.y + p.x * p.y * p.z + 0.3 * p.z;
        let grad = Vec3::new(2.0 * p.x + p.y * p.z, -2.0 * p.y + p.x * p.z, p.x * p.y + 0.3);
        (phi, -grad)
    }

    fn grid_of(h: f64) -> GridData {
        let dims = [((2.0 / h).round() as usize) + 1; 3];
        let origin = Vec3::new(-1.0, -1.0, -1.0);
        let mut values = Vec::new();
        for iz in 0..dims[2] {
            for iy in 0..dims[1] {
                for ix in 0..dims[0] {
                    let p = origin + Vec3::new(ix as f64 * h, iy as f64 * h, iz as f64 * h);
                    let (phi, e) = analytic(p);
                    values.extend([phi, e.x, e.y, e.z]);
                }
            }
        }
        GridData { origin, spacing: [h; 3], dims, channels: 1, values }
    }

    #[test]
    fn nodes_reproduce_stored_values() {
        let g = grid_of(0.25);
        for (ix, iy, iz) in [(0, 0, 0), (3, 5, 2), (8, 8, 8), (4, 1, 7)] {
            let p = g.node_position(ix, iy, iz);
            let got = g.interpolate(p).unwrap()[0];
            let want = g.node(0, ix, iy, iz);
            assert_eq!(got.0, want.0);
            assert_eq!(got.1, want.1);
        }
    }

    #[test]
    fn cubic_fields_are_reproduced_inside() {
        // Catmull-Rom is exact for quadratics; the xyz term is trilinear
        let g = grid_of(0.25);
        let p = Vec3::new(0.13, -0.41, 0.37);
        let (phi, e) = g.interpolate(p).unwrap()[0];
        let (a, ea) = analytic(p);
        assert!((phi - a).abs() < 1e-12);
        assert!((e - ea).norm() < 1e-12);
    }

    #[test]
    fn outside_is_error() {
        let g = grid_of(0.5);
        assert!(matches!(g.interpolate(Vec3::new(1.5, 0.0, 0.0)), Err(FieldError::OutOfRegion(_))));
    }

    #[test]
    fn combine_is_linear() {
        let g = grid_of(0.5);
        let mut two = g.clone();
        two.channels = 2;
        two.values = g.values.chunks(4).flat_map(|c| c.iter().chain(c.iter()).copied().collect::<Vec<_>>()).collect();
        let c = two.combine(&[vec![2.0, -0.5]]);
        let p = Vec3::new(0.2, 0.3, -0.1);
        let a = g.interpolate(p).unwrap()[0];
        let b = c.interpolate(p).unwrap()[0];
        assert!((b.0 - 1.5 * a.0).abs() < 1e-12);
    }
}
