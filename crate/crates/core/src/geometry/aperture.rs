//! Numerical aperture by sampled ray casting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raycast::Bvh;
use super::trap::TrapGeometry;
use super::GeometryError;
use crate::math::{Point3, Vec3};
use crate::par;

/// A planar circular opening (e.g. a viewport): rays crossing its plane outside
/// `radius` of `center` are blocked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularStop {
    pub center: Point3,
    pub normal: Vec3,
    pub radius: f64,
}

impl CircularStop {
    /// Stop on `axis` at distance `distance` from `origin`, sized so its edge subtends
    /// `sin_theta` from the origin.
    pub fn for_na(origin: Point3, axis: Vec3, distance: f64, sin_theta: f64) -> Self {
        let theta = sin_theta.asin();
        CircularStop { center: origin + axis * distance, normal: axis, radius: distance * theta.tan() }
    }

    pub fn blocks(&self, origin: Point3, dir: Vec3) -> bool {
        let denom = dir.dot(self.normal);
        if denom.abs() < 1e-300 {
            return false;
        }
        let t = (self.center - origin).dot(self.normal) / denom;
        if t <= 0.0 {
            return false;
        }
        (origin + dir * t).distance(self.center) > self.radius
    }
}

/// Sampling density of [`numerical_aperture`].
///
/// The cone is scanned outward in `scan_step` increments; each ring is sampled with
/// `azimuth_samples` rays at a seed-dependent phase. The first blocked ring is then
/// bisected down to `tolerance` (rad). Features narrower than the azimuthal spacing
/// (2 pi sin(theta) / azimuth_samples of angle) can be missed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaSampling {
    pub scan_step: f64,
    pub azimuth_samples: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for NaSampling {
    fn default() -> Self {
        NaSampling { scan_step: 0.25f64.to_radians(), azimuth_samples: 720, tolerance: 1e-6, seed: 7 }
    }
}

struct Scene<'a> {
    bvh: Bvh,
    stops: &'a [CircularStop],
    origin: Point3,
    axis: Vec3,
    e1: Vec3,
    e2: Vec3,
}

impl Scene<'_> {
    fn escapes(&self, dir: Vec3) -> bool {
        !self.bvh.occluded(self.origin, dir, 0.0, f64::INFINITY, None) && !self.stops.iter().any(|s| s.blocks(self.origin, dir))
    }

    fn ring_clear(&self, theta: f64, n: usize, phase: f64) -> bool {
        if theta == 0.0 {
            return self.escapes(self.axis);
        }
        let (s, c) = theta.sin_cos();
        let blocked = par::map_range(n, |k| {
            let phi = std::f64::consts::TAU * (k as f64 + phase) / n as f64;
            let d = self.axis * c + (self.e1 * phi.cos() + self.e2 * phi.sin()) * s;
            !self.escapes(d)
        });
        !blocked.into_iter().any(|b| b)
    }
}

/// sin of the largest half-angle of a cone about `axis` whose rays from `origin`
/// all escape the geometry and the extra stops. Returns 1.0 for an unobstructed half-space.
pub fn numerical_aperture(
    geometry: &TrapGeometry,
    origin: Point3,
    axis: Vec3,
    extra_apertures: &[CircularStop],
    sampling: &NaSampling,
) -> Result<f64, GeometryError> {
    let axis = axis
        .try_normalize()
        .ok_or_else(|| GeometryError::invalid("axis", "must be a nonzero vector"))?;
    let bvh = geometry.bvh();
    if let Some(k) = geometry.electrode_containing(&bvh, origin) {
        return Err(GeometryError::OriginInsideElectrode(geometry.electrodes[k].name.clone()));
    }
    let e1 = axis.any_orthonormal();
    let e2 = axis.cross(e1);
    let scene = Scene { bvh, stops: extra_apertures, origin, axis, e1, e2 };
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let n = sampling.azimuth_samples.max(8);
    let half_pi = std::f64::consts::FRAC_PI_2;

    if !scene.ring_clear(0.0, n, 0.0) {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = None;
    let mut theta = sampling.scan_step;
    while theta < half_pi {
        if scene.ring_clear(theta, n, rng.gen()) {
            lo = theta;
        } else {
            hi = Some(theta);
            break;
        }
        theta += sampling.scan_step;
    }
    let mut hi = match hi {
        Some(h) => h,
        None if scene.ring_clear(half_pi, n, rng.gen()) => return Ok(1.0),
        None => half_pi,
    };
    while hi - lo > sampling.tolerance {
        let mid = 0.5 * (lo + hi);
        if scene.ring_clear(mid, n, rng.gen()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::box_mesh;
    use crate::geometry::trap::{Electrode, ElectrodeRole};

    #[test]
    fn empty_geometry_is_fully_open() {
        let na = numerical_aperture(&TrapGeometry::empty(), Vec3::ZERO, Vec3::Y, &[], &NaSampling::default()).unwrap();
        assert_eq!(na, 1.0);
    }

    #[test]
    fn viewport_stop_matches_analytic() {
        let stop = CircularStop::for_na(Vec3::ZERO, Vec3::Y, 0.05, 0.18);
        let na = numerical_aperture(&TrapGeometry::empty(), Vec3::ZERO, Vec3::Y, &[stop], &NaSampling::default()).unwrap();
        assert!((na - 0.18).abs() < 1e-5, "{na}");
    }

    #[test]
    fn square_hole_limited_by_nearest_edge() {
        // plate with a square hole of half-width w at height d: NA set by the edge midpoints
        let (w, d) = (1.0, 2.0);
        let mut mesh = box_mesh(Vec3::new(w, -5.0, d), Vec3::new(5.0, 5.0, d + 0.1), 2);
        mesh.append(&box_mesh(Vec3::new(-5.0, -5.0, d), Vec3::new(-w, 5.0, d + 0.1), 2));
        mesh.append(&box_mesh(Vec3::new(-w, w, d), Vec3::new(w, 5.0, d + 0.1), 2));
        mesh.append(&box_mesh(Vec3::new(-w, -5.0, d), Vec3::new(w, -w, d + 0.1), 2));
        let g = TrapGeometry::new(vec![Electrode { name: "plate".into(), role: ElectrodeRole::Ground, mesh }], Vec3::ZERO);
        let na = numerical_aperture(&g, Vec3::ZERO, Vec3::Z, &[], &NaSampling::default()).unwrap();
        // the far face of the plate (z = d + 0.1) sets the limit
        let expect = (w / (d + 0.1)).atan().sin();
        assert!((na - expect).abs() < 2e-3, "{na} vs {expect}");
    }

    #[test]
    fn origin_inside_is_error() {
        let mesh = box_mesh(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0), 1);
        let g = TrapGeometry::new(vec![Electrode { name: "cube".into(), role: ElectrodeRole::Ground, mesh }], Vec3::new(5.0, 0.0, 0.0));
        let r = numerical_aperture(&g, Vec3::ZERO, Vec3::Z, &[], &NaSampling::default());
        assert!(matches!(r, Err(GeometryError::OriginInsideElectrode(ref n)) if n == "cube"));
    }
}
