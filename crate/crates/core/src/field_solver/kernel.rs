//! Closed-form integrals of 1/|p - r'| over a flat triangle and their gradient.

use crate::math::Vec3;

/// Flat triangle with precomputed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub v: [Vec3; 3],
    pub centroid: Vec3,
    pub normal: Vec3,
    pub area: f64,
    /// Longest edge, m.
    pub diameter: f64,
    edge_dir: [Vec3; 3],
    edge_out: [Vec3; 3],
}

impl Panel {
    pub fn new(v: [Vec3; 3]) -> Self {
        let cross = (v[1] - v[0]).cross(v[2] - v[0]);
        let area = 0.5 * cross.norm();
        let normal = cross.normalize();
        let mut edge_dir = [Vec3::ZERO; 3];
        let mut edge_out = [Vec3::ZERO; 3];
        let mut diameter: f64 = 0.0;
        for i in 0..3 {
            let e = v[(i + 1) % 3] - v[i];
            diameter = diameter.max(e.norm());
            edge_dir[i] = e.normalize();
            edge_out[i] = edge_dir[i].cross(normal);
        }
        Panel { v, centroid: (v[0] + v[1] + v[2]) / 3.0, normal, area, diameter, edge_dir, edge_out }
    }

    /// `(integral of 1/R dA, gradient of that integral with respect to p)`.
    ///
    /// Units: m and dimensionless. The gradient is exact, including in the panel plane
    /// away from the edges.
    #[inline]
    pub fn potential_and_gradient(&self, p: Vec3) -> (f64, Vec3) {
        let h = (p - self.v[0]).dot(self.normal);
        let abs_h = h.abs();
        let rho = p - self.normal * h;
        let r: [f64; 3] = [p.distance(self.v[0]), p.distance(self.v[1]), p.distance(self.v[2])];
        let mut sum_f = 0.0;
        let mut sum_beta = 0.0;
        let mut grad_in_plane = Vec3::ZERO;
        for i in 0..3 {
            let j = (i + 1) % 3;
            let s = self.edge_dir[i];
            let m = self.edge_out[i];
            let a = self.v[i] - rho;
            let b = self.v[j] - rho;
            let t0 = a.dot(m);
            let lm = a.dot(s);
            let lp = b.dot(s);
            let (rm, rp) = (r[i], r[j]);
            let r0sq = t0 * t0 + h * h;
            let f = if lp + lm >= 0.0 {
                ((rp + lp) / (rm + lm)).ln()
            } else {
                ((rm - lm) / (rp - lp)).ln()
            };
            let f = if f.is_finite() { f } else { 0.0 };
            if t0.abs() > 0.0 {
                sum_f += t0 * f;
                sum_beta += (t0 * lp / (r0sq + abs_h * rp)).atan() - (t0 * lm / (r0sq + abs_h * rm)).atan();
            }
            grad_in_plane += m * f;
        }
        let pot = sum_f - abs_h * sum_beta;
        let sign_h = if h > 0.0 {
            1.0
        } else if h < 0.0 {
            -1.0
        } else {
            0.0
        };
        let grad = -grad_in_plane - self.normal * (sign_h * sum_beta);
        (pot, grad)
    }

    #[inline]
    pub fn potential(&self, p: Vec3) -> f64 {
        self.potential_and_gradient(p).0
    }

    /// Centroid point-charge approximation of [`Panel::potential_and_gradient`].
    #[inline]
    pub fn far_potential_and_gradient(&self, p: Vec3) -> (f64, Vec3) {
        let d = p - self.centroid;
        let r2 = d.norm2();
        let r = r2.sqrt();
        (self.area / r, d * (-self.area / (r2 * r)))
    }

    /// Distance from `p` to the closest point of the panel.
    pub fn distance_to(&self, p: Vec3) -> f64 {
        crate::math::closest_point_on_triangle(p, self.v[0], self.v[1], self.v[2]).distance(p)
    }
}

/// Symmetric 7-point rule on the reference triangle (degree 5): (barycentric a, b, weight).
pub const GAUSS7: [(f64, f64, f64); 7] = [
    (1.0 / 3.0, 1.0 / 3.0, 0.225),
    (0.059_715_871_789_770, 0.470_142_064_105_115, 0.132_394_152_788_506),
    (0.470_142_064_105_115, 0.059_715_871_789_770, 0.132_394_152_788_506),
    (0.470_142_064_105_115, 0.470_142_064_105_115, 0.132_394_152_788_506),
    (0.797_426_985_353_087, 0.101_286_507_323_456, 0.125_939_180_544_827),
    (0.101_286_507_323_456, 0.797_426_985_353_087, 0.125_939_180_544_827),
    (0.101_286_507_323_456, 0.101_286_507_323_456, 0.125_939_180_544_827),
];

/// Integrate `f` over a triangle by recursive 4-way subdivision (`levels` deep) and
/// the 7-point rule on each piece.
pub fn quadrature(v: [Vec3; 3], levels: u32, f: &mut dyn FnMut(Vec3) -> f64) -> f64 {
    if levels == 0 {
        let area = 0.5 * (v[1] - v[0]).cross(v[2] - v[0]).norm();
        return GAUSS7
            .iter()
            .map(|&(a, b, w)| {
                let c = 1.0 - a - b;
                w * f(v[0] * a + v[1] * b + v[2] * c)
            })
            .sum::<f64>()
            * area;
    }
    let m01 = (v[0] + v[1]) * 0.5;
    let m12 = (v[1] + v[2]) * 0.5;
    let m20 = (v[2] + v[0]) * 0.5;
    quadrature([v[0], m01, m20], levels - 1, f)
        + quadrature([m01, v[1], m12], levels - 1, f)
        + quadrature([m20, m12, v[2]], levels - 1, f)
        + quadrature([m01, m12, m20], levels - 1, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tri() -> [Vec3; 3] {
        [Vec3::new(0.1, -0.2, 0.05), Vec3::new(1.3, 0.1, -0.1), Vec3::new(0.4, 0.9, 0.2)]
    }

    fn oracle(v: [Vec3; 3], p: Vec3) -> (f64, Vec3) {
        let pot = quadrature(v, 6, &mut |r| 1.0 / p.distance(r));
        let g = |k: usize| quadrature(v, 6, &mut |r| -(p - r).to_array()[k] / p.distance(r).powi(3));
        (pot, Vec3::new(g(0), g(1), g(2)))
    }

    #[test]
    fn matches_quadrature_off_panel() {
        let panel = Panel::new(tri());
        for p in [
            Vec3::new(0.5, 0.3, 0.8),
            Vec3::new(-1.0, 2.0, -0.5),
            Vec3::new(3.0, 0.2, 0.1),
            Vec3::new(0.6, 0.3, -0.4),
        ] {
            let (pot, grad) = panel.potential_and_gradient(p);
            let (qp, qg) = oracle(tri(), p);
            assert!((pot - qp).abs() < 1e-9 * qp.abs(), "{pot} vs {qp}");
            assert!((grad - qg).norm() < 1e-7 * qg.norm(), "{grad:?} vs {qg:?}");
        }
    }

    #[test]
    fn self_potential_at_centroid_matches_singular_quadrature() {
        // split into three triangles sharing the centroid so the singularity sits at a vertex
        let v = tri();
        let panel = Panel::new(v);
        let c = panel.centroid;
        let q: f64 = (0..3).map(|i| quadrature([c, v[i], v[(i + 1) % 3]], 9, &mut |r| 1.0 / c.distance(r))).sum();
        let got = panel.potential(c);
        assert!((got - q).abs() < 2e-3 * got, "{got} vs {q}");
        // in-plane gradient vanishes by symmetry only for the equilateral case; here just finite
        assert!(panel.potential_and_gradient(c).1.is_finite());
    }

    #[test]
    fn equilateral_self_potential_closed_form() {
        // integral of 1/R over an equilateral triangle of side a from its centroid: a*sqrt(3)*ln(2+sqrt(3))/2... per edge
        let a = 2.0;
        let v = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(a, 0.0, 0.0), Vec3::new(a / 2.0, a * 3f64.sqrt() / 2.0, 0.0)];
        let panel = Panel::new(v);
        // each edge at distance t = a/(2 sqrt 3), half-length a/2: t * 2 asinh((a/2)/t)
        let t = a / (2.0 * 3f64.sqrt());
        let expect = 3.0 * t * 2.0 * ((a / 2.0) / t).asinh();
        assert!((panel.potential(panel.centroid) - expect).abs() < 1e-13 * expect);
        assert!(panel.potential_and_gradient(panel.centroid).1.norm() < 1e-12);
    }

    #[test]
    fn gradient_jump_across_panel_is_two_pi_normal() {
        let panel = Panel::new(tri());
        let c = panel.centroid;
        let up = panel.potential_and_gradient(c + panel.normal * 1e-9).1;
        let down = panel.potential_and_gradient(c - panel.normal * 1e-9).1;
        let jump = (up - down).dot(panel.normal);
        assert!((jump + 4.0 * std::f64::consts::PI).abs() < 1e-5, "{jump}");
    }

    #[test]
    fn far_field_converges_to_exact() {
        let panel = Panel::new(tri());
        let p = panel.centroid + Vec3::new(30.0, -20.0, 40.0);
        let (a, ga) = panel.potential_and_gradient(p);
        let (b, gb) = panel.far_potential_and_gradient(p);
        assert!((a - b).abs() < 1e-4 * a);
        assert!((ga - gb).norm() < 1e-3 * ga.norm());
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_difference(x in -2.0f64..3.0, y in -2.0f64..3.0, z in 0.05f64..2.0, flip in any::<bool>()) {
            let panel = Panel::new(tri());
            let p = Vec3::new(x, y, if flip { -z } else { z }) + Vec3::new(0.0, 0.0, 0.05);
            prop_assume!(panel.distance_to(p) > 0.05);
            let (_, g) = panel.potential_and_gradient(p);
            let h = 1e-5;
            let fd = Vec3::new(
                (panel.potential(p + Vec3::X * h) - panel.potential(p - Vec3::X * h)) / (2.0 * h),
                (panel.potential(p + Vec3::Y * h) - panel.potential(p - Vec3::Y * h)) / (2.0 * h),
                (panel.potential(p + Vec3::Z * h) - panel.potential(p - Vec3::Z * h)) / (2.0 * h),
            );
            prop_assert!((g - fd).norm() < 1e-6 * (1.0 + g.norm()));
        }
    }
}
