//! Mathieu stability from the Floquet monodromy matrix.

/// Trace of the monodromy matrix of `u'' + (a - 2 q cos 2t) u = 0` over one period (pi),
/// by classical RK4 with `steps` steps.
pub fn monodromy_trace(q: f64, a: f64, steps: usize) -> f64 {
    let h = std::f64::consts::PI / steps as f64;
    let rhs = |t: f64, u: [f64; 2]| [u[1], -(a - 2.0 * q * (2.0 * t).cos()) * u[0]];
    let mut cols = [[1.0, 0.0], [0.0, 1.0]];
    for col in cols.iter_mut() {
        let mut u = *col;
        for k in 0..steps {
            let t = k as f64 * h;
            let k1 = rhs(t, u);
            let k2 = rhs(t + 0.5 * h, [u[0] + 0.5 * h * k1[0], u[1] + 0.5 * h * k1[1]]);
            let k3 = rhs(t + 0.5 * h, [u[0] + 0.5 * h * k2[0], u[1] + 0.5 * h * k2[1]]);
            let k4 = rhs(t + h, [u[0] + h * k3[0], u[1] + h * k3[1]]);
            u[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
            u[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        }
        *col = u;
    }
    // monodromy columns are the solutions for unit initial displacement and velocity
    cols[0][0] + cols[1][1]
}

/// Bounded iff |trace| < 2. The marginal case (e.g. q = a = 0) counts as unstable.
pub fn is_stable(q: f64, a: f64) -> bool {
    if !(q.is_finite() && a.is_finite()) {
        return false;
    }
    monodromy_trace(q, a, 4000).abs() < 2.0 - 1e-9
}

/// Characteristic exponent beta in (0, 1) of a stable point in the first region, from
/// `trace = 2 cos(pi beta)`; the secular angular frequency is `beta * Omega / 2`.
pub fn characteristic_exponent(q: f64, a: f64) -> Option<f64> {
    if !is_stable(q, a) {
        return None;
    }
    Some((0.5 * monodromy_trace(q, a, 4000)).clamp(-1.0, 1.0).acos() / std::f64::consts::PI)
}

/// Per-axis stability.
pub fn stability_check(q: &[f64], a: &[f64]) -> Vec<bool> {
    q.iter().zip(a).map(|(&q, &a)| is_stable(q, a)).collect()
}

/// Largest stable |q| at fixed `a`, bisecting between a stable `lo` and unstable `hi`.
pub fn stability_boundary_q(a: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    assert!(is_stable(lo, a) && !is_stable(hi, a), "bracket must straddle the boundary");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if is_stable(mid, a) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Stability of the coupled pair `u'' + (A - 2 Q cos 2t) u = 0` (A, Q symmetric 2x2).
///
/// Bounded iff every Floquet multiplier lies on the unit circle away from +-1.
pub fn coupled_is_stable(a: [[f64; 2]; 2], q: [[f64; 2]; 2]) -> bool {
    if a.iter().chain(q.iter()).flatten().any(|v| !v.is_finite()) {
        return false;
    }
    let steps = 4000;
    let h = std::f64::consts::PI / steps as f64;
    let rhs = |t: f64, y: [f64; 4]| {
        let c = 2.0 * (2.0 * t).cos();
        let m = |i: usize, j: usize| a[i][j] - c * q[i][j];
        [y[2], y[3], -(m(0, 0) * y[0] + m(0, 1) * y[1]), -(m(1, 0) * y[0] + m(1, 1) * y[1])]
    };
    let add = |y: [f64; 4], k: [f64; 4], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2], y[3] + s * k[3]];
    let mut mono = nalgebra::Matrix4::<f64>::zeros();
    for col in 0..4 {
        let mut y = [0.0; 4];
        y[col] = 1.0;
        for k in 0..steps {
            let t = k as f64 * h;
            let k1 = rhs(t, y);
            let k2 = rhs(t + 0.5 * h, add(y, k1, 0.5 * h));
            let k3 = rhs(t + 0.5 * h, add(y, k2, 0.5 * h));
            let k4 = rhs(t + h, add(y, k3, h));
            for i in 0..4 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        for i in 0..4 {
            mono[(i, col)] = y[i];
        }
    }
    mono.complex_eigenvalues().iter().all(|l| l.norm() < 1.0 + 1e-6 && l.re.abs() < 1.0 - 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupled_reduces_to_independent_axes() {
        for (q, a) in [(0.3, -0.01), (0.5, 0.02), (0.95, 0.0), (0.1, -0.02)] {
            let both = coupled_is_stable([[a, 0.0], [0.0, -a]], [[q, 0.0], [0.0, -q]]);
            assert_eq!(both, is_stable(q, a) && is_stable(-q, -a), "q {q} a {a}");
        }
    }

    #[test]
    fn coupled_is_rotation_invariant() {
        let (q, a1, a2) = (0.35, 0.004, -0.006);
        let th: f64 = 0.7;
        let (s, c) = th.sin_cos();
        let rot = |m: [[f64; 2]; 2]| {
            let r = [[c, -s], [s, c]];
            let mut out = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            out[i][j] += r[i][k] * m[k][l] * r[j][l];
                        }
                    }
                }
            }
            out
        };
        let aligned = coupled_is_stable([[a1, 0.0], [0.0, a2]], [[q, 0.0], [0.0, -q]]);
        assert!(aligned);
        assert_eq!(coupled_is_stable(rot([[a1, 0.0], [0.0, a2]]), rot([[q, 0.0], [0.0, -q]])), aligned);
        assert!(!coupled_is_stable(rot([[-0.2, 0.0], [0.0, 0.05]]), rot([[q, 0.0], [0.0, -q]])));
    }

    #[test]
    fn classic_points() {
        assert!(is_stable(0.2, 0.0));
        assert!(!is_stable(1.0, 0.0));
        assert!(!is_stable(0.0, 0.0));
        assert!(!is_stable(0.0, -0.01));
        assert!(is_stable(0.0, 0.3));
    }

    #[test]
    fn constant_coefficient_trace_is_exact() {
        // q = 0: u'' + a u = 0, trace = 2 cos(pi sqrt a)
        for a in [0.1, 0.5, 2.0] {
            let t = monodromy_trace(0.0, a, 2000);
            assert!((t - 2.0 * (std::f64::consts::PI * a.sqrt()).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn exponent_matches_pure_harmonic() {
        // q = 0: beta = sqrt(a)
        let b = characteristic_exponent(0.0, 0.09).unwrap();
        assert!((b - 0.3).abs() < 1e-10);
        let b = characteristic_exponent(0.2, 0.0).unwrap();
        assert!(b > 0.2 / 2f64.sqrt() && b < 0.2 / 2f64.sqrt() * 1.02);
    }

    #[test]
    fn boundary_on_q_axis() {
        let qb = stability_boundary_q(0.0, 0.2, 1.0, 1e-6);
        assert!((qb - 0.908).abs() < 1e-3, "{qb}");
    }

    proptest::proptest! {
        #[test]
        fn stability_ignores_sign_of_q(q in 0.0f64..1.2, a in -0.3f64..0.3) {
            proptest::prop_assert_eq!(is_stable(q, a), is_stable(-q, a));
        }
    }
}
