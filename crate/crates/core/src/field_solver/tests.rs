use super::*;
use crate::constants::EPSILON_0;
use crate::geometry::primitives::{box_mesh, icosphere, quad_grid};
use crate::geometry::{Electrode, ElectrodeRole, SurfaceMesh, TrapGeometry};
use std::f64::consts::PI;

fn single(name: &str, mesh: SurfaceMesh) -> Electrode {
    Electrode { name: name.into(), role: ElectrodeRole::Ground, mesh }
}

fn sphere_set(r: f64, freq: usize) -> BasisFieldSet {
    let g = TrapGeometry::new(vec![single("s", icosphere(Vec3::ZERO, r, freq))], Vec3::new(0.0, 0.0, 10.0 * r));
    assemble(&g).unwrap().solve_all(&SolverOptions::default()).unwrap()
}

#[test]
fn sphere_capacitance_converges_monotonically() {
    let r = 1e-3;
    let exact = 4.0 * PI * EPSILON_0 * r;
    let errs: Vec<f64> = [2, 4, 8].iter().map(|&f| ((sphere_set(r, f).total_charge(0) - exact) / exact).abs()).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[2] < 0.01, "{errs:?}");
}

#[test]
fn sphere_exterior_potential_and_superposition() {
    let r = 1e-3;
    let set = sphere_set(r, 8);
    for d in [1.5 * r, 3.0 * r, 10.0 * r] {
        let p = Vec3::new(0.3, -0.5, 0.8).normalize() * d;
        let (phi, e) = set.evaluate(&[1.0], p).unwrap();
        assert!((phi - r / d).abs() < 0.01 * r / d, "{phi} vs {}", r / d);
        assert!((e.norm() - r / (d * d)).abs() < 0.02 * r / (d * d));
        let (phi2, e2) = set.evaluate(&[2.0], p).unwrap();
        assert_eq!(phi2, 2.0 * phi);
        assert_eq!(e2, e * 2.0);
        assert_eq!(set.evaluate(&[0.0], p).unwrap(), (0.0, Vec3::ZERO));
    }
    assert!(set.collocation_residual() < RESIDUAL_TOLERANCE);
}

#[test]
fn assemble_preserves_area_and_partitions_panels() {
    let r = 1.0;
    let a = icosphere(Vec3::ZERO, r, 8);
    let b = box_mesh(Vec3::new(3.0, 0.0, 0.0), Vec3::new(4.0, 1.0, 1.0), 3);
    let (na, nb) = (a.len(), b.len());
    let area = a.total_area() + b.total_area();
    let g = TrapGeometry::new(vec![single("a", a), single("b", b)], Vec3::new(2.0, 0.0, 0.0));
    let sys = assemble(&g).unwrap();
    assert_eq!(sys.len(), na + nb);
    assert!((sys.total_area() - area).abs() < 1e-12 * area);
    assert_eq!(sys.panels_of(0).count(), na);
    assert_eq!(sys.panels_of(1).count(), nb);
    assert!(matches!(assemble(&TrapGeometry::empty()), Err(FieldError::EmptyGeometry)));
}

#[test]
fn fine_sphere_area_matches_analytic() {
    let r = 2.0;
    let m = crate::geometry::primitives::icosphere_for_resolution(Vec3::ZERO, r, r / 20.0);
    let g = TrapGeometry::new(vec![single("s", m)], Vec3::new(0.0, 0.0, 10.0));
    let sys = assemble(&g).unwrap();
    let exact = 4.0 * PI * r * r;
    assert!((sys.total_area() - exact).abs() < 1e-3 * exact);
}

#[test]
fn capacitance_matrix_is_symmetric() {
    let a = icosphere(Vec3::ZERO, 1.0, 6);
    let b = box_mesh(Vec3::new(1.8, -0.5, -0.5), Vec3::new(2.8, 0.5, 0.5), 6);
    let g = TrapGeometry::new(vec![single("a", a), single("b", b)], Vec3::new(0.0, 0.0, 5.0));
    let set = assemble(&g).unwrap().solve_all(&SolverOptions::default()).unwrap();
    let c = set.capacitance_matrix();
    assert!(c[0][1] < 0.0 && c[1][0] < 0.0);
    assert!((c[0][1] - c[1][0]).abs() < 0.01 * c[0][1].abs(), "{c:?}");
}

#[test]
fn parallel_plates_give_uniform_field() {
    let d = 1.0;
    let l = 10.0 * d;
    let n = 24;
    let plate = |z: f64, up: bool| {
        let c = [
            Vec3::new(-l / 2.0, -l / 2.0, z),
            Vec3::new(l / 2.0, -l / 2.0, z),
            Vec3::new(l / 2.0, l / 2.0, z),
            Vec3::new(-l / 2.0, l / 2.0, z),
        ];
        let m = quad_grid(c, n, n);
        if up { m } else { m.flipped() }
    };
    let g = TrapGeometry::new(
        vec![single("top", plate(d / 2.0, true)), single("bottom", plate(-d / 2.0, false))],
        Vec3::ZERO,
    );
    let set = assemble(&g).unwrap().solve_all(&SolverOptions::default()).unwrap();
    let (phi, e) = set.evaluate(&[0.5, -0.5], Vec3::ZERO).unwrap();
    assert!(phi.abs() < 1e-9);
    assert!((e.norm() - 1.0 / d).abs() < 0.02 / d, "{e:?}");
    assert!(e.z < 0.0);
}

#[test]
fn too_close_and_bad_names_are_errors() {
    let set = sphere_set(1.0, 4);
    let err = set.evaluate(&[1.0], Vec3::new(0.0, 0.0, 1.0)).unwrap_err();
    assert!(matches!(err, FieldError::TooCloseToSurface { .. }));
    assert!(matches!(set.evaluate(&[1.0, 2.0], Vec3::new(0.0, 0.0, 3.0)), Err(FieldError::VoltageCount { .. })));
    assert!(matches!(
        set.system.solve_basis("nope", &SolverOptions::default()),
        Err(FieldError::UnknownElectrode(_))
    ));
}

#[test]
fn far_field_crossover_is_close_to_exact() {
    let r = 1.0;
    let g = TrapGeometry::new(vec![single("s", icosphere(Vec3::ZERO, r, 8))], Vec3::new(0.0, 0.0, 10.0));
    let sys = assemble(&g).unwrap();
    let exact = sys.solve_all(&SolverOptions::default()).unwrap().total_charge(0);
    let approx = sys.solve_all(&SolverOptions { far_field_crossover: Some(2.0) }).unwrap().total_charge(0);
    assert!((exact - approx).abs() < 2e-3 * exact);
}

#[test]
fn cache_round_trip_is_bit_exact() {
    let set = sphere_set(1.0, 3);
    let region = GridRegion::cube(Vec3::new(0.0, 0.0, 2.5), [0.5, 0.5, 0.5], 0.25);
    let grid = grid::cache_grid(&set, &region).unwrap();
    let bytes = cache::encode(&set, Some(&grid));
    let (set2, grid2) = cache::decode(&bytes).unwrap();
    assert_eq!(set2, set);
    assert_eq!(grid2.as_ref(), Some(&grid));
    assert_eq!(cache::encode(&set2, grid2.as_ref()), bytes);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(cache::decode(&bad).is_err());
    assert!(cache::decode(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn grid_overlapping_an_electrode_is_rejected() {
    let set = sphere_set(1.0, 3);
    let region = GridRegion::cube(Vec3::ZERO, [0.5, 0.5, 0.5], 0.25);
    assert!(matches!(grid::cache_grid(&set, &region), Err(FieldError::RegionOverlapsElectrode(_))));
}

#[test]
fn grid_interpolation_tracks_direct_evaluation() {
    let set = sphere_set(1.0, 6);
    let c = Vec3::new(0.0, 0.0, 2.5);
    let errs: Vec<f64> = [0.2, 0.1]
        .iter()
        .map(|&h| {
            let grid = grid::cache_grid(&set, &GridRegion::cube(c, [0.6, 0.6, 0.6], h)).unwrap();
            let mut worst = 0.0f64;
            for k in 0..20 {
                let t = k as f64 * 0.61;
                let p = c + Vec3::new(0.3 * t.sin(), 0.3 * (1.3 * t).cos(), 0.3 * (0.7 * t).sin());
                let g = grid.unit_fields(p).unwrap()[0].1;
                let d = set.unit_fields(p).unwrap()[0].1;
                worst = worst.max((g - d).norm() / d.norm());
            }
            worst
        })
        .collect();
    assert!(errs[1] < errs[0], "{errs:?}");
    assert!(errs[1] < 1e-3, "{errs:?}");
}
