use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use trapkit::evaporation::trench::TrenchParams;
use trapkit::evaporation::{coverage, EvaporationConfig};
use trapkit::field_solver::{assemble, Panel, SolverOptions};
use trapkit::geometry::primitives::icosphere;
use trapkit::geometry::{Electrode, ElectrodeRole, TrapGeometry};
use trapkit::{par, Vec3};

fn backend() -> &'static str {
    if par::is_parallel() {
        "rayon"
    } else {
        "sequential"
    }
}

fn sphere(freq: usize) -> TrapGeometry {
    let mesh = icosphere(Vec3::ZERO, 1.0, freq);
    TrapGeometry::new(vec![Electrode { name: "s".into(), role: ElectrodeRole::Ground, mesh }], Vec3::new(0.0, 0.0, 10.0))
}

fn panels(freq: usize) -> Vec<Panel> {
    let g = sphere(freq);
    let m = &g.electrodes[0].mesh;
    (0..m.len()).map(|i| Panel::new(m.triangle(i))).collect()
}

/// Same closure through `par::for_each_row` and a plain loop.
fn influence_rows(c: &mut Criterion) {
    let mut group = c.benchmark_group("influence_matrix");
    group.sample_size(10);
    for freq in [6, 10] {
        let p = panels(freq);
        let n = p.len();
        let fill = |j: usize, col: &mut [f64]| {
            for (i, out) in col.iter_mut().enumerate() {
                *out = p[j].potential(p[i].centroid);
            }
        };
        let mut m = vec![0.0; n * n];
        group.bench_with_input(BenchmarkId::new(backend(), n), &n, |b, _| b.iter(|| par::for_each_row(black_box(&mut m), n, fill)));
        group.bench_with_input(BenchmarkId::new("plain_loop", n), &n, |b, _| {
            b.iter(|| black_box(&mut m).chunks_mut(n).enumerate().for_each(|(j, col)| fill(j, col)))
        });
    }
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("kernels_{}", backend()));
    group.sample_size(10);
    let sys = assemble(&sphere(8)).unwrap();
    group.bench_function("basis_solve_1280_panels", |b| b.iter(|| sys.solve_all(&SolverOptions::default()).unwrap()));
    let (scene, _) = TrenchParams::default().build().unwrap();
    let cfg = EvaporationConfig { samples: 72, ..Default::default() };
    group.bench_function("trench_coverage_72_beams", |b| b.iter(|| coverage(black_box(&scene), &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, influence_rows, end_to_end);
criterion_main!(benches);
