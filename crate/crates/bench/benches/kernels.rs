use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hicon_bench::{example_material, example_mesh, synthetic_bloch};
use hicon_core::bloch::soft_dofmap;
use hicon_core::dispersion::half_circle;
use hicon_core::fem::{assemble_stiffness, Constraints, DofMap};
use hicon_core::zhikov::linspace;
use hicon_core::{
    dispersion_surface, dtn_schur, smallest_eigenpairs, zhikov_matrix, EigenOptions, ElementOrder, HermitianSystem,
    Quasimomentum, RegionSel, ZhikovOptions, C64,
};

fn assembly(c: &mut Criterion) {
    let a = example_material();
    let mut g = c.benchmark_group("assemble_stiffness");
    for level in [0, 1, 2] {
        let mesh = example_mesh(level).unwrap();
        let dofs = DofMap::new(&mesh, ElementOrder::P2, RegionSel::Stiff, Constraints::PERIODIC).unwrap();
        let chi = Quasimomentum::new([0.3, -0.1]);
        g.bench_with_input(BenchmarkId::from_parameter(level), &level, |b, _| {
            b.iter(|| assemble_stiffness::<C64>(&mesh, &dofs, &a, chi).unwrap())
        });
    }
    g.finish();
}

fn lanczos(c: &mut Criterion) {
    let a = example_material();
    let opts = EigenOptions::default();
    let mut g = c.benchmark_group("bloch_lanczos");
    g.sample_size(10);
    for level in [1, 2] {
        let mesh = example_mesh(level).unwrap();
        let d = Arc::new(soft_dofmap(&mesh, ElementOrder::P2).unwrap());
        let sys = HermitianSystem::<f64>::assemble(&mesh, d, &a, Quasimomentum::ZERO).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(level), &level, |b, _| {
            b.iter(|| smallest_eigenpairs(&sys.k, &sys.m, 11, None, &opts).unwrap())
        });
    }
    g.finish();
}

fn schur(c: &mut Criterion) {
    let a = example_material();
    let mut g = c.benchmark_group("dtn_schur");
    g.sample_size(10);
    for level in [0, 1] {
        let mesh = example_mesh(level).unwrap();
        let chi = Quasimomentum::new([0.08, 0.0]);
        g.bench_with_input(BenchmarkId::from_parameter(level), &level, |b, _| {
            b.iter(|| dtn_schur(&mesh, &a, chi, ElementOrder::P2).unwrap())
        });
    }
    g.finish();
}

fn zhikov(c: &mut Criterion) {
    let data = synthetic_bloch();
    let opts = ZhikovOptions::default();
    let grid = linspace(0.0, 9000.0, 400);
    c.bench_function("zhikov_grid_400", |b| {
        b.iter(|| {
            grid.iter()
                .filter_map(|&z| zhikov_matrix(black_box(z), &data, &opts).ok())
                .map(|e| e.betas[1])
                .sum::<f64>()
        })
    });
    let thetas = half_circle(64);
    let a = example_material();
    c.bench_function("dispersion_64x400", |b| {
        b.iter(|| dispersion_surface(&grid, &thetas, 1e-3, &data, &a, &opts).unwrap())
    });
}

criterion_group!(benches, assembly, lanczos, schur, zhikov);
criterion_main!(benches);
