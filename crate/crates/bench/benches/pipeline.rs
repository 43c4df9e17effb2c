use criterion::{criterion_group, criterion_main, Criterion};
use hypdecay::coeff::ScalarCoefficient;
use hypdecay::linalg::{cx, CMat};
use hypdecay::models::{build_wave_dissipation, SymbolModel};
use hypdecay::propagate::{fundamental_solution, peano_baker, product_representation};
use hypdecay::quad::{cumulative, log_grid};
use hypdecay::surfaces::{slowness_surface, theta, tracking_frame, AngularGrid};
use hypdecay::zones::ZoneConfig;

fn wave() -> SymbolModel {
    build_wave_dissipation(ScalarCoefficient::power(1.0, -1.0)).unwrap()
}

fn planar_dirac() -> SymbolModel {
    let entry = |_t: f64, xi: &[f64]| {
        let q = cx((xi[0] * xi[0] + xi[1] * xi[1]).sqrt(), 0.0);
        CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), q, q, cx(0.0, 0.0)])
    };
    SymbolModel::custom(2, 2, entry, entry)
}

fn bench_quadrature(c: &mut Criterion) {
    c.bench_function("cumulative_log_grid", |b| {
        let grid = log_grid(1.0, 1e6, 200);
        b.iter(|| cumulative(|t| (t.ln().sin() + 2.0) / t, &grid, 1e-10).unwrap())
    });
}

fn bench_propagation(c: &mut Criterion) {
    let sym = wave();
    c.bench_function("fundamental_solution_wave_t50", |b| {
        b.iter(|| fundamental_solution(&sym, 0.0, 50.0, &[0.7], 1e-10).unwrap())
    });
    c.bench_function("peano_baker_rotation", |b| {
        let k = CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(0.4, 0.0), cx(-0.4, 0.0), cx(0.0, 0.0)]);
        b.iter(|| peano_baker(|_tau| Ok(k.clone()), 0.0, 3.0, 1e-10).unwrap())
    });
    c.bench_function("product_representation_wave_k2", |b| {
        let cfg = ZoneConfig::default();
        b.iter(|| product_representation(&sym, 2, 40.0, &[0.9], &cfg).unwrap())
    });
}

fn bench_surfaces(c: &mut Criterion) {
    let sym = planar_dirac();
    c.bench_function("theta_average_t100", |b| {
        let frame = tracking_frame(&sym, 100.0, &[0.6, 0.8]).unwrap();
        b.iter(|| theta(&sym, &frame, 100.0, 1, &[0.6, 0.8]).unwrap())
    });
    c.bench_function("slowness_surface_64_directions", |b| {
        let grid = AngularGrid::Circle { count: 64 };
        b.iter(|| slowness_surface(&sym, 1.0, 1, &grid).unwrap())
    });
}

criterion_group!(
    benches,
    bench_quadrature,
    bench_propagation,
    bench_surfaces
);
criterion_main!(benches);
