use criterion::{criterion_group, criterion_main, Criterion};
use hypdecay::linalg::{complex_eigen, cx, hermitian_eigen, spectral_norm, CMat};
use hypdecay::ode::{integrate_to, OdeOptions};
use hypdecay::quad::integrate;

fn random_cmat(d: usize, seed: u64) -> CMat {
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    CMat::from_fn(d, d, |_, _| cx(next(), next()))
}

fn bench_eigen(c: &mut Criterion) {
    let a2 = random_cmat(2, 7);
    let a4 = random_cmat(4, 7);
    let h4 = &a4 + a4.adjoint();
    c.bench_function("eigen_general_2x2", |b| b.iter(|| complex_eigen(std::hint::black_box(&a2))));
    c.bench_function("eigen_general_4x4", |b| b.iter(|| complex_eigen(std::hint::black_box(&a4))));
    c.bench_function("eigen_hermitian_4x4", |b| {
        b.iter(|| hermitian_eigen(std::hint::black_box(&h4)))
    });
    c.bench_function("spectral_norm_4x4", |b| b.iter(|| spectral_norm(std::hint::black_box(&a4))));
}

fn bench_ode(c: &mut Criterion) {
    let a = CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(1.0, 0.0), cx(1.0, 0.0), cx(0.0, 0.0)]);
    c.bench_function("rkf78_rotation_t100", |b| {
        b.iter(|| {
            let mut f = |_t: f64, y: &CMat| {
                let ia = a.map(|z| z * cx(0.0, 1.0));
                &ia * y
            };
            let y0 = CMat::identity(2, 2);
            integrate_to(&mut f, 0.0, 100.0, &y0, &OdeOptions::with_tol(1e-10)).unwrap()
        })
    });
}

fn bench_quad(c: &mut Criterion) {
    c.bench_function("adaptive_quad_oscillatory", |b| {
        b.iter(|| integrate(|t: f64| (10.0 * t).sin() / (1.0 + t * t), 0.0, 50.0, 1e-10).unwrap())
    });
}

criterion_group!(benches, bench_eigen, bench_ode, bench_quad);
criterion_main!(benches);
