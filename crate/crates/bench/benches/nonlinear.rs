use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lans_core::operators::b_tilde;
use lans_core::{Basis, Integrator, IntegratorConfig, NoiseSpec, PhysicalParams, SpectralField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(b: &std::sync::Arc<Basis>, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    SpectralField::from_coeffs(b, c).unwrap()
}

fn nonlinearity(c: &mut Criterion) {
    let mut group = c.benchmark_group("b_tilde");
    for cutoff in [1u32, 2, 4, 8] {
        let b = Basis::new(2.0 * PI, cutoff).unwrap();
        let (u, v) = (field(&b, 1), field(&b, 2));
        b.quadrature();
        group.bench_with_input(BenchmarkId::from_parameter(cutoff), &cutoff, |bench, _| {
            bench.iter(|| b_tilde(black_box(&u), black_box(&v)).unwrap())
        });
    }
    group.finish();
}

fn time_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("semi_implicit_step");
    for cutoff in [1u32, 2, 4, 8] {
        let b = Basis::new(2.0 * PI, cutoff).unwrap();
        let p = PhysicalParams::new(1.0, 0.5, 2.0 * PI).unwrap();
        let noise = NoiseSpec::new(1.5, 0.5, &b, 0).unwrap();
        let integ = Integrator::new(p, noise, IntegratorConfig::default()).unwrap();
        let u = field(&b, 3);
        let mut rng = lans_core::substream(0, 0);
        let dw = integ.draw_increment(&mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(cutoff), &cutoff, |bench, _| {
            bench.iter(|| integ.step_with_increment(black_box(&u), black_box(&dw)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, nonlinearity, time_step);
criterion_main!(benches);
