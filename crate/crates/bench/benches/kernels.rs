use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use optomirror::dynamics::{BruteEngine, FactoredEngine};
use optomirror::fock::Displacer;
use optomirror::states::{coherent_state, mirror_pure_state};
use optomirror::{Frame, MirrorFamily, MirrorStateSpec, Mode, SystemParams, Truncation, C64};

fn displacement(c: &mut Criterion) {
    let mut group = c.benchmark_group("displacement_apply");
    for dim in [40, 120, 300] {
        let d = Displacer::new(Mode::Mirror, dim).unwrap();
        let v = coherent_state(C64::new(1.0, 0.5), Mode::Mirror, dim).unwrap().into_entries();
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| d.apply(black_box(C64::new(0.7, -0.3)), &v).unwrap())
        });
    }
    group.finish();
}

fn engines(c: &mut Criterion) {
    let params = SystemParams::new(0.0, 1.0, 0.8, C64::new(1.5, 0.0), Frame::RotatingAtOmega).unwrap();
    let cat = MirrorFamily::Cat { amplitude: C64::new(1.0, 0.0), phase: 0.0 };
    let trunc = Truncation::auto(&params, &cat);
    let spec = MirrorStateSpec::new(cat, trunc.mirror_dim).unwrap();
    let field = coherent_state(params.alpha(), Mode::Field, trunc.field_dim).unwrap();
    let mirror = mirror_pure_state(&spec).unwrap().unwrap();
    let psi0 = optomirror::fock::tensor(&field, &mirror).unwrap();
    let t = 1.3;

    let mut group = c.benchmark_group("engines");
    group.sample_size(10);
    group.bench_function("brute_build", |b| b.iter(|| BruteEngine::new(&params, trunc).unwrap()));
    let brute = BruteEngine::new(&params, trunc).unwrap();
    group.bench_function("brute_evolve", |b| b.iter(|| brute.evolve(&psi0, black_box(t)).unwrap()));
    let factored = FactoredEngine::new(&params, trunc).unwrap();
    let prepared = factored.prepare(&psi0).unwrap();
    group.bench_function("factored_evolve", |b| {
        b.iter(|| factored.evolve_prepared(&prepared, black_box(t)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, displacement, engines);
criterion_main!(benches);
