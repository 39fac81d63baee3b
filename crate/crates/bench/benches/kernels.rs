use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lindiff_bench::{cosine_kernel, workload};
use lindiff_core::appendix::{limit_resolvent, random_problem, default_lambdas};
use lindiff_core::diffusion::{closed_form_ballistic, localization_length, resolvent_diffusion, FiberSpace};
use lindiff_core::kernel::{build_kernel, presets, spectral_gap};
use lindiff_core::momentum::{sample_chain, JumpProcessModel};
use lindiff_core::{evolve, DisorderField, Distribution, EvolveOptions, Generator, GeneratorParams, LatticeBox};

fn generator_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("generator_apply");
    for (dim, l, band) in [(1, 30, 16), (2, 16, 4)] {
        let w = workload(dim, l, band);
        let gen = Generator::for_state(&w.state, &w.params, &w.field, &w.kernel).unwrap();
        let input = w.state.data().to_vec();
        let mut out = vec![Default::default(); gen.len()];
        group.bench_with_input(BenchmarkId::from_parameter(format!("d{dim}_L{l}_band{band}")), &(), |b, _| {
            b.iter(|| gen.apply_into(black_box(&input), &mut out))
        });
    }
    group.finish();
}

fn short_evolution(c: &mut Criterion) {
    let w = workload(1, 30, 16);
    let opts = EvolveOptions { tol: 1e-8, ..EvolveOptions::default() };
    c.bench_function("evolve_d1_L30_t2", |b| b.iter(|| evolve(&w.state, &w.params, &w.field, &w.kernel, &[0.0, 2.0], &opts).unwrap()));
}

fn kernel_construction(c: &mut Criterion) {
    c.bench_function("build_cosine_d2", |b| b.iter(|| build_kernel(black_box(&presets::cosine(2, 16)), 2).unwrap()));
    let k = cosine_kernel(1);
    c.bench_function("spectral_gap_d1", |b| b.iter(|| spectral_gap(black_box(&k), 64).unwrap()));
}

fn diffusion_estimators(c: &mut Criterion) {
    let k = cosine_kernel(1);
    c.bench_function("closed_form_d1", |b| b.iter(|| closed_form_ballistic(&k, 1.0, black_box(0.5), 16).unwrap()));

    let sites = LatticeBox::periodic(1, 5).unwrap();
    let params = GeneratorParams::new(1.0, 8.0, 0.2).unwrap();
    let field = DisorderField::sample(sites, &Distribution::default(), 3).unwrap();
    let etas: Vec<f64> = (0..8).map(|j| 0.05 * 0.5f64.powi(j)).collect();
    c.bench_function("resolvent_d1_L5_band4", |b| {
        b.iter(|| {
            let fs = FiberSpace::build(sites, &params, &k, &field, 4).unwrap();
            resolvent_diffusion(&fs, &etas).unwrap()
        })
    });

    let lattice = LatticeBox::truncated(1, 30).unwrap();
    let times: Vec<f64> = (0..=100).map(|j| j as f64).collect();
    c.bench_function("localization_d1_L30_4seeds", |b| {
        b.iter(|| localization_length(lattice, 1.0, 8.0, &Distribution::default(), &[0, 1, 2, 3], &times).unwrap())
    });
}

fn momentum_and_oracle(c: &mut Criterion) {
    let model = JumpProcessModel::from_kernel(&cosine_kernel(1), 64).unwrap();
    c.bench_function("momentum_chain_1e4", |b| b.iter(|| sample_chain(&model, 0, 10_000, 1, black_box(5)).unwrap()));
    let prob = random_problem(20, 3, default_lambdas(), 11).unwrap();
    c.bench_function("appendix_limit_20", |b| b.iter(|| limit_resolvent(black_box(&prob)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = generator_apply, short_evolution, kernel_construction, diffusion_estimators, momentum_and_oracle
}
criterion_main!(benches);
