//! One worker against the full pool for the two heaviest parallel loops.
//! Build with `--no-default-features` to time the sequential fallback.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use elmi::el::{default_starts, mele};
use elmi::imputation::impute;
use elmi::inference::{bootstrap_profile_calibrate, chisq_mix_quantile};
use elmi::kernel::{select_bandwidth, BandwidthRule, KernelSpec};
use elmi::par::with_jobs;
use elmi::simulation::{generate, Scenario};
use nalgebra::DMatrix;

fn pools() -> Vec<(&'static str, Option<usize>)> {
    vec![("1-thread", Some(1)), ("pool", None)]
}

fn bootstrap(c: &mut Criterion) {
    let s = Scenario::parse("mean-missing", 200).unwrap();
    let data = Arc::new(generate(&s, 1).unwrap().observed);
    let h = select_bandwidth(&data, 2, BandwidthRule::HalvedCv).unwrap();
    let es = impute(data, &KernelSpec::new(2, h).unwrap(), 20, 2).unwrap();
    let g = s.estfun();
    let fit = mele(&es, g.as_ref(), &default_starts(&es, g.as_ref())).unwrap();
    let mut group = c.benchmark_group("bootstrap B=200");
    group.sample_size(10);
    for (name, jobs) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| with_jobs(jobs, || bootstrap_profile_calibrate(&es, g.as_ref(), &fit, 200, 0.05, 3, &[0]).unwrap()))
        });
    }
    group.finish();
}

fn mixture(c: &mut Criterion) {
    let omega = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.2 });
    let mut group = c.benchmark_group("chisq_mix M=200000");
    group.sample_size(10);
    for (name, jobs) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| with_jobs(jobs, || chisq_mix_quantile(&omega, 0.05, 200_000, 4).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bootstrap, mixture);
criterion_main!(benches);
