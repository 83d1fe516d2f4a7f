//! Throughput benchmarks for the heavy inner loops. Run with the default
//! features for the rayon-parallel core and with `--no-default-features`
//! for the sequential fallback to compare the two.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tilted_late::data::make_folds;
use tilted_late::nuisance::{fit_nuisances, LearnerSpec};
use tilted_late::simulation::{run_study1, simulate_dgp, SimConfig};

fn bench_fit_nuisances(c: &mut Criterion) {
    let draw = simulate_dgp(&SimConfig { n: 2000, seed: 42, ..SimConfig::default() });
    let folds = make_folds(2000, 5, 7).unwrap();
    let mut group = c.benchmark_group("fit_nuisances");
    group.sample_size(10);
    for (name, spec) in [
        ("linear", LearnerSpec::linear(0.0)),
        ("kernel", LearnerSpec::kernel(None)),
        ("forest", LearnerSpec::forest(3)),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &spec, |b, spec| {
            b.iter(|| fit_nuisances(&draw.data, 0.5, spec, &folds).unwrap());
        });
    }
    group.finish();
}

fn bench_mini_study(c: &mut Criterion) {
    let mut group = c.benchmark_group("study");
    group.sample_size(10);
    group.bench_function("study1_linear_small", |b| {
        b.iter(|| {
            run_study1(&[500], &[-0.5, 0.5], 4, &LearnerSpec::linear(0.0), 1, 4).unwrap()
        });
    });
    group.finish();
}

criterion_group!(benches, bench_fit_nuisances, bench_mini_study);
criterion_main!(benches);
