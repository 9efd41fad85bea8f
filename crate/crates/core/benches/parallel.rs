//! Sequential versus rayon execution of the two hot paths: a full-batch
//! objective gradient and the restarts of a basin census.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use opl_core::envgen::{make_environment, sample_logged, stratified_dataset, EnvSpec};
use opl_core::landscape::{basin_census, build_composite_trap, probe_rows};
use opl_core::objective::{Objective, Rows};
use opl_core::ope::{OpeConfig, OpeMethod};
use opl_core::par::Execution;
use opl_core::policy::SoftmaxPolicy;
use opl_core::pwll::Weighting;
use opl_core::trainer::TrainConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn full_batch_gradient(c: &mut Criterion) {
    let env = make_environment(&EnvSpec::new(64, 256, 16, 3)).unwrap();
    let ds = sample_logged(&env, 50_000, 1).unwrap();
    let mut policy = SoftmaxPolicy::linear(256, 16);
    policy.gaussian_params(0.1, 0);
    let objectives = [
        Objective::ope(OpeMethod::Ips, OpeConfig::new()).unwrap(),
        Objective::pwll(Weighting::Lpi).unwrap(),
    ];
    let mut group = c.benchmark_group("full_batch_gradient");
    group.sample_size(10);
    for obj in &objectives {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(obj.to_string(), name), &exec, |b, &exec| {
                b.iter(|| black_box(obj.value_and_gradient(&ds, Rows::All, &policy, exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn census_restarts(c: &mut Criterion) {
    let env = build_composite_trap(4, 8, 0.05, 0.4, 0.3).unwrap();
    let ds = stratified_dataset(&env, probe_rows(&env)).unwrap();
    let obj = Objective::pwll(Weighting::Lpi).unwrap();
    let template = SoftmaxPolicy::linear(8, 4);
    let tc = TrainConfig {
        epochs: 200,
        base_rate: 2.0,
        l2_strength: 0.01,
        ..Default::default()
    };
    let mut group = c.benchmark_group("census_restarts");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(basin_census(&env, &ds, &obj, &template, 16, 2.0, &tc, 0, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, full_batch_gradient, census_restarts);
criterion_main!(benches);
