//! Tick throughput and sweep throughput, sequential against rayon.
//!
//! On a single core the two should be close; the gap grows with core count.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use swarmform::engine::Simulation;
use swarmform::par::Execution;
use swarmform::study::sweep;
use swarmform::{load_scenario, ScenarioConfig};

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn arrowhead() -> ScenarioConfig {
    let text = include_str!("../../../scenarios/arrowhead36.json");
    load_scenario(text).expect("bundled scenario loads")
}

fn ticks(c: &mut Criterion) {
    let config = arrowhead();
    let mut group = c.benchmark_group("ticks_200");
    group.sample_size(20);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let mut sim = Simulation::new(config.clone()).unwrap().with_execution(exec);
                for _ in 0..200 {
                    black_box(sim.step().unwrap());
                }
            })
        });
    }
    group.finish();
}

fn sweeps(c: &mut Criterion) {
    let mut config = arrowhead();
    config.sim.max_ticks = 400;
    let mut group = c.benchmark_group("sweep_4x2_400_ticks");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(sweep(&config, &[0.0, 0.1, 0.2, 0.3], &[1, 2], exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, ticks, sweeps);
criterion_main!(benches);
