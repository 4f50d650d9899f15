use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dmpc::bench::{BenchmarkSpec, Harness};
use dmpc::dynamics::state;
use dmpc::exec::Execution;
use dmpc::planner::{
    update_agent, AgentRuntime, CycleInput, Method, ModelConfig, PlannerConfig, PlannerContext,
    Workspace,
};
use dmpc::sim::{random_transition_scenario, NoiseSpec, SimOptions};
use nalgebra::Vector3;

const MODES: [(&str, Execution); 2] = [
    ("parallel", Execution::Parallel),
    ("sequential", Execution::Sequential),
];

/// One planning cycle for the whole swarm from the bootstrap state.
fn swarm_cycle(c: &mut Criterion) {
    let mut group = c.benchmark_group("swarm_cycle");
    for n in [10, 30] {
        let cfg = PlannerConfig::default();
        let ctx = PlannerContext::new(&ModelConfig::default(), &cfg).unwrap();
        let spec =
            random_transition_scenario(n, Workspace::default(), &cfg.ellipsoid, 20.0, 3).unwrap();
        let runtimes: Vec<AgentRuntime> = spec
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| AgentRuntime::new(i, a.start, a.goal, cfg.horizon))
            .collect();
        let predictions: Vec<_> = runtimes.iter().map(|r| r.prediction.clone()).collect();
        let measured: Vec<_> = spec
            .agents
            .iter()
            .map(|a| state(a.start, Vector3::zeros()))
            .collect();
        let input = CycleInput {
            stamp: 0,
            measured: &measured,
            predictions: &predictions,
            obstacles: &[],
        };
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| {
                    let out = exec.map(&runtimes, |rt| update_agent(&ctx, rt, &input));
                    black_box(out)
                })
            });
        }
    }
    group.finish();
}

/// A small batch of short comparison trials.
fn trial_batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("trial_batch");
    group.sample_size(10);
    let model = ModelConfig::default();
    let planner = PlannerConfig::default();
    let spec = BenchmarkSpec {
        methods: vec![Method::OndemandInput],
        counts: vec![10],
        trials: 4,
        duration: 4.0,
        ..Default::default()
    };
    for (name, exec) in MODES {
        let harness = Harness {
            model: &model,
            planner: &planner,
            noise: NoiseSpec::default(),
            options: SimOptions::default(),
            execution: exec,
        };
        group.bench_function(name, |b| b.iter(|| black_box(harness.run(&spec).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, swarm_cycle, trial_batch);
criterion_main!(benches);
