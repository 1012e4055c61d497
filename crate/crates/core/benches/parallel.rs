use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use thermhand::fusion::{alpha_grid, alpha_sweep_with, Polarity, ScoreMatrix};
use thermhand::harness::{
    generate_dataset_with, run_evaluation, EvaluationConfig, SyntheticConfig,
};
use thermhand::Execution;

const MODES: [(&str, Execution); 2] = [
    ("parallel", Execution::Parallel),
    ("sequential", Execution::Sequential),
];

fn generation(c: &mut Criterion) {
    let cfg = SyntheticConfig {
        num_users: 6,
        ..SyntheticConfig::default()
    };
    let mut group = c.benchmark_group("generate_dataset");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| generate_dataset_with(exec, &cfg).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let ds = generate_dataset_with(
        Execution::Parallel,
        &SyntheticConfig {
            num_users: 6,
            ..SyntheticConfig::default()
        },
    )
    .unwrap();
    let mut group = c.benchmark_group("run_evaluation");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = EvaluationConfig {
            execution: exec,
            ..EvaluationConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_evaluation(&ds, &cfg).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let (probes, classes) = (400, 100);
    let scores = |k: u64| -> Vec<f64> {
        (0..probes * classes)
            .map(|i| ((i as u64 * 2654435761 + k) % 1000) as f64 / 1000.0)
            .collect()
    };
    let ids: Vec<String> = (0..probes).map(|p| format!("p{p}")).collect();
    let class_ids: Vec<u32> = (0..classes as u32).collect();
    let vis = ScoreMatrix::new(
        ids.clone(),
        class_ids.clone(),
        scores(1),
        Polarity::LowerIsBetter,
    )
    .unwrap();
    let th = ScoreMatrix::new(ids, class_ids, scores(7), Polarity::LowerIsBetter).unwrap();
    let truth: Vec<u32> = (0..probes as u32).map(|p| p % classes as u32).collect();
    let grid = alpha_grid(0.0, 0.01, 1.0);
    let mut group = c.benchmark_group("alpha_sweep");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| alpha_sweep_with(exec, &vis, &th, &truth, &grid).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, generation, evaluation, sweep);
criterion_main!(benches);
