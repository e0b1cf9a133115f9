use coflow::operators::{cocoercivity_margins, sample_pairs};
use coflow::schedules::log_grid;
use coflow::*;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn example_op() -> OperatorSpec {
    OperatorSpec::linear(Matrix::diag(&[1.0, 0.0, -1.0]), -1.0, 3.0).unwrap()
}

fn ds_problem(q: f64) -> InertialProblem {
    InertialProblem {
        kind: SystemKind::Ds,
        params: DynamicsParams::new(1.0, 4.0 / 3.0),
        schedule: TikhonovSchedule::power(q, 0.1).unwrap(),
        operator: example_op(),
        x0: Vector::new(vec![1.0, 1.0, 1.0]),
        v0: Vector::new(vec![1.0, 2.0, 3.0]),
        t0: 0.1,
        tf: 100.0,
    }
}

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn cocoercivity(c: &mut Criterion) {
    let op = example_op();
    let pairs = sample_pairs(3, 100_000, 7, 10.0);
    let mut group = c.benchmark_group("cocoercivity_100k");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cocoercivity_margins(&op, 2.0, &pairs, exec, 1e-9).unwrap())
        });
    }
    group.finish();
}

fn energy(c: &mut Criterion) {
    let p = ds_problem(0.5);
    let cfg = IntegratorConfig::default().with_samples(log_grid(0.1, 100.0, 4000));
    let traj = p.solve(&cfg).unwrap();
    let mut group = c.benchmark_group("energy_series_4000");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                energy_series(&traj.samples, &p.params, &p.schedule, &p.operator, exec).unwrap()
            })
        });
    }
    group.finish();
}

fn batch(c: &mut Criterion) {
    let problems: Vec<_> = (1..=12).map(|k| ds_problem(k as f64 / 13.0)).collect();
    let cfg = IntegratorConfig::default().with_samples(log_grid(0.1, 100.0, 400));
    let mut group = c.benchmark_group("batch_integrations_12");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solve_batch(&problems, &cfg, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, cocoercivity, energy, batch);
criterion_main!(benches);
