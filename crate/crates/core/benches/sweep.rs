use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gradsim::dgen::bundled_model;
use gradsim::dopt::{DotProductScenario, Objective, ObjectiveKind, PipelineProblem};
use gradsim::mapper::MapConfig;
use gradsim::par::Execution;
use gradsim::sweep::{sweep, GridAxis};
use gradsim::workload::{generate, GeneratorKind};

fn modes() -> [(&'static str, Execution); 2] {
    [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)]
}

fn pipeline_sweep(c: &mut Criterion) {
    let p = PipelineProblem::new(bundled_model(), generate(GeneratorKind::Cnn, 6, 1), MapConfig::default());
    let axes: Vec<GridAxis> = ["sysArrX=4..24", "mainMem.nReadPorts=1..8"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let obj = Objective::new(ObjectiveKind::Edp, 100.0);
    let mut g = c.benchmark_group("pipeline_sweep");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(name, |b| b.iter(|| black_box(sweep(&p, &axes, &obj, exec).unwrap())));
    }
    g.finish();
}

fn dot_sweep(c: &mut Criterion) {
    let s = DotProductScenario::default();
    let p = s.problem();
    let axes = [GridAxis::from_spec(&s.b).unwrap(), GridAxis::from_spec(&s.p).unwrap()];
    let obj = Objective::new(ObjectiveKind::Time, 10.0);
    let mut g = c.benchmark_group("dot_sweep");
    for (name, exec) in modes() {
        g.bench_function(name, |b| b.iter(|| black_box(sweep(&p, &axes, &obj, exec).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, pipeline_sweep, dot_sweep);
criterion_main!(benches);
