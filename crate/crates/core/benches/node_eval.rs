use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hqflow::exec::Exec;
use hqflow::flow::{Flow, FlowSettings, ProblemSpec};
use hqflow::geometry::{Domain, Grid};
use hqflow::verify::{run_property, Property, SigmaImpl};

fn flow_for(exec: Exec, n: usize) -> (Flow, Vec<f64>) {
    let domain = Domain::disk(1.0).unwrap();
    let grid = Arc::new(Grid::build(domain, (n, 2 * n)).unwrap());
    let spec = ProblemSpec::new(2, 1, domain, "1+0.1*x1", "1", "0.5*(x1^2+x2^2)").unwrap();
    let settings = FlowSettings {
        exec,
        ..Default::default()
    };
    let flow = Flow::new(spec, grid, settings).unwrap();
    let values = flow.initial_field().unwrap().0.values().to_vec();
    (flow, values)
}

fn node_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("eval_all");
    for n in [32, 64, 128] {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let (flow, values) = flow_for(exec, n);
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), format!("{n}x{}", 2 * n)),
                &values,
                |b, v| b.iter(|| flow.eval_all(black_box(v)).unwrap()),
            );
        }
    }
    group.finish();
}

fn flow_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    group.sample_size(20);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let (flow, _) = flow_for(exec, 64);
        let state = flow.initial_state().unwrap();
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| flow.step(black_box(&state)).unwrap())
        });
    }
    group.finish();
}

fn verify_suite(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify_newton_maclaurin");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| run_property(Property::NewtonMaclaurin, 42, 1000, SigmaImpl::Reference, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, node_eval, flow_step, verify_suite);
criterion_main!(benches);
