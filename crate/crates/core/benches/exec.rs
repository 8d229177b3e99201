use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use minctl::harness::{canonical_control_map, synthesize, ScenarioConfig};
use minctl::mintime::{sample_on, titchmarsh_check_with};
use minctl::simulator::to_canonical;
use minctl::*;

const BACKENDS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn kernels(c: &mut Criterion) {
    let system = ScenarioConfig::headline(400).system().unwrap();
    let gauge = system.gauge().unwrap();
    let grid = Grid::new(400).unwrap();
    let mut group = c.benchmark_group("solve_kernels");
    group.sample_size(10);
    for (name, exec) in BACKENDS {
        let opts = KernelOptions {
            exec,
            ..KernelOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solve_kernels(&gauge, &system.speeds, &CoefficientSpec::zero(), grid, &opts).unwrap())
        });
    }
    group.finish();
}

fn closed_loop(c: &mut Criterion) {
    let cfg = ScenarioConfig::headline(800);
    let system = cfg.system().unwrap();
    let grid = Grid::new(800).unwrap();
    let syn = synthesize(&system, &cfg.k0, grid, &KernelOptions::default()).unwrap();
    let y0 = cfg.initial.sample(grid).unwrap();
    let control = Control::Feedback(syn.gains);
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for (name, exec) in BACKENDS {
        let opts = SimOptions {
            exec,
            ..SimOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate(&system, &control, &y0, cfg.horizon, grid, &opts).unwrap())
        });
    }
    group.finish();
}

fn sharpness(c: &mut Criterion) {
    let cfg = ScenarioConfig::headline(200);
    let system = cfg.system().unwrap();
    let grid = Grid::new(200).unwrap();
    let syn = synthesize(&system, &cfg.k0, grid, &KernelOptions::default()).unwrap();
    let y0 = cfg.initial.sample(grid).unwrap();
    let yhat0 = to_canonical(&system.gauge().unwrap(), &syn.kernels, &y0, Exec::default()).unwrap();
    let mut group = c.benchmark_group("sharpness_assembly");
    group.sample_size(10);
    for (name, exec) in BACKENDS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                canonical_control_map(&system.speeds, &syn.g, 0.0, &yhat0, 1.3, exec)
                    .unwrap()
                    .solve()
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn titchmarsh(c: &mut Criterion) {
    let m = 4000;
    let a = sample_on(1.0, m, |t| if t <= 0.3 { 0.0 } else { 1.0 + t });
    let b = sample_on(1.0, m, |t| if t <= 0.4 { 0.0 } else { 2.0 - t });
    let mut group = c.benchmark_group("titchmarsh");
    for (name, exec) in BACKENDS {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| titchmarsh_check_with(&a, &b, 1.0, 1e-12, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels, closed_loop, sharpness, titchmarsh);
criterion_main!(benches);
