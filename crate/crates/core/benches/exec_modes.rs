use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use graphcal::calibrators::{CalibratorConfig, Method};
use graphcal::kernels::softmax_rows;
use graphcal::metrics::kde_ece_with;
use graphcal::synth::{generate, MiscalMode, SynthConfig};
use graphcal::trainer::{grid_search, default_grid, stratified_split, SplitConfig};
use graphcal::Execution;

const MODES: [(&str, Execution); 2] =
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn kde(c: &mut Criterion) {
    let cfg = SynthConfig { num_nodes: 10_000, miscal_mode: MiscalMode::GlobalT, ..SynthConfig::default() };
    let d = generate(&cfg).unwrap();
    let probs = softmax_rows(&d.logits).unwrap();
    let all: Vec<usize> = (0..d.num_nodes()).collect();
    let mut group = c.benchmark_group("kde_ece");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kde_ece_with(&probs, &d.labels, &all, None, exec).unwrap())
        });
    }
    group.finish();
}

fn grid(c: &mut Criterion) {
    let cfg = SynthConfig { num_nodes: 2000, miscal_mode: MiscalMode::GlobalT, ..SynthConfig::default() };
    let d = generate(&cfg).unwrap();
    let plan = stratified_split(&d.labels, SplitConfig::default(), 0).unwrap();
    let base = CalibratorConfig { max_epochs: 200, ..CalibratorConfig::new(Method::Ts) };
    let cells = default_grid();
    let mut group = c.benchmark_group("ts_grid_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| grid_search(&d, &base, &cells, &plan, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kde, grid);
criterion_main!(benches);
