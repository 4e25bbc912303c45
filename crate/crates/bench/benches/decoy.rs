use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use decoy_core::dataset::reference_measurements;
use decoy_core::fringe::uniform_offsets;
use decoy_core::link::uniform_grid;
use decoy_core::sim::run_session_sequential;
use decoy_core::{
    analyze_row, fit_fringe, fit_link, run_session, simulate_scan, sweep_key_rate, LinkModel, ProtocolParams,
    ScanSettings, SimConfig,
};

fn estimator(c: &mut Criterion) {
    let params = ProtocolParams::default();
    let rows = reference_measurements();
    c.bench_function("analyze_row/table", |b| {
        b.iter(|| rows.iter().map(|r| analyze_row(&params, black_box(r)).unwrap().r_lower).sum::<f64>())
    });
}

fn link(c: &mut Criterion) {
    let params = ProtocolParams::default();
    let rows = reference_measurements();
    let mut g = c.benchmark_group("link");
    g.sample_size(10);
    g.bench_function("fit_link", |b| b.iter(|| fit_link(black_box(&rows), &params, LinkModel::DEFAULT_Y0).unwrap()));
    let model = fit_link(&rows, &params, LinkModel::DEFAULT_Y0).unwrap().model;
    let grid = uniform_grid(0.0, 150.0, 1.0).unwrap();
    g.bench_function("sweep_key_rate", |b| b.iter(|| sweep_key_rate(&model, &params, black_box(&grid)).unwrap()));
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let pulses = 1_000_000;
    let config = SimConfig::new(pulses, 1, 49.2, LinkModel::default(), ProtocolParams::default());
    let mut g = c.benchmark_group("session");
    g.sample_size(10);
    g.throughput(Throughput::Elements(pulses));
    g.bench_function("parallel", |b| b.iter(|| run_session(black_box(&config)).unwrap()));
    g.bench_function("sequential", |b| b.iter(|| run_session_sequential(black_box(&config)).unwrap()));
    g.finish();
}

fn fringe(c: &mut Criterion) {
    let model = LinkModel::default();
    let settings = ScanSettings::for_model(&model, 49.2, 3);
    let curve = simulate_scan(&model, &settings, &uniform_offsets(64)).unwrap();
    c.bench_function("simulate_scan", |b| b.iter(|| simulate_scan(&model, black_box(&settings), &uniform_offsets(64)).unwrap()));
    c.bench_function("fit_fringe", |b| b.iter(|| fit_fringe(black_box(&curve)).unwrap()));
}

criterion_group!(benches, estimator, link, simulation, fringe);
criterion_main!(benches);
