use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mrfg_bench::fixture;
use mrfg_core::datamodel::StanceLabel;
use mrfg_core::gsi::{GsiConfig, GsiInputs, GsiModel};
use mrfg_core::tfi::{mutual_information, normalize_adjacency, propagate, rank_tfi, FeatureRouting};

fn tfi(c: &mut Criterion) {
    let f = fixture(1000, 128);
    let g = &f.graph;
    let adj = normalize_adjacency(&g.graph);
    c.bench_function("propagate_1000u_128d", |b| b.iter(|| propagate(black_box(&adj), &g.features).unwrap()));

    let labels: Vec<StanceLabel> = f.split.train.iter().map(|&u| g.labels[u].unwrap()).collect();
    let column: Vec<f64> = f.split.train.iter().map(|&u| g.features.values[[u, 0]]).collect();
    let mut group = c.benchmark_group("mutual_information");
    for bins in [8, 16, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(bins), &bins, |b, &bins| {
            b.iter(|| mutual_information(black_box(&labels), black_box(&column), bins))
        });
    }
    group.finish();

    c.bench_function("rank_tfi_1000u_128d", |b| {
        b.iter(|| rank_tfi(&g.graph, &g.features, &g.labels, black_box(&f.split.train), 16).unwrap())
    });
}

fn gsi(c: &mut Criterion) {
    let f = fixture(1000, 128);
    let g = &f.graph;
    let routing = FeatureRouting::from_ranking(&f.split.ranking, 0.3).unwrap();
    let inputs = GsiInputs::new(&g.graph, &g.features, &routing).unwrap();
    let model = GsiModel::init(GsiConfig::default(), routing).unwrap();
    let labeled: Vec<(usize, StanceLabel)> = f.split.train.iter().map(|&u| (u, g.labels[u].unwrap())).collect();

    c.bench_function("gsi_forward", |b| b.iter(|| model.logits(black_box(&inputs))));
    c.bench_function("gsi_forward_backward", |b| {
        b.iter(|| model.loss_and_gradients(black_box(&inputs), black_box(&labeled)))
    });
}

criterion_group!(benches, tfi, gsi);
criterion_main!(benches);
