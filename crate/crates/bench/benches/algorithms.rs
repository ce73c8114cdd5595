use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use intercom_bench::{feature_rows, reply_graph, samples, scored_labels, sequence, synthetic_corpus, two_block_graph};
use intercom_core::embed::{train_embeddings, EmbedConfig};
use intercom_core::impact::{mann_whitney_u, wilcoxon_signed_rank, TestConfig};
use intercom_core::predictor::auc;
use intercom_core::predictor::lstm::{backward, predict_prob, LstmParams};
use intercom_core::replynet::{group_pagerank, PageRankConfig, TeleportSet};
use intercom_core::sentiment::train_forest;
use intercom_core::{extract_crosslinks, CrosslinkConfig, Detector, DetectorConfig, ForestConfig};
use rand::SeedableRng;

fn pagerank(c: &mut Criterion) {
    let mut group = c.benchmark_group("group_pagerank");
    for n in [50, 200, 1000] {
        let g = reply_graph(n, 8.0 / n as f64, 1);
        group.throughput(Throughput::Elements(g.edge_count() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| group_pagerank(black_box(g), TeleportSet::Attackers, &PageRankConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn ranking(c: &mut Criterion) {
    let (scores, labels) = scored_labels(100_000, 2);
    c.bench_function("auc/100k", |b| b.iter(|| auc(black_box(&scores), &labels).unwrap()));

    let cfg = TestConfig::default();
    let (a, b20) = (samples(20, 3), samples(20, 4));
    c.bench_function("mann_whitney/exact_20", |b| b.iter(|| mann_whitney_u(black_box(&a), &b20, &cfg).unwrap()));
    let (a, b1k) = (samples(1000, 5), samples(1000, 6));
    c.bench_function("mann_whitney/normal_1000", |b| b.iter(|| mann_whitney_u(black_box(&a), &b1k, &cfg).unwrap()));
    let pairs: Vec<(f64, f64)> = samples(25, 7).into_iter().zip(samples(25, 8)).collect();
    c.bench_function("wilcoxon/exact_25", |b| b.iter(|| wilcoxon_signed_rank(black_box(&pairs), &cfg).unwrap()));
}

fn lstm(c: &mut Criterion) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let p = LstmParams::init(32, 16, &mut rng);
    let seq = sequence(30, 32, 10);
    c.bench_function("lstm/forward_30x32_h16", |b| b.iter(|| predict_prob(black_box(&seq), &p).unwrap()));
    c.bench_function("lstm/backward_30x32_h16", |b| b.iter(|| backward(black_box(&seq), true, &p).unwrap()));
}

fn embeddings(c: &mut Criterion) {
    let g = two_block_graph(500, 40, 8, 11);
    let cfg = EmbedConfig {
        dim: 32,
        epochs: 1,
        ..EmbedConfig::default()
    };
    let mut group = c.benchmark_group("embed");
    group.throughput(Throughput::Elements(g.edge_count() as u64));
    group.sample_size(20);
    group.bench_function("epoch_4k_edges_d32", |b| b.iter(|| train_embeddings(black_box(&g), &cfg).unwrap()));
    group.finish();
}

fn forest(c: &mut Criterion) {
    let (rows, labels) = feature_rows(500, 20, 12);
    let cfg = ForestConfig {
        trees: 50,
        ..ForestConfig::default()
    };
    let mut group = c.benchmark_group("forest");
    group.sample_size(10);
    group.bench_function("train_500x20_50_trees", |b| b.iter(|| train_forest(black_box(&rows), &labels, &cfg).unwrap()));
    group.finish();
}

fn detection(c: &mut Criterion) {
    let corpus = synthetic_corpus(100, 13);
    let mut group = c.benchmark_group("detection");
    group.sample_size(10);
    group.bench_function("crosslinks_100", |b| {
        b.iter(|| extract_crosslinks(black_box(&corpus), &CrosslinkConfig::default()))
    });
    let ex = extract_crosslinks(&corpus, &CrosslinkConfig::default());
    let det = Detector::new(&corpus, &ex.involved_posts, DetectorConfig::default());
    group.bench_function("baseline_and_detect_100", |b| {
        b.iter(|| {
            let base = det.baseline_ratio(black_box(&ex.links)).unwrap();
            det.detect_all(&ex.links, base.value).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, pagerank, ranking, lstm, embeddings, forest, detection);
criterion_main!(benches);
