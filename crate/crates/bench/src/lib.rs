//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intercom_core::embed::BipartiteMultigraph;
use intercom_core::replynet::{Group, ReplyGraph};
use intercom_core::synth::{generate, SynthSpec};
use intercom_core::{Corpus, FeatureVector};

/// `n` nodes, each ordered pair linked with probability `p`; a third of the nodes attack,
/// a third defend.
pub fn reply_graph(n: usize, p: f64, seed: u64) -> ReplyGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = (0..n)
        .map(|i| {
            let g = match i % 3 {
                0 => Group::Attacker,
                1 => Group::Defender,
                _ => Group::Other,
            };
            (format!("u{i}"), g)
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(p) {
                edges.push((i, j, rng.gen_range(1..4) as f64));
            }
        }
    }
    ReplyGraph::from_edges(nodes, &edges).expect("valid graph")
}

/// Scores with a weak signal and frequent ties.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let y = rng.gen_bool(0.3);
            let s = (rng.gen::<f64>() + if y { 0.3 } else { 0.0 }) * 100.0;
            (s.round(), y)
        })
        .unzip()
}

pub fn samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// Users each post to `per_user` communities drawn from their half of the community set.
pub fn two_block_graph(users: usize, communities: usize, per_user: usize, seed: u64) -> BipartiteMultigraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let us: Vec<String> = (0..users).map(|i| format!("u{i}")).collect();
    let cs: Vec<String> = (0..communities).map(|i| format!("c{i}")).collect();
    let half = communities / 2;
    let mut pairs = Vec::new();
    for (i, u) in us.iter().enumerate() {
        for _ in 0..per_user {
            let c = (i % 2) * half + rng.gen_range(0..half);
            pairs.push((u.as_str(), cs[c].as_str()));
        }
    }
    BipartiteMultigraph::from_pairs(pairs)
}

pub fn sequence(len: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Rows whose label depends on the first two of `width` features.
pub fn feature_rows(n: usize, width: usize, seed: u64) -> (Vec<FeatureVector>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut fv = FeatureVector::new();
            let xs: Vec<f64> = (0..width).map(|_| rng.gen()).collect();
            for (k, x) in xs.iter().enumerate() {
                fv.push(format!("f{k}"), *x);
            }
            (fv, xs[0] + xs[1] > 1.0)
        })
        .unzip()
}

pub fn synthetic_corpus(crosslinks: usize, seed: u64) -> Corpus {
    let spec = SynthSpec {
        n_communities: 10,
        users_per_community: 40,
        n_crosslinks: crosslinks,
        seed,
        ..SynthSpec::default()
    };
    let synth = generate(&spec).expect("feasible spec");
    Corpus::from_events(synth.events).0
}
