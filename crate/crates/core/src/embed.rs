//! User and community embeddings from the user-community posting multigraph.
//!
//! Each post contributes an edge (author, community). Training minimizes, per edge,
//! `-log σ(u·c) - Σ_n log σ(-u·c_n)` over K negatives drawn uniformly from the
//! communities, by SGD over shuffled edges with a linearly decaying learning rate.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::{child_seed, seeded, substream};
use crate::text::tokenize;

/// Edges between users and communities, one per post; parallel edges are kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BipartiteMultigraph {
    users: Vec<String>,
    communities: Vec<String>,
    edges: Vec<(u32, u32)>,
    user_degree: Vec<usize>,
    community_degree: Vec<usize>,
}

pub fn build_bipartite(corpus: &Corpus) -> BipartiteMultigraph {
    BipartiteMultigraph::from_pairs(
        corpus
            .posts()
            .iter()
            .map(|p| (p.author.as_str(), p.community.as_str())),
    )
}

/// Skip-gram pairs (center word, context word) within `window` tokens, from post bodies.
/// Training on this graph gives word vectors in the `users` table.
pub fn build_word_contexts(corpus: &Corpus, window: usize) -> BipartiteMultigraph {
    let docs: Vec<Vec<String>> = corpus.posts().iter().map(|p| tokenize(&p.body)).collect();
    let mut pairs = Vec::new();
    for toks in &docs {
        for (i, center) in toks.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(toks.len());
            for (j, ctx) in toks.iter().enumerate().take(hi).skip(lo) {
                if j != i {
                    pairs.push((center.as_str(), ctx.as_str()));
                }
            }
        }
    }
    BipartiteMultigraph::from_pairs(pairs)
}

/// Word vectors trained on the corpus itself.
pub fn train_word_vectors(corpus: &Corpus, window: usize, config: &EmbedConfig) -> Result<VectorTable> {
    Ok(train_embeddings(&build_word_contexts(corpus, window), config)?.users)
}

impl BipartiteMultigraph {
    /// Ids are indexed in order of first appearance.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut g = BipartiteMultigraph::default();
        let mut users: HashMap<String, u32> = HashMap::new();
        let mut comms: HashMap<String, u32> = HashMap::new();
        for (u, c) in pairs {
            let ui = *users.entry(u.to_owned()).or_insert_with(|| {
                g.users.push(u.to_owned());
                g.user_degree.push(0);
                (g.users.len() - 1) as u32
            });
            let ci = *comms.entry(c.to_owned()).or_insert_with(|| {
                g.communities.push(c.to_owned());
                g.community_degree.push(0);
                (g.communities.len() - 1) as u32
            });
            g.user_degree[ui as usize] += 1;
            g.community_degree[ci as usize] += 1;
            g.edges.push((ui, ci));
        }
        g
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn communities(&self) -> &[String] {
        &self.communities
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn user_degree(&self, i: usize) -> usize {
        self.user_degree[i]
    }

    pub fn community_degree(&self, i: usize) -> usize {
        self.community_degree[i]
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Dense vectors keyed by id, all of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorTable {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl VectorTable {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::InvalidInput(format!(
                "{} ids of dimension {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vector id {id}")));
            }
        }
        Ok(VectorTable {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        if self.index.len() != self.ids.len() {
            return self.ids.iter().position(|x| x == id);
        }
        self.index.get(id).copied()
    }

    /// Coordinate-wise mean of all rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (a, b) in m.iter_mut().zip(self.row(i)) {
                *a += b;
            }
        }
        if !self.is_empty() {
            m.iter_mut().for_each(|x| *x /= self.len() as f64);
        }
        m
    }

    /// Header `count dim`, then one line `id dim v1 ... vd` per entry.
    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "{} {}", self.len(), self.dim)?;
            for i in 0..self.len() {
                write!(w, "{} {}", self.ids[i], self.dim)?;
                for v in self.row(i) {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    /// Read the format written by [`VectorTable::write_text`]. Lines of the form
    /// `id v1 ... vd` (without the repeated dimension) are also accepted.
    pub fn read_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: &str| {
            Error::InvalidInput(format!("{}:{line}: {msg}", path.display()))
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(1, "header must be `count dim`"))?;
        let [count, dim] = head[..] else {
            return Err(bad(1, "header must be `count dim`"));
        };
        let mut ids = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (n, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let values = match parts.len() {
                l if l == dim + 2 && parts[1].parse::<usize>() == Ok(dim) => &parts[2..],
                l if l == dim + 1 => &parts[1..],
                _ => return Err(bad(n + 1, "wrong number of values")),
            };
            ids.push(parts[0].to_owned());
            for v in values {
                let x: f64 = v.parse().map_err(|_| bad(n + 1, "unparsable value"))?;
                if !x.is_finite() {
                    return Err(bad(n + 1, "non-finite value"));
                }
                data.push(x);
            }
        }
        if ids.len() != count {
            return Err(bad(
                1,
                &format!("header says {count} entries, found {}", ids.len()),
            ));
        }
        VectorTable::new(dim, ids, data)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub users: VectorTable,
    pub communities: VectorTable,
    /// Mean per-edge loss after each epoch.
    pub epoch_loss: Vec<f64>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    /// Restore lookup indices after deserialization.
    pub fn reindex(&mut self) {
        self.users.rebuild_index();
        self.communities.rebuild_index();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Lock-free parallel SGD; faster but not bit-reproducible.
    pub parallel: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 300,
            negatives: 5,
            epochs: 100,
            lr_start: 0.025,
            lr_end: 1e-4,
            seed: 0,
            parallel: false,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss of one positive edge and its negatives.
pub fn edge_loss(u: &[f64], c: &[f64], negatives: &[&[f64]]) -> f64 {
    neg_log_sigmoid(dot(u, c))
        + negatives
            .iter()
            .map(|n| neg_log_sigmoid(-dot(u, n)))
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGradients {
    pub user: Vec<f64>,
    pub community: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Analytic gradient of [`edge_loss`] with respect to every vector involved.
pub fn edge_gradients(u: &[f64], c: &[f64], negatives: &[&[f64]]) -> EdgeGradients {
    let gpos = sigmoid(dot(u, c)) - 1.0;
    let mut user: Vec<f64> = c.iter().map(|x| gpos * x).collect();
    let community = u.iter().map(|x| gpos * x).collect();
    let mut negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let g = sigmoid(dot(u, n));
        for (a, b) in user.iter_mut().zip(n.iter()) {
            *a += g * b;
        }
        negs.push(u.iter().map(|x| g * x).collect());
    }
    EdgeGradients {
        user,
        community,
        negatives: negs,
    }
}

/// One SGD step on an edge; returns the edge loss before the step.
fn sgd_step(
    u: &mut [f64],
    comms: &mut [f64],
    dim: usize,
    c: usize,
    negs: &[usize],
    lr: f64,
    grad_u: &mut [f64],
) -> f64 {
    grad_u.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (k, &target) in std::iter::once(&c).chain(negs).enumerate() {
        let v = &mut comms[target * dim..(target + 1) * dim];
        let s = dot(u, v);
        // label 1 for the positive, 0 for negatives
        let g = if k == 0 {
            loss += neg_log_sigmoid(s);
            sigmoid(s) - 1.0
        } else {
            loss += neg_log_sigmoid(-s);
            sigmoid(s)
        };
        for (gu, x) in grad_u.iter_mut().zip(v.iter()) {
            *gu += g * x;
        }
        for (x, ui) in v.iter_mut().zip(u.iter()) {
            *x -= lr * g * ui;
        }
    }
    for (x, g) in u.iter_mut().zip(grad_u.iter()) {
        *x -= lr * g;
    }
    loss
}

fn init_vectors<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<f64> {
    let r = 0.5 / dim as f64;
    (0..n * dim).map(|_| rng.gen_range(-r..r)).collect()
}

pub fn train_embeddings(
    graph: &BipartiteMultigraph,
    config: &EmbedConfig,
) -> Result<EmbeddingTable> {
    if graph.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train embeddings on an empty graph".into(),
        ));
    }
    if config.dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let dim = config.dim;
    let mut init = substream(config.seed, "embed.init");
    let mut users = init_vectors(graph.users.len(), dim, &mut init);
    let mut comms = init_vectors(graph.communities.len(), dim, &mut init);
    let n_comm = graph.communities.len();
    let total_steps = (config.epochs * graph.edge_count()).max(1) as f64;
    let lr_at = |step: usize| {
        config.lr_start - (config.lr_start - config.lr_end) * (step as f64 / total_steps)
    };

    let mut order: Vec<usize> = (0..graph.edge_count()).collect();
    let mut shuffle = substream(config.seed, "embed.shuffle");
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let base = epoch * graph.edge_count();
        let loss = if config.parallel {
            hogwild_epoch(
                graph, &order, &mut users, &mut comms, config, epoch, base, &lr_at,
            )
        } else {
            let mut rng = seeded(child_seed(config.seed, "embed.negatives", epoch as u64));
            let mut negs = vec![0usize; config.negatives];
            let mut grad = vec![0.0; dim];
            let mut loss = 0.0;
            for (step, &e) in order.iter().enumerate() {
                let (ui, ci) = graph.edges[e];
                negs.iter_mut().for_each(|n| *n = rng.gen_range(0..n_comm));
                let u = &mut users[ui as usize * dim..(ui as usize + 1) * dim];
                loss += sgd_step(
                    u,
                    &mut comms,
                    dim,
                    ci as usize,
                    &negs,
                    lr_at(base + step),
                    &mut grad,
                );
            }
            loss
        };
        let mean = loss / graph.edge_count() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("embedding loss at epoch {epoch}")));
        }
        debug!("embed epoch {epoch}: loss {mean:.6}");
        epoch_loss.push(mean);
    }
    if config.parallel {
        warn!("parallel embedding training is not bit-reproducible");
    }
    Ok(EmbeddingTable {
        users: VectorTable::new(dim, graph.users.clone(), users)?,
        communities: VectorTable::new(dim, graph.communities.clone(), comms)?,
        epoch_loss,
    })
}

#[allow(clippy::too_many_arguments)]
fn hogwild_epoch(
    graph: &BipartiteMultigraph,
    order: &[usize],
    users: &mut [f64],
    comms: &mut [f64],
    config: &EmbedConfig,
    epoch: usize,
    base: usize,
    lr_at: &(dyn Fn(usize) -> f64 + Sync),
) -> f64 {
    let dim = config.dim;
    let n_comm = graph.communities.len();
    let to_atomic = |v: &[f64]| {
        v.iter()
            .map(|x| AtomicU64::new(x.to_bits()))
            .collect::<Vec<_>>()
    };
    let (au, ac) = (to_atomic(users), to_atomic(comms));
    let chunk = 1024;
    let loss: f64 = order
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, edges)| {
            let mut rng = seeded(child_seed(
                config.seed,
                "embed.hogwild",
                (epoch * 1_000_003 + ci) as u64,
            ));
            let mut u = vec![0.0; dim];
            let mut v = vec![0.0; dim];
            let mut grad = vec![0.0; dim];
            let mut loss = 0.0;
            for (k, &e) in edges.iter().enumerate() {
                let lr = lr_at(base + ci * chunk + k);
                let (ui, c) = graph.edges[e];
                let urow = &au[ui as usize * dim..(ui as usize + 1) * dim];
                for (x, a) in u.iter_mut().zip(urow) {
                    *x = f64::from_bits(a.load(Ordering::Relaxed));
                }
                grad.iter_mut().for_each(|g| *g = 0.0);
                for k in 0..=config.negatives {
                    let (target, label) = if k == 0 {
                        (c as usize, 1.0)
                    } else {
                        (rng.gen_range(0..n_comm), 0.0)
                    };
                    let row = &ac[target * dim..(target + 1) * dim];
                    for (x, a) in v.iter_mut().zip(row) {
                        *x = f64::from_bits(a.load(Ordering::Relaxed));
                    }
                    let s = dot(&u, &v);
                    loss += if k == 0 {
                        neg_log_sigmoid(s)
                    } else {
                        neg_log_sigmoid(-s)
                    };
                    let g = sigmoid(s) - label;
                    for i in 0..dim {
                        grad[i] += g * v[i];
                        row[i].store((v[i] - lr * g * u[i]).to_bits(), Ordering::Relaxed);
                    }
                }
                for i in 0..dim {
                    urow[i].store((u[i] - lr * grad[i]).to_bits(), Ordering::Relaxed);
                }
            }
            loss
        })
        .sum();
    for (x, a) in users.iter_mut().zip(&au) {
        *x = f64::from_bits(a.load(Ordering::Relaxed));
    }
    for (x, a) in comms.iter_mut().zip(&ac) {
        *x = f64::from_bits(a.load(Ordering::Relaxed));
    }
    loss
}

/// Mean per-edge loss over the first `sample` edges (all when `None`) with seeded negatives.
pub fn loss(
    graph: &BipartiteMultigraph,
    table: &EmbeddingTable,
    negatives: usize,
    sample: Option<usize>,
    seed: u64,
) -> Result<f64> {
    if table.users.dim() != table.communities.dim() {
        return Err(Error::InvalidInput(
            "user and community dimensions differ".into(),
        ));
    }
    let n = sample.unwrap_or(graph.edge_count()).min(graph.edge_count());
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = substream(seed, "embed.loss");
    let mut total = 0.0;
    for &(ui, ci) in &graph.edges[..n] {
        let u = table
            .users
            .get(&graph.users[ui as usize])
            .ok_or_else(|| Error::UnknownId(graph.users[ui as usize].clone()))?;
        let c = table
            .communities
            .get(&graph.communities[ci as usize])
            .ok_or_else(|| Error::UnknownId(graph.communities[ci as usize].clone()))?;
        let negs: Vec<&[f64]> = (0..negatives)
            .map(|_| {
                table
                    .communities
                    .row(rng.gen_range(0..table.communities.len()))
            })
            .collect();
        total += edge_loss(u, c, &negs);
    }
    Ok(total / n as f64)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// The `k` communities most cosine-similar to `community`, excluding itself; ties by id.
pub fn nearest_communities(
    table: &EmbeddingTable,
    community: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let comms = &table.communities;
    let q = comms
        .get(community)
        .ok_or_else(|| Error::UnknownId(format!("community {community}")))?;
    let mut scored: Vec<(String, f64)> = comms
        .ids()
        .iter()
        .enumerate()
        .filter(|(_, id)| id.as_str() != community)
        .map(|(i, id)| (id.clone(), cosine(q, comms.row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
