//! Community-level tf-idf vectors over the concatenated post text of each community.
//!
//! tf is the raw term count divided by the document's token count; idf is `ln(N / df)`
//! over the N community documents. The vocabulary is the `vocab_size` most frequent
//! corpus words (ties broken alphabetically).

use std::collections::{BTreeMap, HashMap};

use log::warn;

use crate::corpus::Corpus;
use crate::text::tokenize;

pub const DEFAULT_VOCAB_SIZE: usize = 10_000;

type Sparse = Vec<(u32, f64)>;

#[derive(Debug, Clone)]
pub struct TfidfIndex {
    vocab: Vec<String>,
    tf: BTreeMap<String, Sparse>,
    idf: Vec<f64>,
}

impl TfidfIndex {
    pub fn build(corpus: &Corpus, vocab_size: usize) -> Self {
        let mut docs: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in corpus.posts() {
            docs.entry(p.community.clone())
                .or_default()
                .extend(tokenize(&p.body));
        }
        Self::from_documents(docs, vocab_size)
    }

    /// Build from pre-tokenized documents keyed by community.
    pub fn from_documents(docs: BTreeMap<String, Vec<String>>, vocab_size: usize) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for tokens in docs.values() {
            for t in tokens {
                *freq.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(vocab_size);
        let vocab: Vec<String> = ranked.iter().map(|(w, _)| w.to_string()).collect();
        let index: HashMap<&str, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i as u32))
            .collect();

        let mut df = vec![0usize; vocab.len()];
        let mut tf = BTreeMap::new();
        for (community, tokens) in &docs {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for t in tokens {
                if let Some(&i) = index.get(t.as_str()) {
                    *counts.entry(i).or_default() += 1;
                }
            }
            for &i in counts.keys() {
                df[i as usize] += 1;
            }
            let len = tokens.len().max(1) as f64;
            let v: Sparse = counts
                .into_iter()
                .map(|(i, c)| (i, c as f64 / len))
                .collect();
            tf.insert(community.clone(), v);
        }
        let n = docs.len() as f64;
        let idf = df
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { (n / d as f64).ln() })
            .collect();
        TfidfIndex { vocab, tf, idf }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn tf(&self, community: &str) -> Option<&[(u32, f64)]> {
        self.tf.get(community).map(Vec::as_slice)
    }

    pub fn tfidf(&self, community: &str) -> Option<Sparse> {
        self.tf(community).map(|v| {
            v.iter()
                .map(|&(i, x)| (i, x * self.idf[i as usize]))
                .collect()
        })
    }

    /// Cosine of the two communities' tf-idf vectors, in [0, 1].
    ///
    /// Words present in every community have idf 0; when that leaves both vectors zero
    /// (for example two communities with the same text), the tf vectors are compared instead.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let (Some(ta), Some(tb)) = (self.tf(a), self.tf(b)) else {
            warn!("tf-idf similarity: community without posts ({a} or {b})");
            return 0.0;
        };
        let wa = self.tfidf(a).unwrap_or_default();
        let wb = self.tfidf(b).unwrap_or_default();
        if norm(&wa) == 0.0 && norm(&wb) == 0.0 {
            return cosine(ta, tb);
        }
        cosine(&wa, &wb)
    }
}

fn norm(v: &[(u32, f64)]) -> f64 {
    v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // both sorted by index
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// One-shot similarity; prefer building a [`TfidfIndex`] once for many queries.
pub fn tfidf_similarity(a: &str, b: &str, corpus: &Corpus, vocab_size: usize) -> f64 {
    TfidfIndex::build(corpus, vocab_size).similarity(a, b)
}
