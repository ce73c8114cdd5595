//! Predicting whether a cross-link will mobilize.
//!
//! Three models: a forest over hand-crafted features, an LSTM over the socially-primed
//! sequence `[user, source community, target community, word_1 .. word_L]`, and a forest
//! over both feature sets plus the LSTM's mean hidden state.

pub mod lstm;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CrossLink, Window, MEMBERSHIP_WINDOW};
use crate::embed::{cosine, EmbeddingTable, VectorTable};
use crate::error::{Error, Result};
use crate::impact::midranks;
use crate::rng::substream;
use crate::sentiment::{
    extract_text_features, train_forest, FeatureVector, Forest, ForestConfig, Lexicon, TfidfIndex,
};
use crate::text::tokenize;

pub use lstm::{
    backward, gradient_check, lstm_forward, predict_prob, train, InputSeq, LstmConfig, LstmParams,
    TrainedLstm,
};

pub const MAX_WORDS: usize = 50;
/// Number of priming vectors ahead of the words.
pub const PRIMING: usize = 3;
pub const ENSEMBLE_TREES: usize = 500;

/// Row-major sequence of equal-width vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialSequence {
    pub dim: usize,
    data: Vec<f64>,
    /// Words with no vector, mapped to zeros.
    pub oov: usize,
    /// A missing user or community vector was replaced by its table's mean.
    pub backed_off: bool,
}

impl SocialSequence {
    pub fn from_vectors(dim: usize, vectors: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * vectors.len());
        for v in vectors {
            if v.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "vector of width {} in sequence of width {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("sequence vector".into()));
            }
            data.extend_from_slice(v);
        }
        Ok(SocialSequence {
            dim,
            data,
            oov: 0,
            backed_off: false,
        })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

impl InputSeq for SocialSequence {
    fn steps(&self) -> usize {
        self.len()
    }
    fn step(&self, t: usize) -> &[f64] {
        self.vector(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceOptions {
    pub max_words: usize,
    /// Replace a missing user or community vector with the table mean instead of failing.
    pub backoff: bool,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions {
            max_words: MAX_WORDS,
            backoff: false,
        }
    }
}

/// Build `[u, c_s, c_t, w_1 .. w_L]` for a cross-link's source post.
pub fn assemble_sequence(
    link: &CrossLink,
    corpus: &Corpus,
    tables: &EmbeddingTable,
    words: &VectorTable,
    options: &SequenceOptions,
) -> Result<SocialSequence> {
    let body = corpus
        .post(&link.source_post)
        .map(|p| p.body.as_str())
        .ok_or_else(|| Error::UnknownId(format!("post {}", link.source_post)))?;
    assemble_text_sequence(
        &link.author,
        &link.source_community,
        &link.target_community,
        body,
        tables,
        words,
        options,
    )
}

/// [`assemble_sequence`] over many cross-links, in parallel, preserving order.
pub fn assemble_sequences(
    links: &[&CrossLink],
    corpus: &Corpus,
    tables: &EmbeddingTable,
    words: &VectorTable,
    options: &SequenceOptions,
) -> Result<Vec<SocialSequence>> {
    links
        .par_iter()
        .map(|l| assemble_sequence(l, corpus, tables, words, options))
        .collect()
}

pub fn assemble_text_sequence(
    user: &str,
    source: &str,
    target: &str,
    text: &str,
    tables: &EmbeddingTable,
    words: &VectorTable,
    options: &SequenceOptions,
) -> Result<SocialSequence> {
    let dim = tables.users.dim();
    if tables.communities.dim() != dim || words.dim() != dim {
        return Err(Error::InvalidInput(format!(
            "embedding widths differ: users {dim}, communities {}, words {}",
            tables.communities.dim(),
            words.dim()
        )));
    }
    let mut backed_off = false;
    let mut lookup = |table: &VectorTable, id: &str, kind: &str| -> Result<Vec<f64>> {
        match table.get(id) {
            Some(v) => Ok(v.to_vec()),
            None if options.backoff && !table.is_empty() => {
                backed_off = true;
                Ok(table.mean())
            }
            None => Err(Error::UnknownId(format!("{kind} embedding for {id}"))),
        }
    };
    let u = lookup(&tables.users, user, "user")?;
    let cs = lookup(&tables.communities, source, "community")?;
    let ct = lookup(&tables.communities, target, "community")?;
    let zero = vec![0.0; dim];
    let mut vectors: Vec<&[f64]> = vec![&u, &cs, &ct];
    let mut oov = 0;
    for tok in tokenize(text).iter().take(options.max_words) {
        match words.get(tok) {
            Some(v) => vectors.push(v),
            None => {
                oov += 1;
                vectors.push(&zero);
            }
        }
    }
    let mut seq = SocialSequence::from_vectors(dim, &vectors)?;
    seq.oov = oov;
    seq.backed_off = backed_off;
    Ok(seq)
}

/// Area under the ROC curve via the rank-sum statistic; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(
            "scores and labels differ in length".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC score".into()));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Disjoint train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 80/10/10 split of `0..n`.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "predictor.split"));
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let test = idx.split_off((n_train + n_val).min(n));
    let val = idx.split_off(n_train.min(idx.len()));
    Split {
        train: idx,
        val,
        test,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFeatures {
    pub features: FeatureVector,
    /// The author had no comments or posts before the cross-link.
    pub no_history: bool,
}

/// Hand-crafted features of a cross-link: source post text, author activity over the 30
/// days before `t0`, averaged text features of the author's earlier posts, community text
/// similarity, and (when embeddings are given) embedding cosines.
pub fn baseline_features(
    link: &CrossLink,
    corpus: &Corpus,
    lexicons: &[Lexicon],
    tfidf: &TfidfIndex,
    embeddings: Option<&EmbeddingTable>,
) -> Result<BaselineFeatures> {
    let post = corpus
        .post(&link.source_post)
        .ok_or_else(|| Error::UnknownId(format!("post {}", link.source_post)))?;
    let mut fv = FeatureVector::new();
    fv.extend_prefixed("post.", &extract_text_features(&post.body, lexicons));

    let window = Window::before(link.t0, MEMBERSHIP_WINDOW);
    let to_target = corpus.user_activity(&link.author, &link.target_community, window);
    let in_source = corpus.user_activity(&link.author, &link.source_community, window);
    let prior: Vec<_> = corpus
        .user_posts(&link.author)
        .filter(|p| p.timestamp < link.t0)
        .collect();
    let prior_in_target = prior
        .iter()
        .filter(|p| p.community == link.target_community)
        .count();
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    fv.push("author.comments_30d", to_target.total as f64);
    fv.push("author.comment_fraction_target", to_target.fraction);
    fv.push("author.comment_fraction_source", in_source.fraction);
    fv.push("author.prior_posts", prior.len() as f64);
    fv.push(
        "author.post_fraction_target",
        frac(prior_in_target, prior.len()),
    );

    let template = extract_text_features("", lexicons);
    let mut avg = vec![0.0; template.len()];
    for p in &prior {
        for (a, v) in avg
            .iter_mut()
            .zip(extract_text_features(&p.body, lexicons).values())
        {
            *a += v;
        }
    }
    for (name, a) in template.names().iter().zip(&avg) {
        fv.push(
            format!("history.{name}"),
            if prior.is_empty() {
                0.0
            } else {
                a / prior.len() as f64
            },
        );
    }
    fv.push(
        "tfidf_similarity",
        tfidf.similarity(&link.source_community, &link.target_community),
    );

    if let Some(t) = embeddings {
        let u = t.users.get(&link.author);
        let cs = t.communities.get(&link.source_community);
        let ct = t.communities.get(&link.target_community);
        let cos =
            |a: Option<&[f64]>, b: Option<&[f64]>| a.zip(b).map_or(0.0, |(a, b)| cosine(a, b));
        fv.push("embed.user_source", cos(u, cs));
        fv.push("embed.user_target", cos(u, ct));
        fv.push("embed.source_target", cos(cs, ct));
    }
    Ok(BaselineFeatures {
        features: fv,
        no_history: to_target.total == 0 && prior.is_empty(),
    })
}

/// Concatenate hand-crafted features, the three priming vectors, and the mean hidden state.
pub fn ensemble_features(
    base: &FeatureVector,
    seq: &SocialSequence,
    mean_hidden: &[f64],
) -> Result<FeatureVector> {
    if seq.len() < PRIMING {
        return Err(Error::InvalidInput(
            "sequence lacks the priming vectors".into(),
        ));
    }
    let mut fv = base.clone();
    for (t, name) in ["user", "source", "target"].iter().enumerate() {
        for (k, v) in seq.vector(t).iter().enumerate() {
            fv.push(format!("{name}.{k}"), *v);
        }
    }
    for (k, v) in mean_hidden.iter().enumerate() {
        fv.push(format!("hidden.{k}"), *v);
    }
    Ok(fv)
}

/// Random forest of [`ENSEMBLE_TREES`] trees over ensemble feature vectors.
pub fn ensemble_train(rows: &[FeatureVector], labels: &[bool], seed: u64) -> Result<Forest> {
    train_forest(
        rows,
        labels,
        &ForestConfig {
            trees: ENSEMBLE_TREES,
            seed,
            ..ForestConfig::default()
        },
    )
}

/// Mean LSTM hidden state over the whole sequence.
pub fn mean_hidden(seq: &SocialSequence, params: &LstmParams) -> Result<Vec<f64>> {
    Ok(lstm_forward(seq, params)?.mean_hidden(params.hidden))
}
