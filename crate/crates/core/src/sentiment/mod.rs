//! Sentiment of cross-linking posts toward their target, and community text similarity.

pub mod features;
pub mod forest;
pub mod lexicon;
pub mod tfidf;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CrossLink};
use crate::error::{Error, Result};
use crate::mobilization::Sentiment;
use crate::text::tokenize;

pub use features::{extract_text_features, FeatureVector};
pub use forest::{train_forest, Forest, ForestConfig};
pub use lexicon::Lexicon;
pub use tfidf::{tfidf_similarity, TfidfIndex};

/// Drop the words of `source` whose lowercase form occurs in `target`, keeping the rest in order.
pub fn strip_shared_words(source: &str, target: &str) -> String {
    let shared: BTreeSet<String> = tokenize(target).into_iter().collect();
    source
        .split_whitespace()
        .filter(|word| {
            let tokens = tokenize(word);
            tokens.is_empty() || !tokens.iter().all(|t| shared.contains(t))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Text features of a cross-link's source post, minus the words it shares with the target post.
pub fn sentiment_features(
    link: &CrossLink,
    corpus: &Corpus,
    lexicons: &[Lexicon],
) -> Result<FeatureVector> {
    let source = corpus
        .post(&link.source_post)
        .ok_or_else(|| Error::UnknownId(format!("post {}", link.source_post)))?;
    let target = corpus
        .post(&link.target_post)
        .ok_or_else(|| Error::UnknownId(format!("post {}", link.target_post)))?;
    Ok(extract_text_features(
        &strip_shared_words(&source.body, &target.body),
        lexicons,
    ))
}

/// Negative iff the forest's probability of the negative class exceeds 0.5.
pub fn predict_sentiment(
    forest: &Forest,
    link: &CrossLink,
    corpus: &Corpus,
    lexicons: &[Lexicon],
) -> Result<(Sentiment, f64)> {
    let p = forest.predict_proba(&sentiment_features(link, corpus, lexicons)?)?;
    let label = if p > 0.5 {
        Sentiment::Negative
    } else {
        Sentiment::Neutral
    };
    Ok((label, p))
}

/// One line of a sentiment label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentLabel {
    /// Source post id of the cross-link.
    pub crosslink: String,
    pub label: Sentiment,
}

/// Read `{"crosslink": ..., "label": "negative"|"neutral"}` lines.
pub fn load_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, Sentiment>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: SentimentLabel = serde_json::from_str(line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.insert(l.crosslink, l.label);
    }
    Ok(out)
}

/// Train on the labeled subset of `links`; unlabeled links are skipped.
pub fn train_sentiment(
    links: &[CrossLink],
    labels: &BTreeMap<String, Sentiment>,
    corpus: &Corpus,
    lexicons: &[Lexicon],
    config: &ForestConfig,
) -> Result<Forest> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for link in links {
        match labels.get(link.id()) {
            Some(Sentiment::Negative) => y.push(true),
            Some(Sentiment::Neutral) => y.push(false),
            _ => continue,
        }
        x.push(sentiment_features(link, corpus, lexicons)?);
    }
    train_forest(&x, &y, config)
}
