//! Fixed-schema numeric features for the tree ensembles.
//!
//! Text features: one rate per lexicon category (hits / tokens), average word length,
//! Flesch reading ease, a count per punctuation mark, and the token count. Two extras
//! are appended: the fraction of all-caps tokens and the number of URLs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sentiment::lexicon::Lexicon;
use crate::text::{raw_tokens, sentence_count, syllables, tokenize};

/// Ordered feature names and values. Values are always finite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a feature; non-finite values are stored as 0.
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.names.push(name.into());
        self.values
            .push(if value.is_finite() { value } else { 0.0 });
    }

    pub fn extend_prefixed(&mut self, prefix: &str, other: &FeatureVector) {
        for (n, v) in other.iter() {
            self.push(format!("{prefix}{n}"), v);
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
    }

    pub fn check_schema(&self, schema: &[String]) -> Result<()> {
        if self.names != schema {
            let first = self
                .names
                .iter()
                .zip(schema)
                .position(|(a, b)| a != b)
                .unwrap_or(self.names.len().min(schema.len()));
            return Err(Error::SchemaMismatch(format!(
                "expected {} features, got {} (first difference at position {first})",
                schema.len(),
                self.names.len()
            )));
        }
        Ok(())
    }
}

pub const PUNCTUATION: &[(char, &str)] = &[
    ('!', "exclamation"),
    ('?', "question"),
    ('.', "period"),
    (',', "comma"),
    (';', "semicolon"),
    (':', "colon"),
    ('"', "quote"),
    ('\'', "apostrophe"),
    ('(', "paren"),
    ('*', "asterisk"),
    ('-', "dash"),
    ('#', "hash"),
    ('@', "at"),
];

/// Flesch reading ease; 0 for text without words.
pub fn flesch_reading_ease(text: &str) -> f64 {
    let words: Vec<&str> = raw_tokens(text).collect();
    if words.is_empty() {
        return 0.0;
    }
    let sentences = sentence_count(text).max(1) as f64;
    let syl: usize = words.iter().map(|w| syllables(w)).sum();
    let n = words.len() as f64;
    206.835 - 1.015 * (n / sentences) - 84.6 * (syl as f64 / n)
}

pub fn extract_text_features(text: &str, lexicons: &[Lexicon]) -> FeatureVector {
    let tokens = tokenize(text);
    let n = tokens.len();
    let rate = |hits: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    let mut fv = FeatureVector::new();
    for lex in lexicons {
        for cat in lex.categories.keys() {
            fv.push(
                format!("lex.{}.{}", lex.name, cat),
                rate(lex.hits(cat, &tokens)),
            );
        }
    }
    let chars: usize = raw_tokens(text).map(|t| t.chars().count()).sum();
    fv.push("avg_word_length", rate(chars));
    fv.push("flesch_reading_ease", flesch_reading_ease(text));
    for (c, name) in PUNCTUATION {
        fv.push(
            format!("punct.{name}"),
            text.chars().filter(|x| x == c).count() as f64,
        );
    }
    fv.push("token_count", n as f64);
    let caps = raw_tokens(text)
        .filter(|t| {
            t.chars().count() > 1
                && t.chars().all(|c| !c.is_alphabetic() || c.is_uppercase())
                && t.chars().any(char::is_alphabetic)
        })
        .count();
    fv.push("caps_fraction", rate(caps));
    fv.push("url_count", text.matches("http").count() as f64);
    fv
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn lex() -> Lexicon {
        let mut cats = BTreeMap::new();
        cats.insert("anger".to_string(), BTreeSet::from(["hate".to_string()]));
        cats.insert("positive".to_string(), BTreeSet::from(["joy".to_string()]));
        Lexicon::new("t", cats).unwrap()
    }

    #[test]
    fn empty_text_is_all_zero() {
        let fv = extract_text_features("", &[lex()]);
        assert!(fv.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lexicon_rates() {
        let fv = extract_text_features("hate hate joy", &[lex()]);
        assert_eq!(fv.get("lex.t.anger"), Some(2.0 / 3.0));
        assert_eq!(fv.get("lex.t.positive"), Some(1.0 / 3.0));
        assert_eq!(fv.get("token_count"), Some(3.0));
    }

    #[test]
    fn word_length_and_punctuation() {
        let fv = extract_text_features("aa bb!!", &[lex()]);
        assert_eq!(fv.get("avg_word_length"), Some(2.0));
        assert_eq!(fv.get("punct.exclamation"), Some(2.0));
        assert_eq!(fv.get("punct.question"), Some(0.0));
    }

    #[test]
    fn flesch_by_hand() {
        // "The cat sat." : 3 words, 1 sentence, 3 syllables
        let expected = 206.835 - 1.015 * 3.0 - 84.6 * 1.0;
        assert!((flesch_reading_ease("The cat sat.") - expected).abs() < 1e-12);
    }

    #[test]
    fn schema_is_stable_across_texts() {
        let a = extract_text_features("", &[lex()]);
        let b = extract_text_features("LOOK at THIS http://x", &[lex()]);
        assert_eq!(a.names(), b.names());
        assert!(b.check_schema(a.names()).is_ok());
        assert_eq!(b.get("caps_fraction"), Some(0.4));
        assert_eq!(b.get("url_count"), Some(1.0));
        let mut c = a.clone();
        c.push("extra", 1.0);
        assert!(matches!(
            c.check_schema(a.names()),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn rates_are_bounded() {
        let fv = extract_text_features("hate joy hate hate hate", &[lex()]);
        for (name, v) in fv.iter().filter(|(n, _)| n.starts_with("lex.")) {
            assert!((0.0..=1.0).contains(&v), "{name}={v}");
        }
    }
}
