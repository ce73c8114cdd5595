//! Word-category lexicons loaded from plain word lists.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named set of word categories. Words are lowercase; no category is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub name: String,
    pub categories: BTreeMap<String, BTreeSet<String>>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("anger", include_str!("../../data/lexicon/anger.txt")),
    ("negative", include_str!("../../data/lexicon/negative.txt")),
    ("positive", include_str!("../../data/lexicon/positive.txt")),
];

fn parse_words(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

impl Lexicon {
    pub fn new(
        name: impl Into<String>,
        categories: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        let name = name.into();
        if categories.is_empty() {
            return Err(Error::InvalidInput(format!(
                "lexicon {name} has no categories"
            )));
        }
        for (cat, words) in &categories {
            if words.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "lexicon {name}: category {cat} is empty"
                )));
            }
            if let Some(w) = words.iter().find(|w| w.chars().any(char::is_uppercase)) {
                return Err(Error::InvalidInput(format!(
                    "lexicon {name}: word {w:?} in {cat} is not lowercase"
                )));
            }
        }
        Ok(Lexicon { name, categories })
    }

    /// The small open anger/negative/positive lexicon shipped with the crate.
    pub fn builtin() -> Self {
        let categories = BUILTIN
            .iter()
            .map(|(cat, text)| (cat.to_string(), parse_words(text)))
            .collect();
        Lexicon::new("builtin", categories).expect("builtin lexicon is valid")
    }

    /// Load every `<category>.txt` in `dir`; the lexicon takes the directory's name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut categories = BTreeMap::new();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(cat) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            categories.insert(cat.to_string(), parse_words(&text));
        }
        let name = dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("lexicon")
            .to_string();
        Lexicon::new(name, categories)
    }

    pub fn category(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(name)
    }

    /// Number of `tokens` (already lowercased) in `category`.
    pub fn hits(&self, category: &str, tokens: &[String]) -> usize {
        self.category(category).map_or(0, |set| {
            tokens.iter().filter(|t| set.contains(t.as_str())).count()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_anger() {
        let lex = Lexicon::builtin();
        assert!(lex.category("anger").unwrap().contains("hate"));
        assert_eq!(lex.categories.len(), 3);
    }

    #[test]
    fn loads_directory_and_lowercases() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("anger.txt"), "Hate\n\nrage\n").unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let lex = Lexicon::load_dir(dir.path()).unwrap();
        assert_eq!(
            lex.category("anger").unwrap().iter().collect::<Vec<_>>(),
            vec!["hate", "rage"]
        );
    }

    #[test]
    fn rejects_empty_category() {
        let mut cats = BTreeMap::new();
        cats.insert("anger".to_string(), BTreeSet::new());
        assert!(Lexicon::new("x", cats).is_err());
        assert!(Lexicon::new("x", BTreeMap::new()).is_err());
    }
}
