//! Tokenization shared by the lexicon, tf-idf, and sequence code.

/// Lowercased word tokens: maximal runs of alphanumerics and apostrophes.
pub fn tokenize(text: &str) -> Vec<String> {
    raw_tokens(text).map(|t| t.to_lowercase()).collect()
}

/// Word tokens in their original case.
pub fn raw_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
}

/// Vowel-group syllable heuristic with a silent-e adjustment; at least one per word.
pub fn syllables(word: &str) -> usize {
    let lower: Vec<char> = word
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphabetic())
        .collect();
    if lower.is_empty() {
        return 1;
    }
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut count = 0;
    let mut prev = false;
    for &c in &lower {
        let v = is_vowel(c);
        if v && !prev {
            count += 1;
        }
        prev = v;
    }
    if lower.len() > 2
        && lower[lower.len() - 1] == 'e'
        && !is_vowel(lower[lower.len() - 2])
        && count > 1
    {
        count -= 1;
    }
    count.max(1)
}

/// Number of sentences: runs of terminal punctuation, at least one for non-empty text.
pub fn sentence_count(text: &str) -> usize {
    let mut count = 0;
    let mut in_run = false;
    for c in text.chars() {
        let term = matches!(c, '.' | '!' | '?');
        if term && !in_run {
            count += 1;
        }
        in_run = term;
    }
    // text after the last terminator still forms a sentence
    let trailing = text
        .rsplit(|c| matches!(c, '.' | '!' | '?'))
        .next()
        .map(|s| raw_tokens(s).next().is_some())
        .unwrap_or(false);
    if trailing {
        count += 1;
    }
    count.max(usize::from(raw_tokens(text).next().is_some()))
}
