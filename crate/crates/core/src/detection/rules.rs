use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use regex::{Regex, RegexBuilder};

use crate::error::{Error, Result};

/// Fashion categories of the Similar Looks evaluation.
pub const DEFAULT_CATEGORIES: [&str; 9] =
    ["shoe", "dress", "glasses", "bag", "watch", "pants", "shorts", "bikini", "earrings"];

#[derive(Debug, Clone)]
pub struct CategoryRule {
    pub category: String,
    patterns: Vec<Regex>,
}

impl CategoryRule {
    pub fn patterns(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(Regex::as_str)
    }

    fn matches(&self, phrase: &str) -> bool {
        self.patterns.iter().any(|p| p.is_match(phrase))
    }
}

/// Compiled rules over a fixed category vocabulary. All pattern errors
/// surface here, never during classification.
#[derive(Debug, Clone)]
pub struct RuleSet {
    vocabulary: Vec<String>,
    rules: Vec<CategoryRule>,
}

impl RuleSet {
    pub fn new<S: AsRef<str>>(vocabulary: &[S], rules: &[(S, S)]) -> Result<Self> {
        let vocabulary: Vec<String> = vocabulary.iter().map(|s| s.as_ref().to_owned()).collect();
        let mut compiled: Vec<CategoryRule> = Vec::new();
        for (category, pattern) in rules {
            let (category, pattern) = (category.as_ref(), pattern.as_ref());
            if !vocabulary.iter().any(|v| v == category) {
                return Err(Error::Config(format!("rule for unknown category {category:?}")));
            }
            if pattern.is_empty() {
                return Err(Error::Config(format!("empty pattern for {category:?}")));
            }
            let re = RegexBuilder::new(pattern)
                .case_insensitive(true)
                .build()
                .map_err(|e| Error::Config(format!("bad pattern for {category:?}: {e}")))?;
            match compiled.iter_mut().find(|r| r.category == category) {
                Some(rule) => rule.patterns.push(re),
                None => compiled.push(CategoryRule { category: category.to_owned(), patterns: vec![re] }),
            }
        }
        Ok(Self { vocabulary, rules: compiled })
    }

    /// One rule per line, `category<TAB>pattern`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse<S: AsRef<str>>(text: &str, vocabulary: &[S]) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (cat, pat) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("rules line {}: expected category<TAB>pattern", n + 1)))?;
            pairs.push((cat.trim().to_owned(), pat.to_owned()));
        }
        let vocab: Vec<String> = vocabulary.iter().map(|s| s.as_ref().to_owned()).collect();
        Self::new(&vocab, &pairs)
    }

    pub fn load<S: AsRef<str>>(path: &Path, vocabulary: &[S]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::parse(&text, vocabulary)
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn rules(&self) -> &[CategoryRule] {
        &self.rules
    }

    pub fn in_vocabulary(&self, category: &str) -> bool {
        self.vocabulary.iter().any(|v| v == category)
    }
}

/// A category is predicted iff any of its patterns matches any phrase.
pub fn classify_categories<S: AsRef<str>>(annotations: &[S], rules: &RuleSet) -> BTreeSet<String> {
    rules
        .rules
        .iter()
        .filter(|r| annotations.iter().any(|a| r.matches(a.as_ref())))
        .map(|r| r.category.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> RuleSet {
        RuleSet::parse("bag\ttote|handbag\nshoe\tshoe|sneaker\n# comment\n\n", &DEFAULT_CATEGORIES).unwrap()
    }

    #[test]
    fn tote_is_a_bag() {
        let got = classify_categories(&["spring fashion, tote with flowers"], &rules());
        assert_eq!(got, BTreeSet::from(["bag".to_owned()]));
    }

    #[test]
    fn empty_and_multi() {
        assert!(classify_categories::<&str>(&[], &rules()).is_empty());
        let got = classify_categories(&["Sneaker and HANDBAG combo"], &rules());
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn load_time_errors() {
        assert!(matches!(RuleSet::parse("bag\t(unclosed", &DEFAULT_CATEGORIES), Err(Error::Config(_))));
        assert!(matches!(RuleSet::parse("hat\thats?", &DEFAULT_CATEGORIES), Err(Error::Config(_))));
        assert!(matches!(RuleSet::parse("bag tote", &DEFAULT_CATEGORIES), Err(Error::Config(_))));
        assert!(matches!(RuleSet::parse("bag\t", &DEFAULT_CATEGORIES), Err(Error::Config(_))));
    }

    #[test]
    fn patterns_accumulate_per_category() {
        let r = RuleSet::parse("bag\ttote\nbag\tpurse", &DEFAULT_CATEGORIES).unwrap();
        assert_eq!(r.rules().len(), 1);
        assert_eq!(r.rules()[0].patterns().collect::<Vec<_>>(), vec!["tote", "purse"]);
    }
}
