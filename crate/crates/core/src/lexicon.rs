//! Category, synonym, predicate-inverse and state tables shared by the
//! distortion operators, the reference model and the CHAIR scorer.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Lexicon {
    /// Canonical object categories, in a fixed order.
    pub categories: Vec<String>,
    /// Near-synonyms or closely related categories, keyed by canonical category.
    #[serde(default)]
    pub synonyms: BTreeMap<String, Vec<String>>,
    /// Spatial predicate inverses. Lookups are bidirectional.
    #[serde(default)]
    pub antonyms: BTreeMap<String, String>,
    #[serde(default)]
    pub states: Vec<String>,
}

impl Lexicon {
    /// The lexicon bundled with the crate (`data/lexicon.json`).
    pub fn builtin() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| serde_json::from_str(DEFAULT_LEXICON).expect("bundled lexicon is valid JSON"))
    }

    pub fn is_canonical(&self, category: &str) -> bool {
        self.categories.iter().any(|c| c == category)
    }

    /// Replacement candidates for `category`, excluding the category itself.
    ///
    /// Synonyms win when the table has an entry; otherwise every other
    /// canonical category qualifies.
    pub fn alternatives(&self, category: &str) -> Vec<&str> {
        if let Some(syn) = self.synonyms.get(category) {
            let alts: Vec<&str> = syn.iter().map(String::as_str).filter(|s| *s != category).collect();
            if !alts.is_empty() {
                return alts;
            }
        }
        self.categories
            .iter()
            .map(String::as_str)
            .filter(|c| *c != category)
            .collect()
    }

    pub fn inverse_predicate(&self, predicate: &str) -> Option<&str> {
        if let Some(inv) = self.antonyms.get(predicate) {
            return Some(inv);
        }
        self.antonyms
            .iter()
            .find(|(_, v)| v.as_str() == predicate)
            .map(|(k, _)| k.as_str())
    }

    /// Maps a synonym back to its canonical category. Canonical names and
    /// unknown words map to themselves. A synonym listed under several
    /// canonical entries resolves to the first in `categories` order.
    pub fn canonicalize<'a>(&'a self, word: &'a str) -> &'a str {
        if self.is_canonical(word) {
            return word;
        }
        for cat in &self.categories {
            if let Some(syn) = self.synonyms.get(cat) {
                if syn.iter().any(|s| s == word) {
                    return cat;
                }
            }
        }
        word
    }

    /// Every surface form an object can take: canonical categories followed
    /// by synonyms not already listed, in deterministic order.
    pub fn all_object_words(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in &self.categories {
            if seen.insert(c.clone()) {
                out.push(c.clone());
            }
        }
        for syns in self.synonyms.values() {
            for s in syns {
                if seen.insert(s.clone()) {
                    out.push(s.clone());
                }
            }
        }
        out
    }
}

/// Whole-word, case-insensitive finder for a fixed word list. Multi-word
/// entries win over their own suffixes ("coffee table" before "table").
#[derive(Debug, Clone)]
pub struct WordMatcher {
    regex: Option<Regex>,
    words: Vec<String>,
}

impl WordMatcher {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut words: Vec<String> = words
            .iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        words.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        words.dedup();
        let regex = (!words.is_empty()).then(|| {
            let alts: Vec<String> = words.iter().map(|w| regex::escape(w)).collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("escaped alternation")
        });
        Self { regex, words }
    }

    /// Matches in order of appearance, lowercased, duplicates kept.
    pub fn find_all(&self, text: &str) -> Vec<String> {
        match &self.regex {
            Some(re) => re.find_iter(text).map(|m| m.as_str().to_lowercase()).collect(),
            None => Vec::new(),
        }
    }

    /// Distinct matches in order of first appearance.
    pub fn find_distinct(&self, text: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for w in self.find_all(text) {
            if !out.contains(&w) {
                out.push(w);
            }
        }
        out
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.iter().any(|w| w == word)
    }
}
