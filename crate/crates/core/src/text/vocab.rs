use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::TagSet;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Lowercased words, split on whitespace and ASCII punctuation.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `max_size - 4` most frequent words of all keys and values,
    /// ties broken lexicographically, after the four reserved tokens.
    pub fn build<'a>(tagsets: impl IntoIterator<Item = &'a TagSet>, max_size: usize) -> Result<Self> {
        if max_size < RESERVED.len() {
            return Err(Error::contract(format!(
                "vocabulary size {max_size} leaves no room for reserved tokens"
            )));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for t in tagsets {
            for (k, v) in t.iter() {
                for w in words(k).chain(words(v)) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        // Stable sort keeps the lexicographic order among equal counts.
        ranked.sort_by_key(|e| std::cmp::Reverse(e.1));
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w).take(max_size - RESERVED.len()))
            .collect();
        Self::try_from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[CLS]`, then per tag in key order: key words, value words, `[SEP]`;
    /// cut to `max_len` tokens.
    pub fn tokenize(&self, tags: &TagSet, max_len: usize) -> Vec<usize> {
        let mut out = vec![CLS];
        for (k, v) in tags.iter() {
            out.extend(words(k).chain(words(v)).map(|w| self.id(&w)));
            out.push(SEP);
        }
        out.truncate(max_len.max(1));
        out
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::data("vocabulary must start with [PAD] [UNK] [CLS] [SEP]"));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("vocabulary repeats token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(pairs: &[(&str, &str)]) -> TagSet {
        TagSet::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn splits_keys_and_values() {
        let v = Vocabulary::build([&t(&[("highway", "residential")])], 100).unwrap();
        assert_ne!(v.id("highway"), UNK);
        assert_ne!(v.id("residential"), UNK);
        assert_eq!(v.id("motorway"), UNK);
        let w: Vec<String> = words("Tiger:CFCC=A41_x-y z").collect();
        assert_eq!(w, ["tiger", "cfcc", "a41", "x", "y", "z"]);
    }

    #[test]
    fn frequency_ties_go_to_the_smaller_word() {
        let v = Vocabulary::build([&t(&[("b", "a")])], 100).unwrap();
        assert!(v.id("a") < v.id("b"));
        let v = Vocabulary::build([&t(&[("b", "a"), ("c", "b")])], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(4), Some("b"));
    }

    #[test]
    fn sequence_layout() {
        let v = Vocabulary::build([&t(&[("oneway", "yes")])], 100).unwrap();
        assert_eq!(v.tokenize(&TagSet::new(), 8), vec![CLS]);
        assert_eq!(
            v.tokenize(&t(&[("oneway", "yes")]), 8),
            vec![CLS, v.id("oneway"), v.id("yes"), SEP]
        );
        assert_eq!(v.tokenize(&t(&[("oneway", "yes")]), 2).len(), 2);
        assert_eq!(v.tokenize(&t(&[("oneway", "yes")]), 0), vec![CLS]);
    }

    #[test]
    fn json_form_is_the_token_list() {
        let v = Vocabulary::build([&t(&[("oneway", "yes")])], 100).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.starts_with(r#"["[PAD]","[UNK]","[CLS]","[SEP]""#));
        assert_eq!(serde_json::from_str::<Vocabulary>(&s).unwrap(), v);
        assert!(serde_json::from_str::<Vocabulary>(r#"["x"]"#).is_err());
    }
}
