use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeStats, InputItem, InputSpec, Record, Slot};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NONE: usize = 4;

/// Reserved entries at the head of every token map, in id order.
pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<none>"];

/// Bijection between strings and dense ids. Unknown strings map to [`UNK`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenMap {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TokenMap {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<TokenMap> for Vec<String> {
    fn from(m: TokenMap) -> Self {
        m.tokens
    }
}

impl TokenMap {
    /// Reserved ids first, then tokens with count `>= min_count` by
    /// descending count and then lexicographically.
    fn from_counts(counts: HashMap<&str, usize>, min_count: usize) -> Self {
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], |s| s.as_str())
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|i| self.token(*i).to_string()).collect()
    }

    fn fingerprint(&self, h: &mut u64) {
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(0xff)) {
                *h ^= b as u64;
                *h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
    }
}

/// Text, attribute and value vocabularies plus the attribute statistics
/// that fix canonical item order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub text: TokenMap,
    pub attributes: TokenMap,
    pub values: TokenMap,
    pub min_count: usize,
    pub attribute_stats: AttributeStats,
}

pub fn build_vocab(records: &[Record], min_count: usize) -> Result<Vocabulary> {
    if records.is_empty() {
        return Err(Error::Empty("corpus for vocabulary"));
    }
    if min_count == 0 {
        return Err(Error::Invalid("min_count must be at least 1".into()));
    }
    let mut text: HashMap<&str, usize> = HashMap::new();
    let mut attrs: HashMap<&str, usize> = HashMap::new();
    let mut values: HashMap<&str, usize> = HashMap::new();
    for r in records {
        for t in r.sentences.iter().flatten().chain(r.title.iter().flatten()) {
            *text.entry(t).or_insert(0) += 1;
        }
        for it in &r.items {
            *attrs.entry(&it.attribute).or_insert(0) += 1;
            *values.entry(it.normalized_value()).or_insert(0) += 1;
        }
    }
    Ok(Vocabulary {
        text: TokenMap::from_counts(text, min_count),
        attributes: TokenMap::from_counts(attrs, min_count),
        values: TokenMap::from_counts(values, min_count),
        min_count,
        attribute_stats: AttributeStats::from_records(records),
    })
}

/// Item as embedding ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemIds {
    pub attribute: usize,
    pub value: usize,
}

/// A record in id space, ready for the model.
///
/// Plan groups index `items`; index `items.len()` stands for the none-tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub items: Vec<ItemIds>,
    pub title: Option<Vec<usize>>,
    pub sentences: Vec<Vec<usize>>,
    pub plan: Vec<Vec<usize>>,
}

impl Example {
    pub fn none_index(&self) -> usize {
        self.items.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }
}

impl Vocabulary {
    pub fn encode_items(&self, items: &[InputItem]) -> Vec<ItemIds> {
        items
            .iter()
            .map(|it| ItemIds {
                attribute: self.attributes.id(&it.attribute),
                value: self.values.id(it.normalized_value()),
            })
            .collect()
    }

    pub fn encode_input(&self, input: &InputSpec) -> (Vec<ItemIds>, Option<Vec<usize>>) {
        (
            self.encode_items(&input.items),
            input.title.as_ref().map(|t| self.text.encode(t)),
        )
    }

    /// Encodes a record whose items are already in canonical order.
    pub fn encode_record(&self, r: &Record) -> Example {
        let n = r.items.len();
        let plan = r
            .reference_plan
            .groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|s| match s {
                        Slot::Item(i) => *i,
                        Slot::NoneTag => n,
                    })
                    .collect()
            })
            .collect();
        Example {
            items: self.encode_items(&r.items),
            title: r.title.as_ref().map(|t| self.text.encode(t)),
            sentences: r.sentences.iter().map(|s| self.text.encode(s)).collect(),
            plan,
        }
    }

    /// FNV-1a over every vocabulary entry; checkpoints record it to detect a
    /// mismatched vocabulary at generation time.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        self.text.fingerprint(&mut h);
        self.attributes.fingerprint(&mut h);
        self.values.fingerprint(&mut h);
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("vocabulary: {e}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, LoadOptions};
    use proptest::prelude::*;

    fn corpus() -> Vec<Record> {
        let mut lines = String::new();
        for i in 0..50 {
            lines.push_str(&format!(
                "{{\"pairs\":[[\"color\",\"red\"]],\"text\":\"the red dress {}.\"}}\n",
                if i == 0 { "rare" } else { "fits" }
            ));
        }
        parse_corpus(&lines, &LoadOptions::default()).records
    }

    #[test]
    fn frequent_token_kept_rare_token_unk() {
        let v = build_vocab(&corpus(), 2).unwrap();
        assert!(v.text.contains("the"));
        assert_ne!(v.text.id("the"), UNK);
        assert_eq!(v.text.id("rare"), UNK);
    }

    #[test]
    fn reserved_ids_present() {
        let v = build_vocab(&corpus(), 1).unwrap();
        for m in [&v.text, &v.attributes, &v.values] {
            for (i, r) in RESERVED.iter().enumerate() {
                assert_eq!(m.id(r), i);
            }
        }
        assert_eq!(v.text.token(EOS), "<eos>");
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(build_vocab(&[], 1).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let v = build_vocab(&corpus(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.json");
        v.save(&p).unwrap();
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(ids in proptest::collection::vec(0usize..9, 0..20)) {
            let v = build_vocab(&corpus(), 1).unwrap();
            let ids: Vec<usize> = ids.into_iter().map(|i| i % v.text.len()).collect();
            prop_assert_eq!(v.text.encode(&v.text.decode(&ids)), ids);
        }
    }
}
