//! Paired (attribute-value items, text) corpora.
//!
//! One record per line:
//!
//! ```text
//! {"pairs": [["color", "red"], ["collar", "round"]],
//!  "text": "A red dress. The round collar ...",
//!  "title": "optional title",
//!  "sentences": ["optional", "pre-split sentences"]}
//! ```

mod extract;
mod segment;
mod vocab;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub use extract::{extract_reference_plan, mentions, surface_forms, ReferencePlan, Slot, Synonyms};
pub use segment::{detokenize, segment_sentences, Segmenter, DEFAULT_TERMINATORS};
pub use vocab::{
    build_vocab, Example, ItemIds, TokenMap, Vocabulary, BOS, EOS, NONE, PAD, RESERVED, UNK,
};

/// One attribute-value pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputItem {
    pub attribute: String,
    pub value: String,
    /// Value after tokenization; matching and embedding use this form.
    pub value_tokens: Vec<String>,
    normalized: String,
}

impl InputItem {
    pub fn new(attribute: &str, value: &str, seg: &Segmenter) -> Result<Self> {
        let attribute = attribute.trim();
        let value_tokens = seg.tokenize(value);
        if attribute.is_empty() || value_tokens.is_empty() {
            return Err(Error::Invalid(format!(
                "empty attribute or value in pair [{attribute:?}, {value:?}]"
            )));
        }
        Ok(Self {
            attribute: attribute.to_string(),
            value: value.trim().to_string(),
            normalized: detokenize(&value_tokens),
            value_tokens,
        })
    }

    /// Space-joined value tokens.
    pub fn normalized_value(&self) -> &str {
        &self.normalized
    }

    /// `attribute:value` as used in plan strings.
    pub fn label(&self) -> String {
        format!("{}:{}", self.attribute, self.normalized)
    }
}

/// Generation input: items plus optional title.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub items: Vec<InputItem>,
    pub title: Option<Vec<String>>,
}

/// One training instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub items: Vec<InputItem>,
    pub title: Option<Vec<String>>,
    pub text: String,
    pub sentences: Vec<Vec<String>>,
    pub reference_plan: ReferencePlan,
}

impl Record {
    pub fn input(&self) -> InputSpec {
        InputSpec {
            items: self.items.clone(),
            title: self.title.clone(),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        self.sentences.iter().flatten().cloned().collect()
    }

    /// Reorders items canonically, keeping the reference plan aligned.
    pub fn canonicalize(&mut self, stats: &AttributeStats) {
        let perm = canonical_permutation(&self.items, stats);
        let mut new_index = vec![0; perm.len()];
        for (new, old) in perm.iter().enumerate() {
            new_index[*old] = new;
        }
        self.items = perm.iter().map(|&i| self.items[i].clone()).collect();
        self.reference_plan.remap(&new_index);
    }
}

/// Why a corpus line was skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LineIssue {
    Malformed(String),
    EmptyItems,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub line: usize,
    pub issue: LineIssue,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.issue {
            LineIssue::Malformed(m) => write!(f, "line {}: {m}", self.line),
            LineIssue::EmptyItems => write!(f, "line {}: record has no items", self.line),
        }
    }
}

/// Records in file order plus every skipped line.
#[derive(Clone, Debug, Default)]
pub struct CorpusLoad {
    pub records: Vec<Record>,
    pub rejected: Vec<Rejection>,
}

impl CorpusLoad {
    pub fn malformed(&self) -> impl Iterator<Item = &Rejection> {
        self.rejected
            .iter()
            .filter(|r| matches!(r.issue, LineIssue::Malformed(_)))
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions<'a> {
    pub segmenter: Segmenter,
    pub synonyms: Option<&'a Synonyms>,
}

fn field_str<'v>(obj: &'v serde_json::Map<String, Value>, key: &str) -> Result<Option<&'v str>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(format!("`{key}` must be a string")),
    }
}

fn parse_input(obj: &serde_json::Map<String, Value>, seg: &Segmenter) -> Result<InputSpec, LineIssue> {
    let pairs = obj
        .get("pairs")
        .ok_or_else(|| LineIssue::Malformed("missing `pairs`".into()))?
        .as_array()
        .ok_or_else(|| LineIssue::Malformed("`pairs` must be a list".into()))?;
    let mut items = Vec::with_capacity(pairs.len());
    for p in pairs {
        let pair = p
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| LineIssue::Malformed("each pair must be [attribute, value]".into()))?;
        let (Some(a), Some(v)) = (pair[0].as_str(), pair[1].as_str()) else {
            return Err(LineIssue::Malformed("pair entries must be strings".into()));
        };
        items.push(InputItem::new(a, v, seg).map_err(|e| LineIssue::Malformed(e.to_string()))?);
    }
    let title = field_str(obj, "title")
        .map_err(LineIssue::Malformed)?
        .map(|t| seg.tokenize(t))
        .filter(|t| !t.is_empty());
    if items.is_empty() {
        return Err(LineIssue::EmptyItems);
    }
    Ok(InputSpec { items, title })
}

fn parse_object(line: &str) -> Result<serde_json::Map<String, Value>, LineIssue> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(o)) => Ok(o),
        Ok(_) => Err(LineIssue::Malformed("expected a JSON object".into())),
        Err(e) => Err(LineIssue::Malformed(format!("invalid JSON: {e}"))),
    }
}

/// Parses one corpus line into a record with segmented sentences and an
/// extracted reference plan.
pub fn parse_record(line: &str, opts: &LoadOptions<'_>) -> Result<Record, LineIssue> {
    let obj = parse_object(line)?;
    let text = field_str(&obj, "text")
        .map_err(LineIssue::Malformed)?
        .ok_or_else(|| LineIssue::Malformed("missing `text`".into()))?
        .to_string();
    let input = parse_input(&obj, &opts.segmenter)?;
    let sentences: Vec<Vec<String>> = match obj.get("sentences") {
        None | Some(Value::Null) => opts.segmenter.segment_sentences(&text),
        Some(Value::Array(list)) => {
            let mut out = Vec::with_capacity(list.len());
            for s in list {
                let s = s
                    .as_str()
                    .ok_or_else(|| LineIssue::Malformed("`sentences` entries must be strings".into()))?;
                let toks = opts.segmenter.tokenize(s);
                if !toks.is_empty() {
                    out.push(toks);
                }
            }
            out
        }
        Some(_) => return Err(LineIssue::Malformed("`sentences` must be a list".into())),
    };
    if sentences.is_empty() {
        return Err(LineIssue::Malformed("text has no tokens".into()));
    }
    let reference_plan = extract_reference_plan(&input.items, &sentences, opts.synonyms);
    Ok(Record {
        items: input.items,
        title: input.title,
        text,
        sentences,
        reference_plan,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a corpus file. Bad lines are reported in
/// [`CorpusLoad::rejected`] rather than aborting the load.
pub fn load_corpus(path: &Path, opts: &LoadOptions<'_>) -> Result<CorpusLoad> {
    Ok(parse_corpus(&read(path)?, opts))
}

pub fn parse_corpus(text: &str, opts: &LoadOptions<'_>) -> CorpusLoad {
    let mut out = CorpusLoad::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, opts) {
            Ok(r) => out.records.push(r),
            Err(issue) => out.rejected.push(Rejection { line: n + 1, issue }),
        }
    }
    out
}

/// Loads generation inputs; `text` is optional here.
pub fn load_inputs(path: &Path, seg: &Segmenter) -> Result<Vec<InputSpec>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_object(line).and_then(|o| parse_input(&o, seg));
        match parsed {
            Ok(i) => out.push(i),
            Err(LineIssue::Malformed(m)) => return Err(Error::Parse { line: n + 1, message: m }),
            Err(LineIssue::EmptyItems) => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "record has no items".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Attribute occurrence counts over a training split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub counts: BTreeMap<String, usize>,
}

impl AttributeStats {
    pub fn from_records(records: &[Record]) -> Self {
        let mut counts = BTreeMap::new();
        for r in records {
            for it in &r.items {
                *counts.entry(it.attribute.clone()).or_insert(0) += 1;
            }
        }
        Self { counts }
    }

    pub fn frequency(&self, attribute: &str) -> usize {
        self.counts.get(attribute).copied().unwrap_or(0)
    }
}

/// Order that puts frequent (general) attributes first; ties broken by
/// attribute name, then by value. `result[new] = old`.
pub fn canonical_permutation(items: &[InputItem], stats: &AttributeStats) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ia, ib) = (&items[a], &items[b]);
        stats
            .frequency(&ib.attribute)
            .cmp(&stats.frequency(&ia.attribute))
            .then_with(|| ia.attribute.cmp(&ib.attribute))
            .then_with(|| ia.normalized_value().cmp(ib.normalized_value()))
    });
    idx
}

pub fn canonical_order(items: &[InputItem], stats: &AttributeStats) -> Vec<InputItem> {
    canonical_permutation(items, stats)
        .into_iter()
        .map(|i| items[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opts() -> LoadOptions<'static> {
        LoadOptions::default()
    }

    fn item(a: &str, v: &str) -> InputItem {
        InputItem::new(a, v, &Segmenter::default()).unwrap()
    }

    #[test]
    fn parses_pairs_and_text() {
        let r = parse_record(
            r#"{"pairs":[["color","red"],["collar","round"]],"text":"A red dress. Round collar."}"#,
            &opts(),
        )
        .unwrap();
        assert_eq!(r.items.len(), 2);
        assert_eq!(r.items[0].attribute, "color");
        assert_eq!(r.sentences.len(), 2);
        assert_eq!(r.reference_plan.groups, vec![vec![Slot::Item(0)], vec![Slot::Item(1)]]);
    }

    #[test]
    fn missing_text_is_malformed() {
        let e = parse_record(r#"{"pairs":[["color","red"]]}"#, &opts()).unwrap_err();
        assert!(matches!(e, LineIssue::Malformed(m) if m.contains("text")));
    }

    #[test]
    fn bad_line_is_reported_with_number() {
        let text = "{\"pairs\":[[\"a\",\"x\"]],\"text\":\"x.\"}\nnot json\n{\"pairs\":[[\"b\",\"y\"]],\"text\":\"y.\"}\n";
        let load = parse_corpus(text, &opts());
        assert_eq!(load.records.len(), 2);
        assert_eq!(load.rejected.len(), 1);
        assert_eq!(load.rejected[0].line, 2);
    }

    #[test]
    fn empty_items_are_rejected_not_fatal() {
        let load = parse_corpus("{\"pairs\":[],\"text\":\"x.\"}\n", &opts());
        assert!(load.records.is_empty());
        assert_eq!(load.rejected[0].issue, LineIssue::EmptyItems);
    }

    #[test]
    fn explicit_sentences_override_segmentation() {
        let r = parse_record(
            r#"{"pairs":[["a","x"]],"text":"x. y. z.","sentences":["x y","z"],"title":"Big Soup"}"#,
            &opts(),
        )
        .unwrap();
        assert_eq!(r.sentences.len(), 2);
        assert_eq!(r.title, Some(vec!["big".to_string(), "soup".to_string()]));
    }

    #[test]
    fn frequent_attribute_goes_first() {
        let stats = AttributeStats {
            counts: [("type".to_string(), 40_000), ("color".to_string(), 30_000)].into(),
        };
        let items = vec![item("color", "red"), item("type", "dress")];
        let out = canonical_order(&items, &stats);
        assert_eq!(out[0].attribute, "type");
        assert_eq!(out[1].attribute, "color");
    }

    #[test]
    fn same_attribute_sorted_by_value() {
        let stats = AttributeStats::default();
        let out = canonical_order(&[item("color", "red"), item("color", "blue")], &stats);
        assert_eq!(out[0].value, "blue");
    }

    #[test]
    fn single_item_unchanged() {
        let items = vec![item("x", "y")];
        assert_eq!(canonical_order(&items, &AttributeStats::default()), items);
    }

    #[test]
    fn canonicalize_keeps_plan_aligned() {
        let mut r = parse_record(
            r#"{"pairs":[["color","red"],["type","dress"]],"text":"A red one. A dress."}"#,
            &opts(),
        )
        .unwrap();
        let stats = AttributeStats {
            counts: [("type".to_string(), 5), ("color".to_string(), 1)].into(),
        };
        r.canonicalize(&stats);
        assert_eq!(r.items[0].attribute, "type");
        assert_eq!(r.reference_plan.groups, vec![vec![Slot::Item(1)], vec![Slot::Item(0)]]);
    }

    proptest! {
        #[test]
        fn canonical_order_is_permutation(
            pairs in proptest::collection::vec(("[a-c]", "[x-z]{1,2}"), 1..8),
            freq in proptest::collection::vec(0usize..5, 3),
        ) {
            let items: Vec<InputItem> = pairs.iter().map(|(a, v)| item(a, v)).collect();
            let stats = AttributeStats {
                counts: ["a", "b", "c"].iter().zip(&freq).map(|(k, f)| (k.to_string(), *f)).collect(),
            };
            let out = canonical_order(&items, &stats);
            let mut a: Vec<String> = items.iter().map(|i| i.label()).collect();
            let mut b: Vec<String> = out.iter().map(|i| i.label()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            for w in out.windows(2) {
                prop_assert!(stats.frequency(&w[0].attribute) >= stats.frequency(&w[1].attribute));
            }
        }
    }
}
