//! Reference-plan extraction by exact substring matching.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::segment::{detokenize, Segmenter};
use crate::corpus::InputItem;
use crate::error::{Error, Result};

/// Member of a plan group: an input item, or the tag for sentences that
/// mention no item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    Item(usize),
    NoneTag,
}

/// Per-sentence groups of item indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferencePlan {
    pub groups: Vec<Vec<Slot>>,
}

impl ReferencePlan {
    /// Rewrites item indices after the item list was permuted;
    /// `new_index[old] = new`.
    pub fn remap(&mut self, new_index: &[usize]) {
        for g in &mut self.groups {
            for s in g.iter_mut() {
                if let Slot::Item(i) = s {
                    *i = new_index[*i];
                }
            }
            g.sort();
        }
    }
}

/// Alternative surface forms per value, keyed by normalized value string.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Synonyms {
    aliases: HashMap<String, Vec<String>>,
}

impl Synonyms {
    /// Parses lines of `value<TAB>alias1<TAB>alias2...`.
    pub fn parse(text: &str, seg: &Segmenter) -> Result<Self> {
        let mut aliases: HashMap<String, Vec<String>> = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let value = detokenize(&seg.tokenize(fields.next().unwrap_or("")));
            let alts: Vec<String> = fields
                .map(|f| detokenize(&seg.tokenize(f)))
                .filter(|f| !f.is_empty())
                .collect();
            if value.is_empty() || alts.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "expected `value<TAB>alias...`".into(),
                });
            }
            aliases.entry(value).or_default().extend(alts);
        }
        Ok(Self { aliases })
    }

    pub fn load(path: &Path, seg: &Segmenter) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, seg)
    }

    pub fn aliases(&self, value: &str) -> &[String] {
        self.aliases.get(value).map_or(&[], |v| v.as_slice())
    }
}

/// Every surface form that counts as a mention of `item`.
pub fn surface_forms<'a>(item: &'a InputItem, synonyms: Option<&'a Synonyms>) -> Vec<&'a str> {
    let value = item.normalized_value();
    let mut forms = vec![value];
    if let Some(s) = synonyms {
        forms.extend(s.aliases(value).iter().map(|a| a.as_str()));
    }
    forms
}

/// True when `item`'s value or one of its aliases is a substring of `text`.
pub fn mentions(item: &InputItem, text: &str, synonyms: Option<&Synonyms>) -> bool {
    surface_forms(item, synonyms)
        .iter()
        .any(|f| !f.is_empty() && text.contains(f))
}

/// Group `t` holds every item mentioned by sentence `t`; sentences mentioning
/// nothing get the `NoneTag` singleton.
pub fn extract_reference_plan(
    items: &[InputItem],
    sentences: &[Vec<String>],
    synonyms: Option<&Synonyms>,
) -> ReferencePlan {
    let groups = sentences
        .iter()
        .map(|s| {
            let text = detokenize(s);
            let g: Vec<Slot> = items
                .iter()
                .enumerate()
                .filter(|(_, it)| mentions(it, &text, synonyms))
                .map(|(i, _)| Slot::Item(i))
                .collect();
            if g.is_empty() {
                vec![Slot::NoneTag]
            } else {
                g
            }
        })
        .collect();
    ReferencePlan { groups }
}
