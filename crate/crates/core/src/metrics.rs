//! Automatic metrics: corpus BLEU-4, item coverage, length, distinct-n,
//! repetition-n, self-BLEU and distinct-plan counts.
//!
//! Texts are token lists.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, mentions, InputItem, Synonyms};
use crate::error::{Error, Result};

/// Separator token between groups in serialized plans.
pub const PLAN_SEPARATOR: &str = "<sep>";

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 with uniform weights.
///
/// Clipped n-gram counts are pooled over the corpus (clip = max count in any
/// reference of that hypothesis). The effective reference length per
/// hypothesis is the closest reference length, the shorter on ties. When no
/// n-gram of order `n >= 2` matches, its precision becomes
/// `1 / (candidates + 1)`; no unigram match gives 0.
pub fn corpus_bleu4<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<Vec<S>>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Empty("hypotheses"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::dim("bleu references", hypotheses.len(), references.len()));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Empty("reference set"));
        }
        hyp_len += h.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .expect("non-empty");
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &hc {
                matched[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if matched[n] == 0 {
            1.0 / (total[n] as f64 + 1.0)
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * (log_sum / 4.0).exp())
}

/// Fraction of `items` whose value (or an alias) occurs in the detokenized
/// text.
pub fn coverage<S: AsRef<str>>(items: &[InputItem], text: &[S], synonyms: Option<&Synonyms>) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("coverage items"));
    }
    let t = detokenize(text);
    let hit = items.iter().filter(|it| mentions(it, &t, synonyms)).count();
    Ok(hit as f64 / items.len() as f64)
}

/// Mean per-record coverage.
pub fn corpus_coverage<S: AsRef<str>>(
    items: &[Vec<InputItem>],
    texts: &[Vec<S>],
    synonyms: Option<&Synonyms>,
) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Empty("coverage texts"));
    }
    if items.len() != texts.len() {
        return Err(Error::dim("coverage records", texts.len(), items.len()));
    }
    let mut sum = 0.0;
    for (i, t) in items.iter().zip(texts) {
        sum += coverage(i, t, synonyms)?;
    }
    Ok(sum / texts.len() as f64)
}

pub fn avg_length<S>(texts: &[Vec<S>]) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Empty("texts"));
    }
    Ok(texts.iter().map(|t| t.len()).sum::<usize>() as f64 / texts.len() as f64)
}

/// Distinct n-grams over all texts divided by total n-grams.
pub fn distinct_n<S: AsRef<str>>(texts: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for t in texts {
        for (g, c) in ngram_counts(t, n) {
            total += c;
            seen.insert(g);
        }
    }
    if total == 0 {
        return Err(Error::Empty("n-grams for distinct-n"));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Fraction of texts containing some n-gram at least twice.
pub fn repetition_n<S: AsRef<str>>(texts: &[Vec<S>], n: usize) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Empty("texts"));
    }
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    let rep = texts
        .iter()
        .filter(|t| ngram_counts(t, n).values().any(|c| *c >= 2))
        .count();
    Ok(rep as f64 / texts.len() as f64)
}

/// Mean BLEU-4 of each text against all the others.
pub fn self_bleu<S: AsRef<str> + Clone>(texts: &[Vec<S>]) -> Result<f64> {
    if texts.len() < 2 {
        return Err(Error::Invalid(format!("self-BLEU needs at least 2 texts, got {}", texts.len())));
    }
    let mut sum = 0.0;
    for i in 0..texts.len() {
        let others: Vec<Vec<S>> = texts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, t)| t.clone())
            .collect();
        sum += corpus_bleu4(std::slice::from_ref(&texts[i]), &[others])?;
    }
    Ok(sum / texts.len() as f64)
}

/// Plan as a token sequence: each group's labels sorted, then the
/// separator.
pub fn serialize_plan<S: AsRef<str>>(groups: &[Vec<S>]) -> Vec<String> {
    let mut out = Vec::new();
    for g in groups {
        let mut toks: Vec<String> = g.iter().map(|s| s.as_ref().to_string()).collect();
        toks.sort();
        out.extend(toks);
        out.push(PLAN_SEPARATOR.to_string());
    }
    out
}

/// Number of distinct plans: equal when the group sequences match with
/// groups compared as sets.
pub fn distinct_plans<I: Ord + Clone + std::hash::Hash>(plans: &[Vec<Vec<I>>]) -> usize {
    let canon: HashSet<Vec<Vec<I>>> = plans
        .iter()
        .map(|p| {
            p.iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.sort();
                    g.dedup();
                    g
                })
                .collect()
        })
        .collect();
    canon.len()
}

/// One row of the evaluation table, plus the optional per-input diversity
/// measurements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub coverage: f64,
    pub avg_length: f64,
    pub distinct4: f64,
    pub repetition4: f64,
    pub self_bleu: Option<f64>,
    pub plan_self_bleu: Option<f64>,
    /// `(item count, mean distinct plans, inputs)` per item count.
    pub distinct_plan_counts: Option<Vec<(usize, f64, usize)>>,
}

impl MetricReport {
    pub fn tsv(&self) -> String {
        let mut s = String::from("BLEU\tCoverage\tLength\tDistinct-4\tRepetition-4");
        if self.self_bleu.is_some() {
            s.push_str("\tSelf-BLEU\tPlan-Self-BLEU");
        }
        let _ = write!(
            s,
            "\n{:.4}\t{:.4}\t{:.2}\t{:.4}\t{:.4}",
            self.bleu4, self.coverage, self.avg_length, self.distinct4, self.repetition4
        );
        if let Some(sb) = self.self_bleu {
            let _ = write!(s, "\t{sb:.4}\t{:.4}", self.plan_self_bleu.unwrap_or(f64::NAN));
        }
        s.push('\n');
        s
    }

    pub fn text_block(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "BLEU          {:.4}", self.bleu4);
        let _ = writeln!(s, "Coverage      {:.4}", self.coverage);
        let _ = writeln!(s, "Length        {:.2}", self.avg_length);
        let _ = writeln!(s, "Distinct-4    {:.4}", self.distinct4);
        let _ = writeln!(s, "Repetition-4  {:.4}", self.repetition4);
        if let Some(v) = self.self_bleu {
            let _ = writeln!(s, "Self-BLEU     {v:.4}");
        }
        if let Some(v) = self.plan_self_bleu {
            let _ = writeln!(s, "Plan-Self-BLEU {v:.4}");
        }
        if let Some(rows) = &self.distinct_plan_counts {
            let _ = writeln!(s, "Distinct plans by item count:");
            for (items, mean, inputs) in rows {
                let _ = writeln!(s, "  {items}\t{mean:.2}\t({inputs} inputs)");
            }
        }
        s
    }
}

/// Table metrics for generated texts against single references.
pub fn evaluate<S: AsRef<str> + Clone>(
    outputs: &[Vec<S>],
    references: &[Vec<S>],
    items: &[Vec<InputItem>],
    synonyms: Option<&Synonyms>,
) -> Result<MetricReport> {
    if outputs.len() != references.len() {
        return Err(Error::dim("references", outputs.len(), references.len()));
    }
    let refs: Vec<Vec<Vec<S>>> = references.iter().map(|r| vec![r.clone()]).collect();
    Ok(MetricReport {
        bleu4: corpus_bleu4(outputs, &refs)?,
        coverage: corpus_coverage(items, outputs, synonyms)?,
        avg_length: avg_length(outputs)?,
        distinct4: distinct_n(outputs, 4)?,
        repetition4: repetition_n(outputs, 4)?,
        ..MetricReport::default()
    })
}
