//! Text format for generation output.
//!
//! One block per sample:
//!
//! ```text
//! === input 0 sample 1
//! input: color:red, collar:round
//! plan: color:red ; collar:round ; ∅
//! a red dress .
//! the round collar is neat .
//! seed: 1234
//!
//! ```
//!
//! Replaying the seed through `generate` reproduces every latent draw of
//! the sample. Plan-only runs write TSV instead.

use std::fmt::Write as _;

pub const PLAN_TSV_HEADER: &str = "input\tsample\tseed\tplan";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub input: usize,
    pub sample: usize,
    pub items: Vec<String>,
    pub plan: String,
    /// Space-separated tokens, one entry per sentence.
    pub sentences: Vec<String>,
    pub seed: u64,
}

impl Block {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "=== input {} sample {}", self.input, self.sample);
        let _ = writeln!(s, "input: {}", self.items.join(", "));
        let _ = writeln!(s, "plan: {}", self.plan);
        for line in &self.sentences {
            let _ = writeln!(s, "{line}");
        }
        let _ = writeln!(s, "seed: {}", self.seed);
        s.push('\n');
        s
    }

    pub fn plan_row(&self) -> String {
        format!("{}\t{}\t{}\t{}\n", self.input, self.sample, self.seed, self.plan)
    }

    /// Plan groups as label lists.
    pub fn plan_groups(&self) -> Vec<Vec<String>> {
        parse_plan(&self.plan)
    }

    pub fn tokens(&self) -> Vec<String> {
        self.sentences
            .iter()
            .flat_map(|s| s.split_whitespace().map(String::from))
            .collect()
    }
}

pub fn parse_plan(plan: &str) -> Vec<Vec<String>> {
    plan.split(" ; ")
        .filter(|g| !g.trim().is_empty())
        .map(|g| g.split(',').map(|l| l.trim().to_string()).collect())
        .collect()
}

fn header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix("=== input ")?;
    let (i, k) = rest.split_once(" sample ")?;
    Some((i.trim().parse().ok()?, k.trim().parse().ok()?))
}

/// Parses a generation file; the error names the offending line.
pub fn parse_blocks(text: &str) -> Result<Vec<Block>, String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut n = 0;
    while n < lines.len() {
        if lines[n].trim().is_empty() {
            n += 1;
            continue;
        }
        let (input, sample) = header(lines[n]).ok_or_else(|| format!("line {}: expected `=== input I sample K`", n + 1))?;
        let start = n;
        n += 1;
        while n < lines.len() && header(lines[n]).is_none() {
            n += 1;
        }
        let mut body: Vec<&str> = lines[start + 1..n].to_vec();
        while body.last().is_some_and(|l| l.trim().is_empty()) {
            body.pop();
        }
        let bad = |what: &str| format!("block at line {}: {what}", start + 1);
        if body.len() < 3 {
            return Err(bad("too short"));
        }
        let items = body[0].strip_prefix("input:").ok_or_else(|| bad("missing `input:` line"))?;
        let plan = body[1].strip_prefix("plan: ").ok_or_else(|| bad("missing `plan:` line"))?;
        let seed = body[body.len() - 1]
            .strip_prefix("seed: ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("missing `seed:` line"))?;
        out.push(Block {
            input,
            sample,
            items: items
                .split(", ")
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            plan: plan.to_string(),
            sentences: body[2..body.len() - 1].iter().map(|s| s.to_string()).collect(),
            seed,
        });
    }
    Ok(out)
}
