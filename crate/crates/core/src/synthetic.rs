//! Templated product-description corpus with known plans, for smoke tests
//! and benchmarks.
//!
//! Four topics each own two attributes. Every topic present in a record is
//! described by one sentence, so the grouping is fixed by the input while
//! the sentence order is random (several valid plans per input). Each
//! template has a paraphrase that can be switched on for wording variety.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{ReferencePlan, Slot};

struct Topic {
    attributes: [(&'static str, [&'static str; 13]); 2],
    /// Paraphrase pairs for: both attributes, first only, second only.
    /// `{0}` is the first attribute's value, `{1}` the second's.
    templates: [[&'static str; 2]; 3],
}

const TOPICS: [Topic; 4] = [
    Topic {
        attributes: [
            ("color", ["crimson", "navy", "ivory", "olive", "amber", "teal", "maroon", "beige", "coral", "mustard", "lilac", "charcoal", "mint"]),
            ("pattern", ["striped", "floral", "plaid", "dotted", "checked", "paisley", "solid", "abstract", "geometric", "houndstooth", "camouflage", "argyle", "herringbone"]),
        ],
        templates: [
            ["it comes in {0} with a {1} print .", "the {1} design looks great in {0} ."],
            ["the {0} shade is easy to match .", "this {0} tone matches every outfit ."],
            ["a {1} print adds charm .", "the {1} motif stands out ."],
        ],
    },
    Topic {
        attributes: [
            ("material", ["cotton", "linen", "silk", "denim", "wool", "satin", "velvet", "chiffon", "leather", "tweed", "jersey", "corduroy", "cashmere"]),
            ("thickness", ["thin", "light", "medium", "thick", "heavy", "airy", "dense", "plush", "sheer", "crisp", "sturdy", "springy", "silky"]),
        ],
        templates: [
            ["made of {1} {0} for comfort .", "the {0} fabric feels {1} and soft ."],
            ["it is cut from pure {0} .", "quality {0} keeps you cool ."],
            ["the cloth is {1} to the touch .", "a {1} weave suits every season ."],
        ],
    },
    Topic {
        attributes: [
            ("collar", ["round", "vneck", "square", "mandarin", "polo", "boat", "cowl", "halter", "notch", "shawl", "peter", "turtle", "henley"]),
            ("sleeve", ["short", "long", "puff", "cap", "raglan", "flared", "bishop", "lantern", "batwing", "bell", "dolman", "kimono", "bracelet"]),
        ],
        templates: [
            ["a {0} collar pairs with {1} sleeves .", "{1} sleeves meet a {0} neckline ."],
            ["the {0} collar frames the face .", "a neat {0} neckline flatters you ."],
            ["{1} sleeves add a nice touch .", "the {1} sleeve shape is flattering ."],
        ],
    },
    Topic {
        attributes: [
            ("style", ["casual", "elegant", "vintage", "sporty", "classic", "minimal", "bohemian", "preppy", "chic", "edgy", "romantic", "relaxed", "polished"]),
            ("occasion", ["office", "party", "beach", "wedding", "travel", "dinner", "weekend", "picnic", "concert", "brunch", "festival", "holiday", "interview"]),
        ],
        templates: [
            ["a {0} look made for the {1} .", "wear this {0} piece to the {1} ."],
            ["the {0} vibe never fades .", "it has a {0} charm ."],
            ["perfect for the {1} .", "a great pick for the {1} ."],
        ],
    },
];

const NONE_SENTENCES: [&str; 2] = ["a must have for your wardrobe .", "do not miss this one ."];

/// Generator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub records: usize,
    pub min_items: usize,
    pub max_items: usize,
    /// Chance of a closing item-free sentence when there is room for one.
    pub none_rate: f64,
    /// Each sampled input is written this many times, each with its own
    /// sentence order and wording, so an input has several references.
    pub realizations: usize,
    /// Pick one of two wordings per sentence at random instead of always
    /// the first.
    pub paraphrases: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            records: 200,
            min_items: 3,
            max_items: 8,
            none_rate: 0.3,
            realizations: 2,
            paraphrases: false,
            seed: 7,
        }
    }
}

/// Corpus lines in the loader's JSON format with the plan each line was
/// written from, in the line's own item order.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub lines: Vec<String>,
    pub plans: Vec<ReferencePlan>,
}

impl SyntheticCorpus {
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

/// At most four topics with up to two items each, so item counts are
/// clamped to `1..=8`.
pub fn generate_corpus(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lo = spec.min_items.clamp(1, 8);
    let hi = spec.max_items.clamp(lo, 8);
    let mut out = SyntheticCorpus {
        lines: Vec::with_capacity(spec.records),
        plans: Vec::with_capacity(spec.records),
    };
    let copies = spec.realizations.max(1);
    while out.lines.len() < spec.records {
        let n = rng.random_range(lo..=hi);
        let input = sample_input(n, &mut rng);
        for _ in 0..copies.min(spec.records - out.lines.len()) {
            let (line, plan) = realize(&input, spec, &mut rng);
            out.lines.push(line);
            out.plans.push(plan);
        }
    }
    out
}

/// Chosen topics with their template form (0 both attributes, 1 first
/// only, 2 second only) and values.
struct SampledInput {
    topics: Vec<(usize, usize, &'static str, &'static str)>,
}

fn sample_input(n_items: usize, rng: &mut ChaCha8Rng) -> SampledInput {
    let min_topics = n_items.div_ceil(2).max(if n_items > 1 { 2 } else { 1 });
    let max_topics = n_items.min(4);
    let k = rng.random_range(min_topics.min(max_topics)..=max_topics);
    let mut topics: Vec<usize> = (0..4).collect();
    topics.shuffle(rng);
    topics.truncate(k);
    // n_items - k topics carry both attributes.
    let mut doubles = vec![false; k];
    doubles[..n_items - k].iter_mut().for_each(|d| *d = true);
    doubles.shuffle(rng);
    let topics = topics
        .into_iter()
        .zip(doubles)
        .map(|(t, both)| {
            let a = TOPICS[t].attributes[0].1.choose(rng).unwrap();
            let b = TOPICS[t].attributes[1].1.choose(rng).unwrap();
            let form = if both { 0 } else { rng.random_range(1..=2) };
            (t, form, *a, *b)
        })
        .collect();
    SampledInput { topics }
}

fn realize(input: &SampledInput, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> (String, ReferencePlan) {
    let mut order: Vec<usize> = (0..input.topics.len()).collect();
    order.shuffle(rng);
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut sentences = Vec::new();
    let mut groups = Vec::new();
    // Items are listed in topic-table order; the plan follows `order`.
    let mut slot_of = Vec::new();
    for &(t, form, a, b) in &input.topics {
        let topic = &TOPICS[t];
        let mut slots = Vec::new();
        if form != 2 {
            slots.push(Slot::Item(pairs.len()));
            pairs.push((topic.attributes[0].0.to_string(), a.to_string()));
        }
        if form != 1 {
            slots.push(Slot::Item(pairs.len()));
            pairs.push((topic.attributes[1].0.to_string(), b.to_string()));
        }
        slot_of.push(slots);
    }
    for &i in &order {
        let (t, form, a, b) = input.topics[i];
        let pick = if spec.paraphrases { rng.random_range(0..2) } else { 0 };
        let template = TOPICS[t].templates[form][pick];
        sentences.push(template.replace("{0}", a).replace("{1}", b));
        groups.push(slot_of[i].clone());
    }
    if input.topics.len() <= 3 && rng.random_bool(spec.none_rate) {
        let pick = if spec.paraphrases { rng.random_range(0..2) } else { 0 };
        sentences.push(NONE_SENTENCES[pick].to_string());
        groups.push(vec![Slot::NoneTag]);
    }
    // Present items in a shuffled order so the input order carries no plan.
    let mut perm: Vec<usize> = (0..pairs.len()).collect();
    perm.shuffle(rng);
    let mut new_index = vec![0; perm.len()];
    for (new, old) in perm.iter().enumerate() {
        new_index[*old] = new;
    }
    let shuffled: Vec<[&str; 2]> = perm.iter().map(|&i| [pairs[i].0.as_str(), pairs[i].1.as_str()]).collect();
    let mut plan = ReferencePlan { groups };
    plan.remap(&new_index);
    let line = json!({ "pairs": shuffled, "text": sentences.join(" ") }).to_string();
    (line, plan)
}
