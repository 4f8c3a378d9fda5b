//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use planwrite::corpus::{Example, ItemIds, RESERVED};
use planwrite::model::{Model, ModelConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(text_vocab: usize) -> ModelConfig {
    ModelConfig {
        text_vocab,
        attr_vocab: 9,
        value_vocab: 11,
        word_dim: 5,
        attr_dim: 3,
        value_dim: 4,
        latent_dim: 4,
        plan_hidden: 4,
        hidden: 8,
        mlp_hidden: 6,
        max_plan_steps: 6,
        max_sentence_len: 8,
        use_title: false,
        disable_global_z: false,
        disable_local_z: false,
    }
}

/// Replaces every parameter with uniform noise in `[-scale, scale]`, so
/// biases and the none vector are non-zero too.
pub fn randomize(model: &mut Model<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub fn random_model(cfg: ModelConfig, seed: u64) -> Model<f64> {
    let mut m = Model::new(cfg, seed).unwrap();
    randomize(&mut m, seed ^ 0x5eed, 0.5);
    m
}

/// Random record that fits `cfg`: items split into shuffled groups, an
/// optional trailing none-tag group, one sentence per group.
pub fn random_example<R: Rng>(rng: &mut R, cfg: &ModelConfig, n_items: usize, title: bool) -> Example {
    let reserved = RESERVED.len();
    let items: Vec<ItemIds> = (0..n_items)
        .map(|_| ItemIds {
            attribute: rng.random_range(reserved..cfg.attr_vocab),
            value: rng.random_range(reserved..cfg.value_vocab),
        })
        .collect();
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(rng);
    let mut plan = Vec::new();
    let mut rest = &order[..];
    while !rest.is_empty() {
        let k = rng.random_range(1..=rest.len().min(3));
        let mut g = rest[..k].to_vec();
        g.sort();
        plan.push(g);
        rest = &rest[k..];
    }
    if rng.random_bool(0.3) {
        plan.push(vec![n_items]);
    }
    let sentences = plan
        .iter()
        .map(|_| {
            let len = rng.random_range(1..=4);
            (0..len).map(|_| rng.random_range(reserved..cfg.text_vocab)).collect()
        })
        .collect();
    let title = title.then(|| (0..3).map(|_| rng.random_range(reserved..cfg.text_vocab)).collect());
    Example {
        items,
        title,
        sentences,
        plan,
    }
}
