//! Hierarchical realization: plan encoder, sentence decoder with chained
//! local latents, and an attentive word decoder.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{gru_cell, run_gru, softmax_vec, Graph, Mlp, Real, Var};
use crate::corpus::{ItemIds, BOS, EOS};
use crate::error::{Error, Result};
use crate::latent::{gaussian_from, sample, DiagonalGaussian, LatentSample, LatentSource};
use crate::model::{EncodedInput, Model, RealizerWeights};
use crate::planner::{self, Plan};

/// Word choice during decoding. Latents are drawn from their priors in
/// both modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    /// Argmax, lowest id on ties.
    Greedy,
    /// Draw from the softmax.
    Sample,
}

/// Recorded latent draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDraw {
    pub z: Vec<f64>,
    pub eps: Vec<f64>,
    pub source: LatentSource,
}

impl LatentDraw {
    fn record<T: Real>(g: &Graph<'_, T>, s: &LatentSample) -> Self {
        Self {
            z: g.value_f64(s.z),
            eps: s.eps.clone(),
            source: s.source,
        }
    }
}

/// `z^p` and every `z_t^s` used for one output; `None` where ablated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatentTrace {
    pub global: Option<LatentDraw>,
    pub local: Vec<Option<LatentDraw>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub plan: Plan,
    /// One token-id list per plan group, without the end marker.
    pub sentences: Vec<Vec<usize>>,
    pub latent_trace: LatentTrace,
}

/// Recurrent pass over `bow(g_1) .. bow(g_T)`; returns `h_T^g`.
pub fn encode_plan<T: Real>(g: &mut Graph<'_, T>, w: &RealizerWeights, bows: &[Var]) -> Result<Var> {
    if bows.is_empty() {
        return Err(Error::Empty("plan to encode"));
    }
    let h0 = g.zeros(w.plan_encoder.hidden);
    let states = run_gru(g, &w.plan_encoder, bows, h0)?;
    Ok(*states.last().expect("non-empty"))
}

/// `h_0^s = W_s [enc(x); z^p; h_T^g] + b_s`, no nonlinearity.
pub fn init_sentence_state<T: Real>(
    g: &mut Graph<'_, T>,
    w: &RealizerWeights,
    enc: Var,
    z_p: Var,
    plan_encoding: Var,
) -> Result<Var> {
    let x = g.concat(&[enc, z_p, plan_encoding]);
    w.init.forward(g, x)
}

/// `h_t^s = GRU([z_{t-1}^s; h_{t-1}^w], h_{t-1}^s)`.
pub fn sentence_step<T: Real>(
    g: &mut Graph<'_, T>,
    w: &RealizerWeights,
    state: Var,
    prev_z: Var,
    prev_word_final: Var,
) -> Result<Var> {
    let x = g.concat(&[prev_z, prev_word_final]);
    gru_cell(g, &w.sentence_cell, x, state)
}

/// Local prior `p(z_t^s | h_t^s, g_t)`; `None` when local latents are off.
pub fn local_prior<T: Real>(
    g: &mut Graph<'_, T>,
    w: &RealizerWeights,
    h_s: Var,
    bow: Var,
) -> Result<Option<DiagonalGaussian>> {
    w.local_prior.as_ref().map(|m| gaussian_from(g, m, &[h_s, bow])).transpose()
}

/// Local posterior `q(z_t^s | h_t^s, g_t, s_t)` from the encoded sentence.
pub fn local_posterior<T: Real>(
    g: &mut Graph<'_, T>,
    w: &RealizerWeights,
    h_s: Var,
    bow: Var,
    sentence_enc: Var,
) -> Result<Option<DiagonalGaussian>> {
    w.local_posterior
        .as_ref()
        .map(|m| gaussian_from(g, m, &[h_s, bow, sentence_enc]))
        .transpose()
}

/// Word-level decoder bound to one sentence's group.
pub struct WordDecoder<'m, T: Real> {
    model: &'m Model<T>,
    memory: Vec<Var>,
    keys: Vec<Var>,
}

/// One word-decoder step.
pub struct WordStep {
    pub state: Var,
    pub logits: Var,
    pub attention: Var,
}

impl<'m, T: Real> WordDecoder<'m, T> {
    /// `memory` holds the representations of the group's items.
    pub fn new(g: &mut Graph<'_, T>, model: &'m Model<T>, memory: Vec<Var>) -> Result<Self> {
        if memory.is_empty() {
            return Err(Error::Empty("sentence group"));
        }
        let keys = model.weights.realizer.attention.keys(g, &memory)?;
        Ok(Self { model, memory, keys })
    }

    /// `tanh(W [h_t^s; z_t^s] + b)`.
    pub fn initial_state(&self, g: &mut Graph<'_, T>, h_s: Var, z_s: Var) -> Result<Var> {
        let x = g.concat(&[h_s, z_s]);
        let a = self.model.weights.realizer.word_init.forward(g, x)?;
        Ok(g.tanh(a))
    }

    /// Attends with the previous state, consumes `prev` and scores the next
    /// token from `[h; context]`.
    pub fn step(&self, g: &mut Graph<'_, T>, state: Var, prev: usize) -> Result<WordStep> {
        let w = &self.model.weights.realizer;
        let (attention, ctx) = w.attention.attend(g, &self.keys, &self.memory, state)?;
        let e = self.model.embed_tokens(g, &[prev])?[0];
        let x = g.concat(&[e, ctx]);
        let state = gru_cell(g, &w.word_cell, x, state)?;
        let out = g.concat(&[state, ctx]);
        let logits = w.output.forward(g, out)?;
        Ok(WordStep {
            state,
            logits,
            attention,
        })
    }

    /// Summed token NLL of `tokens` followed by the end marker, and the
    /// final word state.
    pub fn teacher_forced(&self, g: &mut Graph<'_, T>, h_s: Var, z_s: Var, tokens: &[usize]) -> Result<(Var, Var)> {
        let mut state = self.initial_state(g, h_s, z_s)?;
        let mut losses = Vec::with_capacity(tokens.len() + 1);
        let mut prev = BOS;
        for &target in tokens.iter().chain(std::iter::once(&EOS)) {
            let s = self.step(g, state, prev)?;
            losses.push(g.cross_entropy(s.logits, &[target]));
            state = s.state;
            prev = target;
        }
        Ok((g.add_n(&losses), state))
    }

    /// Free-running decode until the end marker or `max_len` tokens.
    pub fn decode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        h_s: Var,
        z_s: Var,
        mode: DecodeMode,
        max_len: usize,
        rng: &mut R,
    ) -> Result<DecodedSentence> {
        let mut state = self.initial_state(g, h_s, z_s)?;
        let mut tokens = Vec::new();
        let mut attention = Vec::new();
        let mut prev = BOS;
        while tokens.len() < max_len {
            let s = self.step(g, state, prev)?;
            state = s.state;
            attention.push(g.value_f64(s.attention));
            let logits = g.value_f64(s.logits);
            let next = match mode {
                DecodeMode::Greedy => argmax(&logits),
                DecodeMode::Sample => {
                    let probs = softmax_vec(&logits);
                    WeightedIndex::new(&probs)
                        .map_err(|e| Error::Invalid(format!("word distribution: {e}")))?
                        .sample(rng)
                }
            };
            tokens.push(next);
            if next == EOS {
                break;
            }
            prev = next;
        }
        Ok(DecodedSentence {
            tokens,
            final_state: state,
            attention,
        })
    }
}

/// Free-running decoder output; `tokens` ends with the end marker unless
/// the length cap was hit.
pub struct DecodedSentence {
    pub tokens: Vec<usize>,
    pub final_state: Var,
    pub attention: Vec<Vec<f64>>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Decodes one sentence for `group` (indices into `input.items`).
#[allow(clippy::too_many_arguments)]
pub fn decode_sentence<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    model: &Model<T>,
    input: &EncodedInput,
    group: &[usize],
    h_s: Var,
    z_s: Var,
    mode: DecodeMode,
    max_len: usize,
    rng: &mut R,
) -> Result<DecodedSentence> {
    let memory = group_memory(input, group)?;
    WordDecoder::new(g, model, memory)?.decode(g, h_s, z_s, mode, max_len, rng)
}

pub(crate) fn group_memory(input: &EncodedInput, group: &[usize]) -> Result<Vec<Var>> {
    group
        .iter()
        .map(|&i| {
            input
                .items
                .get(i)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("group index {i} out of {} items", input.items.len())))
        })
        .collect()
}

/// Bag-of-words loss: one logit vector from `MLP([h_t^s; z_t^s])`, summed
/// cross-entropy over the sentence's words.
pub fn bow_loss<T: Real>(g: &mut Graph<'_, T>, mlp: &Mlp, h_s: Var, z_s: Var, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Empty("sentence for bag-of-words loss"));
    }
    let x = g.concat(&[h_s, z_s]);
    let logits = mlp.forward(g, x)?;
    let v = g.len(logits);
    if let Some(bad) = tokens.iter().find(|t| **t >= v) {
        return Err(Error::Invalid(format!("token {bad} outside vocabulary of {v}")));
    }
    Ok(g.cross_entropy(logits, tokens))
}

/// Encodes the input and draws `z^p` from its prior; returns the zero vector
/// when the global latent is ablated.
fn prior_global<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    model: &Model<T>,
    input: &EncodedInput,
    rng: &mut R,
) -> Result<(Var, Option<LatentDraw>)> {
    match &model.weights.global_prior {
        Some(mlp) => {
            let d = gaussian_from(g, mlp, &[input.enc])?;
            let s = sample(g, &d, LatentSource::Prior, rng)?;
            Ok((s.z, Some(LatentDraw::record(g, &s))))
        }
        None => Ok((model.zero_latent(g), None)),
    }
}

/// Samples a plan only.
pub fn generate_plan<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    items: &[ItemIds],
    title: Option<&[usize]>,
    rng: &mut R,
) -> Result<(Plan, LatentTrace)> {
    let mut g = Graph::new(&model.store);
    let input = model.encode_input(&mut g, items, title)?;
    let (z_p, global) = prior_global(&mut g, model, &input, rng)?;
    let plan = planner::decode_plan(&mut g, &model.weights.planner, &input, z_p, model.config.max_plan_steps)?;
    Ok((plan, LatentTrace { global, local: Vec::new() }))
}

/// Full pipeline: encode, sample `z^p`, plan, encode the plan, then for each
/// group step the sentence decoder, sample `z_t^s` and realize the words.
pub fn generate<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    items: &[ItemIds],
    title: Option<&[usize]>,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<GenerationOutput> {
    let w = &model.weights.realizer;
    let mut g = Graph::new(&model.store);
    let input = model.encode_input(&mut g, items, title)?;
    let (z_p, global) = prior_global(&mut g, model, &input, rng)?;
    let plan = planner::decode_plan(&mut g, &model.weights.planner, &input, z_p, model.config.max_plan_steps)?;
    let bows = plan
        .groups
        .iter()
        .map(|grp| planner::bow(&mut g, &input.items, grp))
        .collect::<Result<Vec<_>>>()?;
    let h_g = encode_plan(&mut g, w, &bows)?;
    let mut h_s = init_sentence_state(&mut g, w, input.enc, z_p, h_g)?;
    let mut prev_z = model.zero_latent(&mut g);
    let mut prev_word = g.zeros(model.config.hidden);
    let mut sentences = Vec::with_capacity(plan.len());
    let mut local = Vec::with_capacity(plan.len());
    for (group, b) in plan.groups.iter().zip(&bows) {
        h_s = sentence_step(&mut g, w, h_s, prev_z, prev_word)?;
        let z_s = match local_prior(&mut g, w, h_s, *b)? {
            Some(d) => {
                let s = sample(&mut g, &d, LatentSource::Prior, rng)?;
                local.push(Some(LatentDraw::record(&g, &s)));
                s.z
            }
            None => {
                local.push(None);
                model.zero_latent(&mut g)
            }
        };
        let out = decode_sentence(&mut g, model, &input, group, h_s, z_s, mode, model.config.max_sentence_len, rng)?;
        let mut tokens = out.tokens;
        if tokens.last() == Some(&EOS) {
            tokens.pop();
        }
        sentences.push(tokens);
        prev_z = z_s;
        prev_word = out.final_state;
    }
    Ok(GenerationOutput {
        plan,
        sentences,
        latent_trace: LatentTrace { global, local },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            text_vocab: 10,
            attr_vocab: 6,
            value_vocab: 6,
            word_dim: 3,
            attr_dim: 2,
            value_dim: 2,
            latent_dim: 2,
            plan_hidden: 2,
            hidden: 3,
            mlp_hidden: 3,
            max_plan_steps: 3,
            max_sentence_len: 5,
            use_title: false,
            disable_global_z: false,
            disable_local_z: false,
        }
    }

    fn items() -> Vec<ItemIds> {
        vec![
            ItemIds { attribute: 5, value: 5 },
            ItemIds { attribute: 5, value: 4 },
            ItemIds { attribute: 4, value: 5 },
        ]
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn eos_rigged_output_gives_length_one() {
        let mut m = Model::<f64>::new(config(), 4).unwrap();
        let out = m.weights.realizer.output;
        m.store.get_mut(out.w).value.fill(0.0);
        let b = m.store.get_mut(out.b);
        b.value.fill(0.0);
        b.value.data_mut()[EOS] = 50.0;
        let mut g = Graph::new(&m.store);
        let input = m.encode_input(&mut g, &items(), None).unwrap();
        let h = g.zeros(3);
        let z = g.zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = decode_sentence(&mut g, &m, &input, &[0], h, z, DecodeMode::Greedy, 5, &mut rng).unwrap();
        assert_eq!(d.tokens, vec![EOS]);
    }

    #[test]
    fn greedy_decode_is_repeatable_and_attention_normalized() {
        let m = Model::<f64>::new(config(), 5).unwrap();
        let mut g = Graph::new(&m.store);
        let input = m.encode_input(&mut g, &items(), None).unwrap();
        let h = g.constant(vec![0.3, -0.2, 0.5]);
        let z = g.constant(vec![1.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = decode_sentence(&mut g, &m, &input, &[0, 1, 2], h, z, DecodeMode::Greedy, 5, &mut rng).unwrap();
        let b = decode_sentence(&mut g, &m, &input, &[0, 1, 2], h, z, DecodeMode::Greedy, 5, &mut rng).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert!(a.tokens.len() <= 5);
        for w in &a.attention {
            assert_eq!(w.len(), 3);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_sentence_state_is_linear() {
        let m = Model::<f64>::new(config(), 6).unwrap();
        let w = &m.weights.realizer;
        let mut g = Graph::new(&m.store);
        let (e, z, p) = (g.constant(vec![0.1, 0.2, -0.3, 0.4]), g.constant(vec![0.5, -0.6]), g.constant(vec![0.7, 0.8]));
        let (e2, z2, p2) = (g.scale(e, 2.0), g.scale(z, 2.0), g.scale(p, 2.0));
        let h1 = init_sentence_state(&mut g, w, e, z, p).unwrap();
        let h2 = init_sentence_state(&mut g, w, e2, z2, p2).unwrap();
        for (a, b) in g.value(h1).iter().zip(g.value(h2)) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn plan_encoding_is_order_sensitive() {
        let m = Model::<f64>::new(config(), 7).unwrap();
        let w = &m.weights.realizer;
        let mut g = Graph::new(&m.store);
        let a = g.constant(vec![1.0, 0.0, 0.5, -0.5]);
        let b = g.constant(vec![0.0, 1.0, -0.5, 0.5]);
        let ab = encode_plan(&mut g, w, &[a, b]).unwrap();
        let ba = encode_plan(&mut g, w, &[b, a]).unwrap();
        assert_ne!(g.value(ab), g.value(ba));
        assert!(encode_plan(&mut g, w, &[]).is_err());
    }

    #[test]
    fn bow_loss_ignores_order() {
        let m = Model::<f64>::new(config(), 8).unwrap();
        let mut g = Graph::new(&m.store);
        let h = g.constant(vec![0.3, -0.2, 0.5]);
        let z = g.constant(vec![1.0, -1.0]);
        let l1 = bow_loss(&mut g, &m.weights.realizer.bow, h, z, &[5, 6, 7]).unwrap();
        let l2 = bow_loss(&mut g, &m.weights.realizer.bow, h, z, &[7, 5, 6]).unwrap();
        assert!((g.scalar(l1) - g.scalar(l2)).abs() < 1e-12);
        assert!(bow_loss(&mut g, &m.weights.realizer.bow, h, z, &[]).is_err());
    }

    #[test]
    fn generation_is_seed_deterministic_and_prior_sourced() {
        let m = Model::<f64>::new(config(), 9).unwrap();
        let run = |seed| generate(&m, &items(), None, DecodeMode::Sample, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = run(1);
        assert_eq!(a, run(1));
        assert_eq!(a.sentences.len(), a.plan.len());
        assert_eq!(a.latent_trace.local.len(), a.plan.len());
        assert!(a.plan.len() <= 3);
        assert_eq!(a.latent_trace.global.as_ref().unwrap().source, LatentSource::Prior);
        for d in &a.latent_trace.local {
            assert_eq!(d.as_ref().unwrap().source, LatentSource::Prior);
        }
    }

    #[test]
    fn ablated_model_still_generates() {
        let mut c = config();
        c.disable_global_z = true;
        c.disable_local_z = true;
        let m = Model::<f64>::new(c, 9).unwrap();
        let a = generate(&m, &items(), None, DecodeMode::Greedy, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate(&m, &items(), None, DecodeMode::Greedy, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(a.latent_trace.global.is_none());
        assert!(a.latent_trace.local.iter().all(|d| d.is_none()));
        assert_eq!(a.plan.groups, b.plan.groups);
        assert_eq!(a.sentences, b.sentences);
    }
}
