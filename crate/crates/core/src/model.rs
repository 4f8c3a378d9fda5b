//! Model configuration, parameter layout and the input encoder.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{
    bi_encode, run_gru, AdditiveAttention, BiGru, Graph, GruWeights, Init, Linear, Mlp, ParamId,
    ParameterStore, Real, Var, INIT_SCALE,
};
use crate::corpus::ItemIds;
use crate::error::{Error, Result};

/// Every size the network needs. Vocabulary sizes come from the prepared
/// vocabulary; the rest from the run configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub text_vocab: usize,
    pub attr_vocab: usize,
    pub value_vocab: usize,
    pub word_dim: usize,
    pub attr_dim: usize,
    pub value_dim: usize,
    pub latent_dim: usize,
    /// Input encoder, plan decoder and plan encoder width.
    pub plan_hidden: usize,
    /// Target encoder, sentence decoder and word decoder width.
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub max_plan_steps: usize,
    pub max_sentence_len: usize,
    pub use_title: bool,
    pub disable_global_z: bool,
    pub disable_local_z: bool,
}

impl ModelConfig {
    /// Default layer sizes for the given vocabularies.
    pub fn full_size(text_vocab: usize, attr_vocab: usize, value_vocab: usize) -> Self {
        Self {
            text_vocab,
            attr_vocab,
            value_vocab,
            word_dim: 300,
            attr_dim: 30,
            value_dim: 100,
            latent_dim: 200,
            plan_hidden: 100,
            hidden: 300,
            mlp_hidden: 300,
            max_plan_steps: 12,
            max_sentence_len: 50,
            use_title: false,
            disable_global_z: false,
            disable_local_z: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("text_vocab", self.text_vocab),
            ("attr_vocab", self.attr_vocab),
            ("value_vocab", self.value_vocab),
            ("word_dim", self.word_dim),
            ("attr_dim", self.attr_dim),
            ("value_dim", self.value_dim),
            ("latent_dim", self.latent_dim),
            ("plan_hidden", self.plan_hidden),
            ("hidden", self.hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("max_plan_steps", self.max_plan_steps),
            ("max_sentence_len", self.max_sentence_len),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Width of an item representation `h_i`.
    pub fn item_dim(&self) -> usize {
        2 * self.plan_hidden
    }

    /// Width of `enc(x)`.
    pub fn enc_dim(&self) -> usize {
        self.item_dim() + if self.use_title { self.word_dim } else { 0 }
    }

    /// `key = value` lines, the format stored in checkpoints.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let v = serde_json::to_value(self).expect("config serializes");
        for (k, val) in v.as_object().expect("struct") {
            let _ = writeln!(s, "{k} = {val}");
        }
        s
    }

    pub fn from_echo(text: &str) -> Result<Self> {
        let mut map = serde_json::Map::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad config line `{line}`")))?;
            let v: serde_json::Value = serde_json::from_str(v.trim())
                .map_err(|e| Error::Checkpoint(format!("bad config value in `{line}`: {e}")))?;
            map.insert(k.trim().to_string(), v);
        }
        serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| Error::Checkpoint(format!("config echo: {e}")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PlannerWeights {
    /// `h_0^p = tanh(W [enc(x); z^p] + b)`.
    pub init: Linear,
    /// Projects `z^p` to the first input of the plan decoder.
    pub start: Linear,
    pub cell: GruWeights,
    /// Item block of `W_p`.
    pub member_item: ParamId,
    /// State block of `W_p`.
    pub member_state: ParamId,
    pub member_bias: ParamId,
    pub member_v: ParamId,
    pub stop: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct RealizerWeights {
    pub plan_encoder: GruWeights,
    /// `h_0^s = W_s [enc(x); z^p; h_T^g] + b_s`.
    pub init: Linear,
    pub sentence_cell: GruWeights,
    pub local_prior: Option<Mlp>,
    pub local_posterior: Option<Mlp>,
    pub word_init: Linear,
    pub word_cell: GruWeights,
    pub attention: AdditiveAttention,
    pub output: Linear,
    pub bow: Mlp,
}

#[derive(Clone, Copy, Debug)]
pub struct Weights {
    pub word_emb: ParamId,
    pub attr_emb: ParamId,
    pub value_emb: ParamId,
    /// Representation of the none-tag, used wherever an item's `h_i` is.
    pub none_item: ParamId,
    pub input_encoder: BiGru,
    /// Single-direction encoder of target text for the posteriors.
    pub target_encoder: GruWeights,
    pub global_prior: Option<Mlp>,
    pub global_posterior: Option<Mlp>,
    pub planner: PlannerWeights,
    pub realizer: RealizerWeights,
}

impl Weights {
    fn build<T: Real>(c: &ModelConfig, store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let u = Init::Uniform(INIT_SCALE);
        let (item, enc, lat) = (c.item_dim(), c.enc_dim(), c.latent_dim);
        let ph = c.plan_hidden;
        let hid = c.hidden;
        let word_emb = store.add("emb.word", &[c.text_vocab, c.word_dim], u, rng)?;
        let attr_emb = store.add("emb.attr", &[c.attr_vocab, c.attr_dim], u, rng)?;
        let value_emb = store.add("emb.value", &[c.value_vocab, c.value_dim], u, rng)?;
        let none_item = store.add("emb.none_item", &[item], u, rng)?;
        let input_encoder = BiGru::new(store, "input_enc", c.attr_dim + c.value_dim, ph, rng)?;
        let target_encoder = GruWeights::new(store, "target_enc", c.word_dim, hid, rng)?;
        let (global_prior, global_posterior) = if c.disable_global_z {
            (None, None)
        } else {
            (
                Some(Mlp::new(store, "zp.prior", enc, c.mlp_hidden, 2 * lat, rng)?),
                Some(Mlp::new(store, "zp.posterior", enc + hid, c.mlp_hidden, 2 * lat, rng)?),
            )
        };
        let planner = PlannerWeights {
            init: Linear::new(store, "plan.init", enc + lat, ph, rng)?,
            start: Linear::new(store, "plan.start", lat, item, rng)?,
            cell: GruWeights::new(store, "plan.cell", item, ph, rng)?,
            member_item: store.add("plan.member.w_item", &[ph, item], u, rng)?,
            member_state: store.add("plan.member.w_state", &[ph, ph], u, rng)?,
            member_bias: store.add("plan.member.b", &[ph], Init::Zeros, rng)?,
            member_v: store.add("plan.member.v", &[ph], u, rng)?,
            stop: Linear::new(store, "plan.stop", ph, 1, rng)?,
        };
        let (local_prior, local_posterior) = if c.disable_local_z {
            (None, None)
        } else {
            (
                Some(Mlp::new(store, "zs.prior", hid + item, c.mlp_hidden, 2 * lat, rng)?),
                Some(Mlp::new(store, "zs.posterior", hid + item + hid, c.mlp_hidden, 2 * lat, rng)?),
            )
        };
        let realizer = RealizerWeights {
            plan_encoder: GruWeights::new(store, "plan_enc", item, ph, rng)?,
            init: Linear::new(store, "sent.init", enc + lat + ph, hid, rng)?,
            sentence_cell: GruWeights::new(store, "sent.cell", lat + hid, hid, rng)?,
            local_prior,
            local_posterior,
            word_init: Linear::new(store, "word.init", hid + lat, hid, rng)?,
            word_cell: GruWeights::new(store, "word.cell", c.word_dim + item, hid, rng)?,
            attention: AdditiveAttention::new(store, "word.attn", item, hid, hid, rng)?,
            output: Linear::new(store, "word.out", hid + item, c.text_vocab, rng)?,
            bow: Mlp::new(store, "bow", hid + lat, c.mlp_hidden, c.text_vocab, rng)?,
        };
        Ok(Self {
            word_emb,
            attr_emb,
            value_emb,
            none_item,
            input_encoder,
            target_encoder,
            global_prior,
            global_posterior,
            planner,
            realizer,
        })
    }
}

/// Parameters plus the layout that addresses them.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f64> {
    pub config: ModelConfig,
    pub store: ParameterStore<T>,
    pub weights: Weights,
}

/// Input encoder output on a graph.
#[derive(Clone, Debug)]
pub struct EncodedInput {
    /// `h_i` for every item followed by the none-tag representation.
    pub items: Vec<Var>,
    /// `enc(x)`.
    pub enc: Var,
}

impl EncodedInput {
    pub fn num_items(&self) -> usize {
        self.items.len() - 1
    }

    pub fn none_index(&self) -> usize {
        self.items.len() - 1
    }
}

impl<T: Real> Model<T> {
    /// Fresh parameters: weights uniform in `[-0.08, 0.08]`, biases zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let weights = Weights::build(&config, &mut store, &mut rng)?;
        Ok(Self {
            config,
            store,
            weights,
        })
    }

    /// Same model in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            weights: self.weights,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Bidirectional encoding of the items, the none-tag vector and
    /// `enc(x) = [fwd_N; bwd_1; e(title)]`, where `e` is the mean title word
    /// embedding (zeros when the title is absent).
    pub fn encode_input(
        &self,
        g: &mut Graph<'_, T>,
        items: &[ItemIds],
        title: Option<&[usize]>,
    ) -> Result<EncodedInput> {
        if items.is_empty() {
            return Err(Error::Empty("input items"));
        }
        let w = &self.weights;
        let seq = items
            .iter()
            .map(|it| {
                self.check_id("attribute id", it.attribute, self.config.attr_vocab)?;
                self.check_id("value id", it.value, self.config.value_vocab)?;
                let a = g.embed(w.attr_emb, it.attribute);
                let v = g.embed(w.value_emb, it.value);
                Ok(g.concat(&[a, v]))
            })
            .collect::<Result<Vec<_>>>()?;
        let bi = bi_encode(g, &w.input_encoder, &seq)?;
        let mut reprs = bi.states;
        reprs.push(g.param(w.none_item));
        let enc = if self.config.use_title {
            let t = match title {
                Some(t) if !t.is_empty() => {
                    let embs = t
                        .iter()
                        .map(|&id| {
                            self.check_id("title token", id, self.config.text_vocab)?;
                            Ok(g.embed(w.word_emb, id))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    g.mean(&embs)
                }
                _ => g.zeros(self.config.word_dim),
            };
            g.concat(&[bi.last, t])
        } else {
            bi.last
        };
        Ok(EncodedInput { items: reprs, enc })
    }

    /// Final state of the target encoder over `tokens`, from a zero state.
    pub fn encode_target(&self, g: &mut Graph<'_, T>, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Empty("target tokens"));
        }
        let seq = self.embed_tokens(g, tokens)?;
        let h0 = g.zeros(self.config.hidden);
        let states = run_gru(g, &self.weights.target_encoder, &seq, h0)?;
        Ok(*states.last().expect("non-empty"))
    }

    pub fn embed_tokens(&self, g: &mut Graph<'_, T>, tokens: &[usize]) -> Result<Vec<Var>> {
        tokens
            .iter()
            .map(|&id| {
                self.check_id("text token", id, self.config.text_vocab)?;
                Ok(g.embed(self.weights.word_emb, id))
            })
            .collect()
    }

    /// Zero vector of latent width, used for ablated latents and boundaries.
    pub fn zero_latent(&self, g: &mut Graph<'_, T>) -> Var {
        g.zeros(self.config.latent_dim)
    }

    fn check_id(&self, what: &'static str, id: usize, size: usize) -> Result<()> {
        if id < size {
            Ok(())
        } else {
            Err(Error::Invalid(format!("{what} {id} outside vocabulary of {size}")))
        }
    }
}
