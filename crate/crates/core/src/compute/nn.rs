//! Layers built from graph primitives: affine maps, one-hidden-layer MLPs,
//! GRU cells and additive attention.

use rand::Rng;

use crate::compute::{Graph, Init, ParamId, ParameterStore, Real, Var, INIT_SCALE};
use crate::error::{Error, Result};

fn check(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::dim(context, expected, actual))
    }
}

/// `y = W x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), &[output, input], Init::Uniform(INIT_SCALE), rng)?;
        let b = store.add(format!("{name}.b"), &[output], Init::Zeros, rng)?;
        Ok(Self { w, b, input, output })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        check("linear input", self.input, g.len(x))?;
        let w = g.param(self.w);
        let b = g.param(self.b);
        Ok(g.affine(w, x, Some(b)))
    }
}

/// One tanh hidden layer followed by a linear output layer.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng)?,
            output: Linear::new(store, &format!("{name}.out"), hidden, output, rng)?,
        })
    }

    pub fn input(&self) -> usize {
        self.hidden.input
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = self.hidden.forward(g, x)?;
        let h = g.tanh(a);
        self.output.forward(g, h)
    }
}

/// GRU weights with the gate convention
///
/// ```text
/// z  = sigmoid(W_z [x; h] + b_z)
/// r  = sigmoid(W_r [x; h] + b_r)
/// h~ = tanh(W_h [x; r * h] + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    pub w_update: ParamId,
    pub b_update: ParamId,
    pub w_reset: ParamId,
    pub b_reset: ParamId,
    pub w_cand: ParamId,
    pub b_cand: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruWeights {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let width = input + hidden;
        let u = Init::Uniform(INIT_SCALE);
        Ok(Self {
            w_update: store.add(format!("{name}.w_z"), &[hidden, width], u, rng)?,
            b_update: store.add(format!("{name}.b_z"), &[hidden], Init::Zeros, rng)?,
            w_reset: store.add(format!("{name}.w_r"), &[hidden, width], u, rng)?,
            b_reset: store.add(format!("{name}.b_r"), &[hidden], Init::Zeros, rng)?,
            w_cand: store.add(format!("{name}.w_h"), &[hidden, width], u, rng)?,
            b_cand: store.add(format!("{name}.b_h"), &[hidden], Init::Zeros, rng)?,
            input,
            hidden,
        })
    }
}

/// One GRU step.
pub fn gru_cell<T: Real>(g: &mut Graph<'_, T>, w: &GruWeights, x: Var, h: Var) -> Result<Var> {
    check("gru input", w.input, g.len(x))?;
    check("gru hidden", w.hidden, g.len(h))?;
    let xh = g.concat(&[x, h]);
    let (wz, bz) = (g.param(w.w_update), g.param(w.b_update));
    let za = g.affine(wz, xh, Some(bz));
    let z = g.sigmoid(za);
    let (wr, br) = (g.param(w.w_reset), g.param(w.b_reset));
    let ra = g.affine(wr, xh, Some(br));
    let r = g.sigmoid(ra);
    let rh = g.mul(r, h);
    let xrh = g.concat(&[x, rh]);
    let (wh, bh) = (g.param(w.w_cand), g.param(w.b_cand));
    let ca = g.affine(wh, xrh, Some(bh));
    let cand = g.tanh(ca);
    let delta = g.sub(cand, h);
    let step = g.mul(z, delta);
    Ok(g.add(h, step))
}

/// Runs a GRU left to right, returning every hidden state.
pub fn run_gru<T: Real>(
    g: &mut Graph<'_, T>,
    w: &GruWeights,
    seq: &[Var],
    h0: Var,
) -> Result<Vec<Var>> {
    let mut h = h0;
    let mut out = Vec::with_capacity(seq.len());
    for x in seq {
        h = gru_cell(g, w, *x, h)?;
        out.push(h);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct BiGru {
    pub forward: GruWeights,
    pub backward: GruWeights,
}

impl BiGru {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            forward: GruWeights::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            backward: GruWeights::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }
}

/// Result of a bidirectional pass.
#[derive(Clone, Debug)]
pub struct BiEncoding {
    /// `[fwd_i; bwd_i]` per position.
    pub states: Vec<Var>,
    /// `[fwd_N; bwd_1]`.
    pub last: Var,
    pub forward: Vec<Var>,
    /// Indexed by position, so `backward[0]` is the final right-to-left state.
    pub backward: Vec<Var>,
}

pub fn bi_encode<T: Real>(g: &mut Graph<'_, T>, w: &BiGru, seq: &[Var]) -> Result<BiEncoding> {
    if seq.is_empty() {
        return Err(Error::Empty("bi_encode sequence"));
    }
    let h0 = g.zeros(w.forward.hidden);
    let forward = run_gru(g, &w.forward, seq, h0)?;
    let h0 = g.zeros(w.backward.hidden);
    let reversed: Vec<Var> = seq.iter().rev().copied().collect();
    let mut backward = run_gru(g, &w.backward, &reversed, h0)?;
    backward.reverse();
    let states = forward
        .iter()
        .zip(&backward)
        .map(|(f, b)| g.concat(&[*f, *b]))
        .collect();
    let last = g.concat(&[*forward.last().unwrap(), backward[0]]);
    Ok(BiEncoding {
        states,
        last,
        forward,
        backward,
    })
}

/// Additive attention `score_i = v . tanh(K h_i + Q s + b)`.
#[derive(Clone, Copy, Debug)]
pub struct AdditiveAttention {
    pub key: ParamId,
    pub query: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
    pub key_dim: usize,
    pub query_dim: usize,
}

impl AdditiveAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        name: &str,
        key_dim: usize,
        query_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let u = Init::Uniform(INIT_SCALE);
        Ok(Self {
            key: store.add(format!("{name}.w_key"), &[attn_dim, key_dim], u, rng)?,
            query: store.add(format!("{name}.w_query"), &[attn_dim, query_dim], u, rng)?,
            bias: store.add(format!("{name}.b"), &[attn_dim], Init::Zeros, rng)?,
            v: store.add(format!("{name}.v"), &[attn_dim], u, rng)?,
            key_dim,
            query_dim,
        })
    }

    /// Projects the memory once per attended set.
    pub fn keys<T: Real>(&self, g: &mut Graph<'_, T>, memory: &[Var]) -> Result<Vec<Var>> {
        let k = g.param(self.key);
        memory
            .iter()
            .map(|m| {
                check("attention key", self.key_dim, g.len(*m))?;
                Ok(g.matvec(k, *m))
            })
            .collect()
    }

    /// Returns `(weights, context)`.
    pub fn attend<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        keys: &[Var],
        memory: &[Var],
        query: Var,
    ) -> Result<(Var, Var)> {
        if memory.is_empty() {
            return Err(Error::Empty("attention memory"));
        }
        check("attention query", self.query_dim, g.len(query))?;
        let (q, b, v) = (g.param(self.query), g.param(self.bias), g.param(self.v));
        let qs = g.affine(q, query, Some(b));
        let scores: Vec<Var> = keys
            .iter()
            .map(|k| {
                let s = g.add(*k, qs);
                let t = g.tanh(s);
                g.dot(v, t)
            })
            .collect();
        let stacked = g.stack(&scores);
        let weights = g.softmax(stacked);
        let ctx = g.weighted_sum(weights, memory);
        Ok((weights, ctx))
    }
}
