//! Tape-based reverse-mode differentiation over dense vectors.
//!
//! A [`Graph`] borrows a [`ParameterStore`] immutably, records every
//! operation of one forward pass, and [`Graph::backward`] returns the
//! parameter gradients of a scalar node. Parameters are never copied onto
//! the tape; matrix-vector products read them straight from the store and
//! write their gradients straight into the [`Gradients`] buffer.
//!
//! Shape mismatches inside primitive ops are programming errors and panic.
//! The layer-level helpers in [`crate::compute::nn`] validate widths and
//! return [`crate::Error::Dimension`] instead.

use crate::compute::{Gradients, ParamId, ParameterStore, Real};
use crate::error::{Error, Result};

/// Node handle on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Probabilities are floored at this value inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Embed(ParamId, usize),
    Affine { w: Var, x: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    Dot(Var, Var),
    AddN(Vec<Var>),
    Mean(Vec<Var>),
    Stack(Vec<Var>),
    WeightedSum(Var, Vec<Var>),
    Softmax(Var),
    CrossEntropy(Var, Vec<usize>),
    BceWithLogits(Var, Vec<bool>),
    GaussianKl([Var; 4]),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Vec<T>,
    rows: usize,
    cols: usize,
}

pub struct Graph<'s, T> {
    store: &'s ParameterStore<T>,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(sigmoid(x))` without overflow.
#[inline]
fn log_sigmoid<T: Real>(x: T) -> T {
    let zero = T::zero();
    -((-x).max(zero) + (T::one() + (-x.abs()).exp()).ln())
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s ParameterStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(1024),
            consumed: false,
        }
    }

    pub fn store(&self) -> &'s ParameterStore<T> {
        self.store
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op<T>, value: Vec<T>) -> Var {
        let rows = value.len();
        self.nodes.push(Node {
            op,
            value,
            rows,
            cols: 1,
        });
        Var(self.nodes.len() - 1)
    }

    /// Values of a node (parameter values are read from the store).
    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.value(id).data(),
            _ => &node.value,
        }
    }

    pub fn value_f64(&self, v: Var) -> Vec<f64> {
        self.value(v).iter().map(|x| x.as_f64()).collect()
    }

    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a node of length {}", val.len());
        val[0]
    }

    pub fn len(&self, v: Var) -> usize {
        let n = &self.nodes[v.0];
        n.rows * n.cols
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn constant(&mut self, value: Vec<T>) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![T::zero(); n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let arr = self.store.value(id);
        let (rows, cols) = (arr.rows(), arr.cols());
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Vec::new(),
            rows,
            cols,
        });
        Var(self.nodes.len() - 1)
    }

    /// Row `row` of a matrix parameter, e.g. an embedding lookup.
    pub fn embed(&mut self, id: ParamId, row: usize) -> Var {
        let arr = self.store.value(id);
        let cols = arr.cols();
        assert!(row < arr.rows(), "embedding row {row} out of range");
        let value = arr.data()[row * cols..(row + 1) * cols].to_vec();
        self.push(Op::Embed(id, row), value)
    }

    /// `w * x + b`, with `w` a matrix node and `b` optional.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let (rows, cols) = self.dims(w);
        assert_eq!(self.len(x), cols, "affine: input width");
        if let Some(b) = b {
            assert_eq!(self.len(b), rows, "affine: bias width");
        }
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out: Vec<T> = match b {
            Some(b) => self.value(b).to_vec(),
            None => vec![T::zero(); rows],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * cols..(i + 1) * cols];
            let mut acc = T::zero();
            for (a, c) in row.iter().zip(xv) {
                acc += *a * *c;
            }
            *o += acc;
        }
        self.push(Op::Affine { w, x, b }, out)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        self.affine(w, x, None)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise op length mismatch");
        av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).iter().map(|x| *x * c).collect();
        self.push(Op::Scale(a, c), v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::with_capacity(parts.iter().map(|p| self.len(*p)).sum());
        for p in parts {
            v.extend_from_slice(self.value(*p));
        }
        self.push(Op::Concat(parts.to_vec()), v)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a)[start..start + len].to_vec();
        self.push(Op::Slice(a, start), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| sigmoid(*x)).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(Op::Sum(a), vec![s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = self.zip_with(a, b, |x, y| x * y).into_iter().sum();
        self.push(Op::Dot(a, b), vec![s])
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "add_n of nothing");
        let mut v = self.value(parts[0]).to_vec();
        for p in &parts[1..] {
            let pv = self.value(*p);
            assert_eq!(pv.len(), v.len(), "add_n length mismatch");
            for (a, b) in v.iter_mut().zip(pv) {
                *a += *b;
            }
        }
        self.push(Op::AddN(parts.to_vec()), v)
    }

    /// Average pooling of equally shaped vectors.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean of nothing");
        let mut v = vec![T::zero(); self.len(parts[0])];
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.len(), v.len(), "mean length mismatch");
            for (a, b) in v.iter_mut().zip(pv) {
                *a += *b;
            }
        }
        let k = T::lit(parts.len() as f64);
        v.iter_mut().for_each(|a| *a /= k);
        self.push(Op::Mean(parts.to_vec()), v)
    }

    /// Collects scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let v = scalars.iter().map(|s| self.scalar(*s)).collect();
        self.push(Op::Stack(scalars.to_vec()), v)
    }

    /// `sum_i weights[i] * vectors[i]`.
    pub fn weighted_sum(&mut self, weights: Var, vectors: &[Var]) -> Var {
        assert_eq!(self.len(weights), vectors.len(), "weighted_sum arity");
        let d = self.len(vectors[0]);
        let mut out = vec![T::zero(); d];
        let w = self.value(weights).to_vec();
        for (wi, v) in w.iter().zip(vectors) {
            let vv = self.value(*v);
            assert_eq!(vv.len(), d, "weighted_sum width");
            for (o, x) in out.iter_mut().zip(vv) {
                *o += *wi * *x;
            }
        }
        self.push(Op::WeightedSum(weights, vectors.to_vec()), out)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_vec(self.value(a));
        self.push(Op::Softmax(a), v)
    }

    /// `sum_k -log softmax(logits)[targets[k]]`, each log floored at
    /// `ln(LOG_FLOOR)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lsm = log_softmax_vec(self.value(logits));
        let floor = T::lit(LOG_FLOOR.ln());
        let loss = targets.iter().map(|&t| -(lsm[t].max(floor))).sum();
        self.push(Op::CrossEntropy(logits, targets.to_vec()), vec![loss])
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// each log floored at `ln(LOG_FLOOR)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[bool]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len(), "bce_with_logits arity");
        let floor = T::lit(LOG_FLOOR.ln());
        let loss = lv
            .iter()
            .zip(targets)
            .map(|(x, &y)| {
                let ls = if y { log_sigmoid(*x) } else { log_sigmoid(-*x) };
                -(ls.max(floor))
            })
            .sum();
        self.push(Op::BceWithLogits(logits, targets.to_vec()), vec![loss])
    }

    /// Closed-form `KL(N(mu_q, exp(lv_q)) || N(mu_p, exp(lv_p)))` summed over
    /// dimensions.
    pub fn gaussian_kl(&mut self, mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var) -> Var {
        let n = self.len(mu_q);
        for v in [lv_q, mu_p, lv_p] {
            assert_eq!(self.len(v), n, "gaussian_kl width");
        }
        let (mq, lq, mp, lp) = (
            self.value(mu_q),
            self.value(lv_q),
            self.value(mu_p),
            self.value(lv_p),
        );
        let half = T::lit(0.5);
        let mut kl = T::zero();
        for i in 0..n {
            let d = mq[i] - mp[i];
            kl += half * (lp[i] - lq[i] + ((lq[i]).exp() + d * d) / lp[i].exp() - T::one());
        }
        self.push(Op::GaussianKl([mu_q, lv_q, mu_p, lv_p]), vec![kl])
    }

    /// Reverse sweep from the scalar `loss`. May run once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        self.consumed = true;
        if self.len(loss) != 1 {
            return Err(Error::dim("backward loss", 1, self.len(loss)));
        }
        let mut sweep = Sweep {
            store: self.store,
            nodes: &self.nodes,
            grads: vec![Vec::new(); self.nodes.len()],
            params: Gradients::new(self.store.len()),
        };
        sweep.grads[loss.0] = vec![T::one()];
        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut sweep.grads[i]);
            if g.is_empty() {
                continue;
            }
            sweep.propagate(i, &g);
        }
        Ok(sweep.params)
    }
}

pub(crate) fn softmax_vec<T: Real>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = x.iter().map(|v| (*v - m).exp()).collect();
    let s: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

pub(crate) fn log_softmax_vec<T: Real>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = x.iter().map(|v| (*v - m).exp()).sum::<T>().ln() + m;
    x.iter().map(|v| *v - lse).collect()
}

struct Sweep<'a, T> {
    store: &'a ParameterStore<T>,
    nodes: &'a [Node<T>],
    grads: Vec<Vec<T>>,
    params: Gradients<T>,
}

impl<T: Real> Sweep<'_, T> {
    fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.value(id).data(),
            _ => &node.value,
        }
    }

    /// Gradient buffer of `v`, or `None` for constants.
    fn sink(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Constant => None,
            Op::Param(id) => {
                let n = self.store.value(id).len();
                Some(self.params.slot_mut(id, n))
            }
            _ => {
                let n = node.rows * node.cols;
                let slot = &mut self.grads[v.0];
                if slot.is_empty() {
                    slot.resize(n, T::zero());
                }
                Some(slot.as_mut_slice())
            }
        }
    }

    fn add_into(&mut self, v: Var, delta: impl IntoIterator<Item = T>) {
        if let Some(s) = self.sink(v) {
            for (a, d) in s.iter_mut().zip(delta) {
                *a += d;
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = self.nodes;
        let node = &nodes[i];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Embed(id, row) => {
                let cols = g.len();
                let n = self.store.value(*id).len();
                let slot = self.params.slot_mut(*id, n);
                for (a, d) in slot[row * cols..(row + 1) * cols].iter_mut().zip(g) {
                    *a += *d;
                }
            }
            Op::Affine { w, x, b } => {
                let (w, x) = (*w, *x);
                let cols = nodes[w.0].cols;
                let xv = self.value(x).to_vec();
                if !matches!(nodes[x.0].op, Op::Constant) {
                    let wv = self.value(w);
                    let mut dx = vec![T::zero(); cols];
                    for (r, gi) in g.iter().enumerate() {
                        if gi.is_zero() {
                            continue;
                        }
                        for (d, wj) in dx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                            *d += *wj * *gi;
                        }
                    }
                    self.add_into(x, dx);
                }
                if let Some(dw) = self.sink(w) {
                    for (r, gi) in g.iter().enumerate() {
                        if gi.is_zero() {
                            continue;
                        }
                        for (d, xj) in dw[r * cols..(r + 1) * cols].iter_mut().zip(&xv) {
                            *d += *gi * *xj;
                        }
                    }
                }
                if let Some(b) = b {
                    self.add_into(*b, g.iter().copied());
                }
            }
            Op::Add(a, b) => {
                self.add_into(*a, g.iter().copied());
                self.add_into(*b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.add_into(*a, g.iter().copied());
                self.add_into(*b, g.iter().map(|x| -*x));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da: Vec<T> = g.iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
                let db: Vec<T> = g.iter().zip(self.value(a)).map(|(x, y)| *x * *y).collect();
                self.add_into(a, da);
                self.add_into(b, db);
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.add_into(*a, g.iter().map(|x| *x * c));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].rows * nodes[p.0].cols;
                    self.add_into(*p, g[off..off + n].iter().copied());
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let start = *start;
                if let Some(s) = self.sink(*a) {
                    for (d, x) in s[start..start + g.len()].iter_mut().zip(g) {
                        *d += *x;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let d: Vec<T> = g.iter().zip(y).map(|(gi, yi)| *gi * (T::one() - *yi * *yi)).collect();
                self.add_into(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d: Vec<T> = g.iter().zip(y).map(|(gi, yi)| *gi * *yi * (T::one() - *yi)).collect();
                self.add_into(*a, d);
            }
            Op::Exp(a) => {
                let y = &node.value;
                let d: Vec<T> = g.iter().zip(y).map(|(gi, yi)| *gi * *yi).collect();
                self.add_into(*a, d);
            }
            Op::Sum(a) => {
                let n = nodes[a.0].rows * nodes[a.0].cols;
                self.add_into(*a, std::iter::repeat_n(g[0], n));
            }
            Op::Dot(a, b) => {
                let (a, b) = (*a, *b);
                let da: Vec<T> = self.value(b).iter().map(|y| *y * g[0]).collect();
                let db: Vec<T> = self.value(a).iter().map(|y| *y * g[0]).collect();
                self.add_into(a, da);
                self.add_into(b, db);
            }
            Op::AddN(parts) => {
                for p in parts {
                    self.add_into(*p, g.iter().copied());
                }
            }
            Op::Mean(parts) => {
                let k = T::lit(parts.len() as f64);
                for p in parts {
                    self.add_into(*p, g.iter().map(|x| *x / k));
                }
            }
            Op::Stack(parts) => {
                for (p, gi) in parts.iter().zip(g) {
                    self.add_into(*p, [*gi]);
                }
            }
            Op::WeightedSum(w, vectors) => {
                let w = *w;
                let wv = self.value(w).to_vec();
                let dw: Vec<T> = vectors
                    .iter()
                    .map(|v| self.value(*v).iter().zip(g).map(|(a, b)| *a * *b).sum())
                    .collect();
                for (v, wi) in vectors.iter().zip(&wv) {
                    let wi = *wi;
                    self.add_into(*v, g.iter().map(|x| *x * wi));
                }
                self.add_into(w, dw);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let gy: T = g.iter().zip(y).map(|(a, b)| *a * *b).sum();
                let d: Vec<T> = g.iter().zip(y).map(|(gi, yi)| *yi * (*gi - gy)).collect();
                self.add_into(*a, d);
            }
            Op::CrossEntropy(logits, targets) => {
                let lsm = log_softmax_vec(self.value(*logits));
                let floor = T::lit(LOG_FLOOR.ln());
                let mut d: Vec<T> = vec![T::zero(); lsm.len()];
                let mut active = T::zero();
                for &t in targets {
                    if lsm[t] > floor {
                        active += T::one();
                        d[t] -= g[0];
                    }
                }
                for (di, l) in d.iter_mut().zip(&lsm) {
                    *di += g[0] * active * l.exp();
                }
                self.add_into(*logits, d);
            }
            Op::BceWithLogits(logits, targets) => {
                let floor = T::lit(LOG_FLOOR.ln());
                let d: Vec<T> = self
                    .value(*logits)
                    .iter()
                    .zip(targets)
                    .map(|(x, &y)| {
                        let ls = if y { log_sigmoid(*x) } else { log_sigmoid(-*x) };
                        if ls <= floor {
                            T::zero()
                        } else {
                            let t = if y { T::one() } else { T::zero() };
                            g[0] * (sigmoid(*x) - t)
                        }
                    })
                    .collect();
                self.add_into(*logits, d);
            }
            Op::GaussianKl([mu_q, lv_q, mu_p, lv_p]) => {
                let (mq, lq, mp, lp) = (
                    self.value(*mu_q).to_vec(),
                    self.value(*lv_q).to_vec(),
                    self.value(*mu_p).to_vec(),
                    self.value(*lv_p).to_vec(),
                );
                let half = T::lit(0.5);
                let n = mq.len();
                let (mut dmq, mut dlq, mut dmp, mut dlp) = (
                    vec![T::zero(); n],
                    vec![T::zero(); n],
                    vec![T::zero(); n],
                    vec![T::zero(); n],
                );
                for k in 0..n {
                    let var_p = lp[k].exp();
                    let var_q = lq[k].exp();
                    let d = mq[k] - mp[k];
                    dmq[k] = g[0] * d / var_p;
                    dmp[k] = -dmq[k];
                    dlq[k] = g[0] * half * (var_q / var_p - T::one());
                    dlp[k] = g[0] * half * (T::one() - (var_q + d * d) / var_p);
                }
                self.add_into(*mu_q, dmq);
                self.add_into(*lv_q, dlq);
                self.add_into(*mu_p, dmp);
                self.add_into(*lv_p, dlp);
            }
        }
    }
}
