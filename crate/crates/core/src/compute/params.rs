use std::collections::HashMap;

use rand::Rng;

use crate::compute::{Array, Real};
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialization rule for a new parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `(-a, a)`.
    Uniform(f64),
    Zeros,
}

/// Weight initialization used for every matrix and embedding.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    name: String,
    pub value: Array<T>,
    pub grad: Array<T>,
}

impl<T> Parameter<T> {
    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Named trainable arrays with gradient slots.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let mut value = Array::zeros(shape);
        if let Init::Uniform(a) = init {
            for v in value.data_mut() {
                *v = T::lit(rng.random_range(-a..a));
            }
        }
        self.insert(name, value)
    }

    /// Adds a parameter with a given value.
    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Array::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array<T> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds `scale * grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: T) {
        for (p, slot) in self.params.iter_mut().zip(&grads.slots) {
            if slot.is_empty() {
                continue;
            }
            for (g, s) in p.grad.data_mut().iter_mut().zip(slot) {
                *g += scale * *s;
            }
        }
    }

    /// Global L2 norm over every gradient slot.
    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter())
            .map(|g| *g * *g)
            .sum::<T>()
            .sqrt()
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Sparse-by-parameter gradient buffers produced by one backward pass.
///
/// Parameters never reached by the loss keep an empty slot and read as zero.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    slots: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            slots: vec![Vec::new(); n_params],
        }
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId, len: usize) -> &mut [T] {
        let slot = &mut self.slots[id.0];
        if slot.is_empty() {
            slot.resize(len, T::zero());
        }
        slot
    }

    /// Gradient of one parameter, `None` when the loss never reached it.
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        let s = &self.slots[id.0];
        (!s.is_empty()).then_some(s.as_slice())
    }

    /// Value at one coordinate, zero for unreached parameters.
    pub fn at(&self, id: ParamId, index: usize) -> T {
        self.get(id).map_or(T::zero(), |s| s[index])
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if theirs.is_empty() {
                continue;
            }
            if mine.is_empty() {
                mine.clone_from(theirs);
            } else {
                for (a, b) in mine.iter_mut().zip(theirs) {
                    *a += *b;
                }
            }
        }
    }

    pub fn norm(&self) -> T {
        self.slots
            .iter()
            .flatten()
            .map(|g| *g * *g)
            .sum::<T>()
            .sqrt()
    }
}
