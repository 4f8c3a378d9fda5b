use crate::compute::{ParameterStore, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParameterStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store
            .iter()
            .map(|(_, p)| vec![T::zero(); p.value.len()])
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Rescales all gradients so their global L2 norm is at most `threshold`.
/// Returns the norm measured before clipping.
pub fn clip_gradients<T: Real>(store: &mut ParameterStore<T>, threshold: f64) -> f64 {
    let norm = store.grad_norm().as_f64();
    if norm > threshold {
        let s = T::lit(threshold / norm);
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// One bias-corrected Adam update from the gradient slots.
pub fn adam_step<T: Real>(store: &mut ParameterStore<T>, state: &mut AdamState<T>, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::lit(lr), T::lit(ADAM_EPS));
    for ((p, m), v) in store
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let grad = p.grad.data().to_vec();
        for (((w, g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
