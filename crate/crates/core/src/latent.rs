//! Diagonal-Gaussian latent variables: parameterization, reparameterized
//! sampling, closed-form KL and linear KL annealing.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compute::{Graph, Mlp, Real, Var};
use crate::error::{Error, Result};

/// Gaussian on the tape: `N(mu, diag(exp(log_var)))`.
#[derive(Clone, Copy, Debug)]
pub struct DiagonalGaussian {
    pub mu: Var,
    pub log_var: Var,
}

/// Gaussian parameters as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn params<T: Real>(&self, g: &Graph<'_, T>) -> GaussianParams {
        GaussianParams {
            mu: g.value_f64(self.mu),
            log_var: g.value_f64(self.log_var),
        }
    }

    pub fn dim<T: Real>(&self, g: &Graph<'_, T>) -> usize {
        g.len(self.mu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentSource {
    Prior,
    Posterior,
}

/// Reparameterized draw `z = mu + exp(log_var / 2) * eps`.
#[derive(Clone, Debug)]
pub struct LatentSample {
    pub z: Var,
    pub eps: Vec<f64>,
    pub source: LatentSource,
}

/// Maps the concatenated `inputs` through `mlp` and splits the output into
/// `[mu; log_var]`.
pub fn gaussian_from<T: Real>(
    g: &mut Graph<'_, T>,
    mlp: &Mlp,
    inputs: &[Var],
) -> Result<DiagonalGaussian> {
    let width: usize = inputs.iter().map(|v| g.len(*v)).sum();
    if width != mlp.input() {
        return Err(Error::dim("gaussian_from input", mlp.input(), width));
    }
    let x = if inputs.len() == 1 {
        inputs[0]
    } else {
        g.concat(inputs)
    };
    let out = mlp.forward(g, x)?;
    let d = g.len(out) / 2;
    let mu = g.slice(out, 0, d);
    let log_var = g.slice(out, d, d);
    Ok(DiagonalGaussian { mu, log_var })
}

pub fn draw_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Reparameterized sample with caller-supplied noise. Gradients reach `mu`
/// and `log_var`; the noise is a constant.
pub fn sample_with_noise<T: Real>(
    g: &mut Graph<'_, T>,
    dist: &DiagonalGaussian,
    eps: Vec<f64>,
    source: LatentSource,
) -> Result<LatentSample> {
    let d = dist.dim(g);
    if eps.len() != d {
        return Err(Error::dim("latent noise", d, eps.len()));
    }
    let half = g.scale(dist.log_var, T::lit(0.5));
    let std = g.exp(half);
    let e = g.constant(eps.iter().map(|x| T::lit(*x)).collect());
    let scaled = g.mul(std, e);
    let z = g.add(dist.mu, scaled);
    Ok(LatentSample { z, eps, source })
}

pub fn sample<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    dist: &DiagonalGaussian,
    source: LatentSource,
    rng: &mut R,
) -> Result<LatentSample> {
    let eps = draw_noise(dist.dim(g), rng);
    sample_with_noise(g, dist, eps, source)
}

/// `KL(q || p)` on the tape.
pub fn kl<T: Real>(g: &mut Graph<'_, T>, q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<Var> {
    let (dq, dp) = (q.dim(g), p.dim(g));
    if dq != dp {
        return Err(Error::dim("kl", dq, dp));
    }
    Ok(g.gaussian_kl(q.mu, q.log_var, p.mu, p.log_var))
}

/// Closed-form `KL(q || p)` for diagonal Gaussians:
/// `sum_i 1/2 (log s_p^2 / s_q^2 + (s_q^2 + (mu_q - mu_p)^2) / s_p^2 - 1)`.
pub fn kl_divergence(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    let n = q.mu.len();
    for (ctx, len) in [
        ("kl q.log_var", q.log_var.len()),
        ("kl p.mu", p.mu.len()),
        ("kl p.log_var", p.log_var.len()),
    ] {
        if len != n {
            return Err(Error::dim(ctx, n, len));
        }
    }
    Ok((0..n)
        .map(|i| {
            let d = q.mu[i] - p.mu[i];
            0.5 * (p.log_var[i] - q.log_var[i] + (q.log_var[i].exp() + d * d) / p.log_var[i].exp() - 1.0)
        })
        .sum())
}

/// Linear warm-up of the KL weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnnealSchedule {
    total_anneal_steps: usize,
}

impl AnnealSchedule {
    pub fn new(total_anneal_steps: usize) -> Result<Self> {
        if total_anneal_steps == 0 {
            return Err(Error::Invalid("total_anneal_steps must be at least 1".into()));
        }
        Ok(Self { total_anneal_steps })
    }

    pub fn total_anneal_steps(&self) -> usize {
        self.total_anneal_steps
    }
}

/// `min(1, step / total_anneal_steps)`.
pub fn anneal_weight(step: usize, schedule: &AnnealSchedule) -> f64 {
    (step as f64 / schedule.total_anneal_steps as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::{ParameterStore, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mlp(store: &mut ParameterStore<f64>, input: usize, out: usize, zero: bool) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Mlp::new(store, "m", input, 3, 2 * out, &mut rng).unwrap();
        if zero {
            for p in store.iter_mut() {
                p.value.fill(0.0);
            }
        }
        m
    }

    #[test]
    fn zero_mlp_gives_standard_normal() {
        let mut store = ParameterStore::new();
        let m = mlp(&mut store, 2, 2, true);
        let mut g = Graph::new(&store);
        let x = g.constant(vec![1.0, -2.0]);
        let d = gaussian_from(&mut g, &m, &[x]).unwrap();
        assert_eq!(d.params(&g), GaussianParams { mu: vec![0.0; 2], log_var: vec![0.0; 2] });
    }

    #[test]
    fn gaussian_from_rejects_width() {
        let mut store = ParameterStore::new();
        let m = mlp(&mut store, 2, 2, false);
        let mut g = Graph::new(&store);
        let x = g.constant(vec![1.0, -2.0, 3.0]);
        assert!(gaussian_from(&mut g, &m, &[x]).is_err());
    }

    #[test]
    fn same_inputs_same_distribution() {
        let mut store = ParameterStore::new();
        let m = mlp(&mut store, 2, 2, false);
        let mut g = Graph::new(&store);
        let a = g.constant(vec![0.5]);
        let b = g.constant(vec![-0.5]);
        let d1 = gaussian_from(&mut g, &m, &[a, b]).unwrap();
        let d2 = gaussian_from(&mut g, &m, &[a, b]).unwrap();
        assert_eq!(d1.params(&g), d2.params(&g));
    }

    fn fixed(g: &mut Graph<'_, f64>, mu: Vec<f64>, lv: Vec<f64>) -> DiagonalGaussian {
        let mu = g.constant(mu);
        let log_var = g.constant(lv);
        DiagonalGaussian { mu, log_var }
    }

    #[test]
    fn zero_noise_returns_mean() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let d = fixed(&mut g, vec![0.3, -1.0], vec![2.0, -3.0]);
        let s = sample_with_noise(&mut g, &d, vec![0.0, 0.0], LatentSource::Prior).unwrap();
        assert_eq!(g.value(s.z), &[0.3, -1.0]);
    }

    #[test]
    fn dz_dmu_is_identity() {
        let mut store = ParameterStore::new();
        let mu = store.insert("mu", crate::compute::Array::vector(vec![0.1, 0.2, 0.3])).unwrap();
        let lv = store.insert("lv", crate::compute::Array::vector(vec![0.5, -0.5, 0.0])).unwrap();
        for k in 0..3 {
            let mut g = Graph::new(&store);
            let d = DiagonalGaussian { mu: g.param(mu), log_var: g.param(lv) };
            let s = sample_with_noise(&mut g, &d, vec![0.7, -1.1, 2.0], LatentSource::Posterior).unwrap();
            let pick = g.slice(s.z, k, 1);
            let l = g.sum(pick);
            let grads = g.backward(l).unwrap();
            let mut e = vec![0.0; 3];
            e[k] = 1.0;
            assert_eq!(grads.get(mu).unwrap(), e.as_slice());
            // d z_k / d lv_k = 0.5 * exp(lv_k / 2) * eps_k
            let eps = [0.7, -1.1, 2.0][k];
            let lvk = [0.5, -0.5, 0.0][k];
            let expect = 0.5 * (0.5f64 * lvk).exp() * eps;
            assert!((grads.at(lv, k) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_identical_is_zero() {
        let q = GaussianParams { mu: vec![0.4, -2.0], log_var: vec![0.1, 1.3] };
        assert!(kl_divergence(&q, &q).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_unit_shift_is_half() {
        let q = GaussianParams { mu: vec![1.0], log_var: vec![0.0] };
        let p = GaussianParams { mu: vec![0.0], log_var: vec![0.0] };
        assert!((kl_divergence(&q, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let q = GaussianParams { mu: vec![1.0], log_var: vec![0.0] };
        let p = GaussianParams { mu: vec![0.0, 0.0], log_var: vec![0.0, 0.0] };
        assert!(kl_divergence(&q, &p).is_err());
        let store = ParameterStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = fixed(&mut g, vec![0.0], vec![0.0]);
        let b = fixed(&mut g, vec![0.0; 2], vec![0.0; 2]);
        assert!(kl(&mut g, &a, &b).is_err());
    }

    #[test]
    fn tape_kl_matches_closed_form() {
        let store = ParameterStore::<f64>::new();
        let mut g = Graph::new(&store);
        let q = fixed(&mut g, vec![0.3, -0.2], vec![0.4, -1.0]);
        let p = fixed(&mut g, vec![-0.1, 0.5], vec![0.0, 0.7]);
        let v: Var = kl(&mut g, &q, &p).unwrap();
        let direct = kl_divergence(&q.params(&g), &p.params(&g)).unwrap();
        assert!((g.scalar(v) - direct).abs() < 1e-15);
    }

    #[test]
    fn anneal_ramp() {
        let s = AnnealSchedule::new(100).unwrap();
        assert_eq!(anneal_weight(0, &s), 0.0);
        assert_eq!(anneal_weight(50, &s), 0.5);
        assert_eq!(anneal_weight(100, &s), 1.0);
        assert_eq!(anneal_weight(200, &s), 1.0);
        assert!(AnnealSchedule::new(0).is_err());
    }

    #[test]
    fn sample_mean_of_unit_normal_shifted() {
        let store = ParameterStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            let mut g = Graph::new(&store);
            let d = fixed(&mut g, vec![1.0], vec![0.0]);
            let s = sample(&mut g, &d, LatentSource::Prior, &mut rng).unwrap();
            total += g.scalar(s.z);
        }
        assert!((total / n as f64 - 1.0).abs() < 0.02);
    }
}
