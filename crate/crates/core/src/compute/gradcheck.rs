//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::compute::{Gradients, ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against the fourth-order central difference
/// `(8 (f(p + h) - f(p - h)) - (f(p + 2h) - f(p - 2h))) / 12 h`, `h = eps`,
/// on up to `per_param` randomly chosen coordinates of every parameter.
///
/// The higher-order stencil allows a step large enough that rounding in the
/// loss does not swamp gradients near `REL_ERROR_FLOOR`.
///
/// `loss` must be a deterministic function of the store (fix any sampling
/// noise inside it).
pub fn grad_check<R: Rng + ?Sized>(
    store: &mut ParameterStore<f64>,
    analytic: &Gradients<f64>,
    mut loss: impl FnMut(&ParameterStore<f64>) -> Result<f64>,
    eps: f64,
    per_param: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            sample(rng, n, per_param).into_vec()
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            let mut at = |offset: f64| {
                store.get_mut(id).value.data_mut()[c] = orig + offset;
                loss(store)
            };
            let f = [at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?];
            store.get_mut(id).value.data_mut()[c] = orig;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: 0,
                    component: format!("grad_check loss at {}[{c}]", store.get(id).name()),
                });
            }
            let numeric = (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * eps);
            let a = analytic.at(id, c);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name().to_string(), c, a, numeric));
            }
        }
    }
    Ok(report)
}
