//! Plan decoder: splits the input items into ordered sentence groups.
//!
//! Group indices address [`EncodedInput::items`], so index `N` (the item
//! count) is the none-tag.

use serde::{Deserialize, Serialize};

use crate::compute::{gru_cell, Graph, Real, Var, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::model::{EncodedInput, PlannerWeights};

/// Symbol for the none-tag in rendered plans.
pub const NONE_SYMBOL: &str = "∅";

/// Decoded plan: ordered groups and the stop probability after each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub groups: Vec<Vec<usize>>,
    pub stop_probs: Vec<f64>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// `a:v,a:v ; a:v ; ∅` given item labels; indices past the labels
    /// render as the none-tag.
    pub fn render<S: AsRef<str>>(&self, labels: &[S]) -> String {
        render_groups(&self.groups, labels)
    }
}

pub fn render_groups<S: AsRef<str>>(groups: &[Vec<usize>], labels: &[S]) -> String {
    groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|&i| labels.get(i).map_or(NONE_SYMBOL, |l| l.as_ref()))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join(" ; ")
}

/// `h_0^p = tanh(W [enc(x); z^p] + b)`.
pub fn init_plan_state<T: Real>(g: &mut Graph<'_, T>, w: &PlannerWeights, enc: Var, z_p: Var) -> Result<Var> {
    let x = g.concat(&[enc, z_p]);
    let a = w.init.forward(g, x)?;
    Ok(g.tanh(a))
}

/// State after consuming the projected `z^p` as the first input.
pub fn start_plan<T: Real>(g: &mut Graph<'_, T>, w: &PlannerWeights, h0: Var, z_p: Var) -> Result<Var> {
    let x = w.start.forward(g, z_p)?;
    gru_cell(g, &w.cell, x, h0)
}

/// Item blocks of the membership scorer, computed once per input.
pub fn member_keys<T: Real>(g: &mut Graph<'_, T>, w: &PlannerWeights, items: &[Var]) -> Vec<Var> {
    let k = g.param(w.member_item);
    items.iter().map(|h| g.matvec(k, *h)).collect()
}

/// Logits `v_p . tanh(W_p [h_i; h_t^p] + b_p)` for every item.
pub fn membership_logits<T: Real>(g: &mut Graph<'_, T>, w: &PlannerWeights, keys: &[Var], state: Var) -> Result<Var> {
    if keys.is_empty() {
        return Err(Error::Empty("membership items"));
    }
    let (ws, b, v) = (g.param(w.member_state), g.param(w.member_bias), g.param(w.member_v));
    let q = g.affine(ws, state, Some(b));
    let scores: Vec<Var> = keys
        .iter()
        .map(|k| {
            let s = g.add(*k, q);
            let t = g.tanh(s);
            g.dot(v, t)
        })
        .collect();
    Ok(g.stack(&scores))
}

/// `P(d_i in g_t)` for every item.
pub fn membership_probs<T: Real>(g: &mut Graph<'_, T>, w: &PlannerWeights, items: &[Var], state: Var) -> Result<Var> {
    let keys = member_keys(g, w, items);
    let logits = membership_logits(g, w, &keys, state)?;
    Ok(g.sigmoid(logits))
}

/// Items with probability strictly above 0.5; when none qualifies, the
/// single most probable item (lowest index on ties).
pub fn form_group(probs: &[f64]) -> Result<Vec<usize>> {
    if probs.is_empty() {
        return Err(Error::Empty("membership probabilities"));
    }
    let picked: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.5).collect();
    if !picked.is_empty() {
        return Ok(picked);
    }
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    Ok(vec![best])
}

/// `bow(g_t)`: mean of the group's item representations.
pub fn bow<T: Real>(g: &mut Graph<'_, T>, items: &[Var], group: &[usize]) -> Result<Var> {
    if group.is_empty() {
        return Err(Error::Empty("plan group"));
    }
    let members = group
        .iter()
        .map(|&i| {
            items
                .get(i)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("group index {i} out of {} items", items.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(g.mean(&members))
}

/// One recurrent step with input `bow(g_t)`.
pub fn plan_step<T: Real>(g: &mut Graph<'_, T>, w: &PlannerWeights, state: Var, bow: Var) -> Result<Var> {
    gru_cell(g, &w.cell, bow, state)
}

pub fn stop_logit<T: Real>(g: &mut Graph<'_, T>, w: &PlannerWeights, state: Var) -> Result<Var> {
    w.stop.forward(g, state)
}

/// `sigmoid(W_c h + b_c)`.
pub fn stop_prob<T: Real>(g: &mut Graph<'_, T>, w: &PlannerWeights, state: Var) -> Result<f64> {
    let l = stop_logit(g, w, state)?;
    let p = g.sigmoid(l);
    Ok(g.scalar(p).as_f64())
}

/// Greedy planning: membership, group, feed `bow`, stop test; at most
/// `max_steps` groups.
pub fn decode_plan<T: Real>(
    g: &mut Graph<'_, T>,
    w: &PlannerWeights,
    input: &EncodedInput,
    z_p: Var,
    max_steps: usize,
) -> Result<Plan> {
    if max_steps == 0 {
        return Err(Error::Invalid("max_steps must be at least 1".into()));
    }
    let h0 = init_plan_state(g, w, input.enc, z_p)?;
    let mut state = start_plan(g, w, h0, z_p)?;
    let keys = member_keys(g, w, &input.items);
    let mut plan = Plan {
        groups: Vec::new(),
        stop_probs: Vec::new(),
    };
    while plan.groups.len() < max_steps {
        let logits = membership_logits(g, w, &keys, state)?;
        let probs = g.sigmoid(logits);
        let group = form_group(&g.value_f64(probs))?;
        let b = bow(g, &input.items, &group)?;
        state = plan_step(g, w, state, b)?;
        let p = stop_prob(g, w, state)?;
        plan.groups.push(group);
        plan.stop_probs.push(p);
        if p > 0.5 {
            break;
        }
    }
    Ok(plan)
}

/// Teacher-forced plan decoding against reference groups.
#[derive(Clone, Debug)]
pub struct PlanTerms {
    pub membership_nll: Var,
    pub stop_nll: Var,
    /// `bow(g~_t)` per reference group.
    pub bows: Vec<Var>,
}

/// Runs the plan decoder over `reference`, feeding reference groups as
/// inputs, and returns the membership and stop losses on the tape.
pub fn plan_terms<T: Real>(
    g: &mut Graph<'_, T>,
    w: &PlannerWeights,
    input: &EncodedInput,
    z_p: Var,
    reference: &[Vec<usize>],
) -> Result<PlanTerms> {
    if reference.is_empty() {
        return Err(Error::Empty("reference plan"));
    }
    let n = input.items.len();
    let h0 = init_plan_state(g, w, input.enc, z_p)?;
    let mut state = start_plan(g, w, h0, z_p)?;
    let keys = member_keys(g, w, &input.items);
    let mut member_losses = Vec::with_capacity(reference.len());
    let mut stop_logits = Vec::with_capacity(reference.len());
    let mut bows = Vec::with_capacity(reference.len());
    for group in reference {
        let logits = membership_logits(g, w, &keys, state)?;
        let mut targets = vec![false; n];
        for &i in group {
            *targets
                .get_mut(i)
                .ok_or_else(|| Error::Invalid(format!("reference index {i} out of {n} items")))? = true;
        }
        member_losses.push(g.bce_with_logits(logits, &targets));
        let b = bow(g, &input.items, group)?;
        bows.push(b);
        state = plan_step(g, w, state, b)?;
        stop_logits.push(stop_logit(g, w, state)?);
    }
    let membership_nll = g.add_n(&member_losses);
    let stacked = g.stack(&stop_logits);
    let mut stop_targets = vec![false; reference.len()];
    stop_targets[reference.len() - 1] = true;
    let stop_nll = g.bce_with_logits(stacked, &stop_targets);
    Ok(PlanTerms {
        membership_nll,
        stop_nll,
        bows,
    })
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Plan losses from plain probabilities: `(membership_nll, stop_nll)` with
/// `stop_nll = -[sum_{t<T} ln(1 - P_t) + ln P_T]`.
pub fn plan_loss(member_probs: &[Vec<f64>], reference: &[Vec<usize>], stop_probs: &[f64]) -> Result<(f64, f64)> {
    if member_probs.len() != reference.len() {
        return Err(Error::dim("plan_loss membership steps", reference.len(), member_probs.len()));
    }
    if stop_probs.len() != reference.len() {
        return Err(Error::dim("plan_loss stop steps", reference.len(), stop_probs.len()));
    }
    let mut member = 0.0;
    for (probs, group) in member_probs.iter().zip(reference) {
        for (i, p) in probs.iter().enumerate() {
            member -= if group.contains(&i) { clamped_ln(*p) } else { clamped_ln(1.0 - p) };
        }
    }
    let last = stop_probs.len().saturating_sub(1);
    let stop = -stop_probs
        .iter()
        .enumerate()
        .map(|(t, p)| if t == last { clamped_ln(*p) } else { clamped_ln(1.0 - p) })
        .sum::<f64>();
    Ok((member, stop))
}
