//! Training objective and loop.
//!
//! Per record: `L1 = reconstruction + plan membership + w * (KL_global +
//! sum_t KL_local)`, `L2` is the stop loss and `L3` the bag-of-words loss.
//! The optimized total is `L1 + L2 + L3`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{adam_step, clip_gradients, AdamState, Gradients, Graph, Real, Var};
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::latent::{self, anneal_weight, gaussian_from, AnnealSchedule, LatentSource};
use crate::model::Model;
use crate::parallel::{derive_seed, map_indexed, ExecMode};
use crate::planner;
use crate::realizer::{self, bow_loss, WordDecoder};

/// Loss components of one record (or a batch mean).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction_nll: f64,
    pub plan_membership_nll: f64,
    /// Absent when the global latent is ablated.
    pub kl_global: Option<f64>,
    /// Absent when local latents are ablated.
    pub kl_local_sum: Option<f64>,
    pub stop_nll: f64,
    pub bow_nll: f64,
    pub kl_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn kl_sum(&self) -> f64 {
        self.kl_global.unwrap_or(0.0) + self.kl_local_sum.unwrap_or(0.0)
    }

    /// `L1` at the recorded KL weight.
    pub fn l1(&self) -> f64 {
        self.reconstruction_nll + self.plan_membership_nll + self.kl_weight * self.kl_sum()
    }

    pub fn l2(&self) -> f64 {
        self.stop_nll
    }

    pub fn l3(&self) -> f64 {
        self.bow_nll
    }

    /// Components re-summed, to compare against `total`.
    pub fn resummed(&self) -> f64 {
        self.l1() + self.l2() + self.l3()
    }

    /// First non-finite component, by name.
    pub fn non_finite(&self) -> Option<&'static str> {
        let parts = [
            ("reconstruction_nll", self.reconstruction_nll),
            ("plan_membership_nll", self.plan_membership_nll),
            ("kl_global", self.kl_global.unwrap_or(0.0)),
            ("kl_local_sum", self.kl_local_sum.unwrap_or(0.0)),
            ("stop_nll", self.stop_nll),
            ("bow_nll", self.bow_nll),
            ("total", self.total),
        ];
        parts.iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }

    fn add(&mut self, o: &LossBreakdown) {
        fn opt(a: &mut Option<f64>, b: Option<f64>) {
            if let Some(b) = b {
                *a = Some(a.unwrap_or(0.0) + b);
            }
        }
        self.reconstruction_nll += o.reconstruction_nll;
        self.plan_membership_nll += o.plan_membership_nll;
        opt(&mut self.kl_global, o.kl_global);
        opt(&mut self.kl_local_sum, o.kl_local_sum);
        self.stop_nll += o.stop_nll;
        self.bow_nll += o.bow_nll;
        self.total += o.total;
        self.kl_weight = o.kl_weight;
    }

    fn scaled(mut self, c: f64) -> Self {
        self.reconstruction_nll *= c;
        self.plan_membership_nll *= c;
        self.kl_global = self.kl_global.map(|v| v * c);
        self.kl_local_sum = self.kl_local_sum.map(|v| v * c);
        self.stop_nll *= c;
        self.bow_nll *= c;
        self.total *= c;
        self
    }

    pub const TSV_HEADER: &'static str = "step\tepoch\treconstruction_nll\tplan_membership_nll\tkl_global\tkl_local_sum\tstop_nll\tbow_nll\tkl_weight\ttotal\tgrad_norm";

    fn tsv_row(&self, step: usize, epoch: usize, grad_norm: f64) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        format!(
            "{step}\t{epoch}\t{:.6}\t{:.6}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{grad_norm:.6}",
            self.reconstruction_nll,
            self.plan_membership_nll,
            opt(self.kl_global),
            opt(self.kl_local_sum),
            self.stop_nll,
            self.bow_nll,
            self.kl_weight,
            self.total
        )
    }
}

/// Loss terms of one record on the tape.
#[derive(Clone, Debug)]
pub struct LossGraph {
    pub reconstruction: Var,
    pub membership: Var,
    pub kl_global: Option<Var>,
    pub kl_local: Option<Var>,
    pub stop: Var,
    pub bow: Var,
    pub l1: Var,
    pub l2: Var,
    pub l3: Var,
    pub total: Var,
    pub kl_weight: f64,
}

impl LossGraph {
    pub fn breakdown<T: Real>(&self, g: &Graph<'_, T>) -> LossBreakdown {
        let s = |v: Var| g.scalar(v).as_f64();
        LossBreakdown {
            reconstruction_nll: s(self.reconstruction),
            plan_membership_nll: s(self.membership),
            kl_global: self.kl_global.map(s),
            kl_local_sum: self.kl_local.map(s),
            stop_nll: s(self.stop),
            bow_nll: s(self.bow),
            kl_weight: self.kl_weight,
            total: s(self.total),
        }
    }
}

fn check_example(ex: &Example) -> Result<()> {
    if ex.sentences.is_empty() {
        return Err(Error::Empty("record sentences"));
    }
    if ex.plan.len() != ex.sentences.len() {
        return Err(Error::Invalid(format!(
            "reference plan has {} groups for {} sentences",
            ex.plan.len(),
            ex.sentences.len()
        )));
    }
    if let Some(t) = ex.sentences.iter().position(|s| s.is_empty()) {
        return Err(Error::Invalid(format!("sentence {t} is empty")));
    }
    Ok(())
}

/// Builds the teacher-forced loss of `ex` on `g`. Latents are drawn from
/// their posteriors with noise from `rng`. `model` supplies the layout; the
/// values come from the store `g` was built on.
pub fn loss_graph<T: Real, R: rand::Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    model: &Model<T>,
    ex: &Example,
    kl_weight: f64,
    rng: &mut R,
) -> Result<LossGraph> {
    check_example(ex)?;
    let w = &model.weights;
    let rw = &w.realizer;
    let input = model.encode_input(g, &ex.items, ex.title.as_deref())?;

    let (z_p, kl_global) = match (&w.global_prior, &w.global_posterior) {
        (Some(prior), Some(post)) => {
            let all: Vec<usize> = ex.sentences.iter().flatten().copied().collect();
            let y = model.encode_target(g, &all)?;
            let p = gaussian_from(g, prior, &[input.enc])?;
            let q = gaussian_from(g, post, &[input.enc, y])?;
            let s = latent::sample(g, &q, LatentSource::Posterior, rng)?;
            (s.z, Some(latent::kl(g, &q, &p)?))
        }
        _ => (model.zero_latent(g), None),
    };

    let plan = planner::plan_terms(g, &w.planner, &input, z_p, &ex.plan)?;
    let h_g = realizer::encode_plan(g, rw, &plan.bows)?;
    let mut h_s = realizer::init_sentence_state(g, rw, input.enc, z_p, h_g)?;
    let mut prev_z = model.zero_latent(g);
    let mut prev_word = g.zeros(model.config.hidden);
    let mut recon = Vec::with_capacity(ex.sentences.len());
    let mut kls = Vec::new();
    let mut bows = Vec::with_capacity(ex.sentences.len());
    for ((sentence, group), b) in ex.sentences.iter().zip(&ex.plan).zip(&plan.bows) {
        h_s = realizer::sentence_step(g, rw, h_s, prev_z, prev_word)?;
        let z_s = match realizer::local_prior(g, rw, h_s, *b)? {
            Some(p) => {
                let s_enc = model.encode_target(g, sentence)?;
                let q = realizer::local_posterior(g, rw, h_s, *b, s_enc)?.expect("posterior exists with prior");
                let s = latent::sample(g, &q, LatentSource::Posterior, rng)?;
                kls.push(latent::kl(g, &q, &p)?);
                s.z
            }
            None => model.zero_latent(g),
        };
        let memory = realizer::group_memory(&input, group)?;
        let dec = WordDecoder::new(g, model, memory)?;
        let (nll, fin) = dec.teacher_forced(g, h_s, z_s, sentence)?;
        recon.push(nll);
        bows.push(bow_loss(g, &rw.bow, h_s, z_s, sentence)?);
        prev_z = z_s;
        prev_word = fin;
    }
    let reconstruction = g.add_n(&recon);
    let kl_local = (!kls.is_empty()).then(|| g.add_n(&kls));
    let bow = g.add_n(&bows);
    let mut l1_parts = vec![reconstruction, plan.membership_nll];
    let kl_parts: Vec<Var> = kl_global.iter().chain(kl_local.iter()).copied().collect();
    if !kl_parts.is_empty() {
        let kl = g.add_n(&kl_parts);
        l1_parts.push(g.scale(kl, T::lit(kl_weight)));
    }
    let l1 = g.add_n(&l1_parts);
    let total = g.add_n(&[l1, plan.stop_nll, bow]);
    Ok(LossGraph {
        reconstruction,
        membership: plan.membership_nll,
        kl_global,
        kl_local,
        stop: plan.stop_nll,
        bow,
        l1,
        l2: plan.stop_nll,
        l3: bow,
        total,
        kl_weight,
    })
}

/// Loss components of one record, without gradients.
pub fn elbo_terms<T: Real, R: rand::Rng + ?Sized>(
    model: &Model<T>,
    ex: &Example,
    kl_weight: f64,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.store);
    let lg = loss_graph(&mut g, model, ex, kl_weight, rng)?;
    Ok(lg.breakdown(&g))
}

/// Loss components and gradients of the total for one record.
pub fn record_gradients<T: Real>(
    model: &Model<T>,
    ex: &Example,
    kl_weight: f64,
    seed: u64,
) -> Result<(LossBreakdown, Gradients<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(&model.store);
    let lg = loss_graph(&mut g, model, ex, kl_weight, &mut rng)?;
    let b = lg.breakdown(&g);
    let grads = g.backward(lg.total)?;
    Ok((b, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    /// Defaults to one epoch's step count.
    pub anneal_steps: Option<usize>,
    pub epochs: usize,
    /// Stops early once this many updates have run.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Noise seed for validation, fixed across epochs.
    pub eval_seed: u64,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 0.001,
            clip: 5.0,
            anneal_steps: None,
            epochs: 10,
            max_steps: None,
            seed: 1,
            eval_seed: 0,
            exec: ExecMode::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.anneal_steps == Some(0) {
            return Err(Error::Config("batch_size, epochs and anneal_steps must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::Config("lr and clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Updates completed by the end of the epoch.
    pub steps: usize,
    /// Mean per-record training total over the epoch.
    pub train_total: f64,
    /// Mean validation `L1 + L2` at KL weight 1.
    pub valid: Option<f64>,
}

pub struct TrainOutcome<T: Real> {
    /// Parameters of the epoch with the lowest validation `L1 + L2`; the
    /// final parameters when there is no validation data.
    pub best: Model<T>,
    pub best_epoch: usize,
    pub best_valid: Option<f64>,
    pub epochs: Vec<EpochSummary>,
    pub steps: usize,
}

/// Mean `L1 + L2` at KL weight 1 over `data`, with noise fixed by `seed`.
pub fn validation_loss<T: Real>(model: &Model<T>, data: &[Example], seed: u64, exec: ExecMode) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let per = map_indexed(exec, data.len(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64]));
        elbo_terms(model, &data[i], 1.0, &mut rng).map(|b| b.l1() + b.l2())
    });
    let mut sum = 0.0;
    for r in per {
        sum += r?;
    }
    Ok(sum / data.len() as f64)
}

/// Minibatch Adam on the mean per-record total, with linear KL annealing,
/// global-norm clipping and epoch-level validation. One TSV row per update
/// goes to `log` when given.
pub fn train<T: Real>(
    mut model: Model<T>,
    data: &[Example],
    valid: &[Example],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let schedule = AnnealSchedule::new(cfg.anneal_steps.unwrap_or(steps_per_epoch))?;
    let mut adam = AdamState::new(&model.store);
    let log_err = |e: std::io::Error| Error::io("training log", e);
    if let Some(l) = log.as_mut() {
        writeln!(l, "{}", LossBreakdown::TSV_HEADER).map_err(log_err)?;
    }
    let mut step = 0usize;
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut order: Vec<usize> = (0..data.len()).collect();
    'outer: for epoch in 1..=cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let kw = anneal_weight(step, &schedule);
            let results = map_indexed(cfg.exec, batch.len(), |k| {
                let i = batch[k];
                record_gradients(&model, &data[i], kw, derive_seed(&[cfg.seed, step as u64, i as u64]))
            });
            let mut sum = LossBreakdown::default();
            let mut grads = Gradients::new(model.store.len());
            for r in results {
                let (b, gr) = r?;
                if let Some(c) = b.non_finite() {
                    return Err(Error::NonFinite {
                        step,
                        component: c.to_string(),
                    });
                }
                sum.add(&b);
                grads.add_assign(&gr);
            }
            let inv = 1.0 / batch.len() as f64;
            let mean = sum.scaled(inv);
            model.store.zero_grad();
            model.store.accumulate(&grads, T::lit(inv));
            let norm = clip_gradients(&mut model.store, cfg.clip);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    component: "gradient".into(),
                });
            }
            adam_step(&mut model.store, &mut adam, cfg.lr);
            if let Some(l) = log.as_mut() {
                writeln!(l, "{}", mean.tsv_row(step, epoch, norm)).map_err(log_err)?;
            }
            epoch_total += mean.total * batch.len() as f64;
            seen += batch.len();
            if cfg.max_steps.is_some_and(|m| step >= m) {
                epochs.push(finish_epoch(&model, valid, cfg, epoch, step, epoch_total / seen as f64, &mut best)?);
                break 'outer;
            }
        }
        epochs.push(finish_epoch(&model, valid, cfg, epoch, step, epoch_total / seen as f64, &mut best)?);
    }
    let (best_valid, best_epoch, best_model) = match best {
        Some((v, e, m)) => (Some(v), e, m),
        None => (None, epochs.len(), model),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        best_valid,
        epochs,
        steps: step,
    })
}

fn finish_epoch<T: Real>(
    model: &Model<T>,
    valid: &[Example],
    cfg: &TrainConfig,
    epoch: usize,
    steps: usize,
    train_total: f64,
    best: &mut Option<(f64, usize, Model<T>)>,
) -> Result<EpochSummary> {
    let v = if valid.is_empty() {
        None
    } else {
        let v = validation_loss(model, valid, cfg.eval_seed, cfg.exec)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                step: steps,
                component: "validation L1+L2".into(),
            });
        }
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            *best = Some((v, epoch, model.clone()));
        }
        Some(v)
    };
    Ok(EpochSummary {
        epoch,
        steps,
        train_total,
        valid: v,
    })
}
