//! Triplet fine-tuning of the encoder.
//!
//! Anchors are drawn uniformly over all days, positives uniformly over the
//! anchor participant's other days at most [`POSITIVE_WINDOW_DAYS`] away, and
//! negatives from other participants. The loss is a hinge on cosine
//! similarities, optimized with AdamW under a warmup-then-linear-decay
//! learning-rate schedule.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::cosine;
use crate::daystring::{tokenize, DayString, DayStringRecord, Vocabulary};
use crate::encoder::{self, EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const POSITIVE_WINDOW_DAYS: i64 = 30;
const MAX_ANCHOR_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDay {
    pub participant_id: String,
    pub date: NaiveDate,
    pub ids: Vec<usize>,
}

/// Tokenized days sorted by (participant, date), with each participant's
/// days stored contiguously.
#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    days: Vec<CorpusDay>,
    /// Half-open index ranges into `days`, one per participant, in id order.
    spans: Vec<(usize, usize)>,
    span_of_day: Vec<usize>,
}

impl TrainingCorpus {
    pub fn new(mut days: Vec<CorpusDay>) -> Result<Self> {
        days.sort_by(|a, b| a.participant_id.cmp(&b.participant_id).then(a.date.cmp(&b.date)));
        for w in days.windows(2) {
            if w[0].participant_id == w[1].participant_id && w[0].date == w[1].date {
                return Err(Error::Duplicate(format!("{}/{}", w[0].participant_id, w[0].date)));
            }
        }
        let mut spans = Vec::new();
        let mut start = 0;
        for i in 0..days.len() {
            if i + 1 == days.len() || days[i + 1].participant_id != days[i].participant_id {
                spans.push((start, i + 1));
                start = i + 1;
            }
        }
        let mut span_of_day = Vec::with_capacity(days.len());
        for (s, &(a, b)) in spans.iter().enumerate() {
            span_of_day.extend(std::iter::repeat_n(s, b - a));
        }
        Ok(Self { days, spans, span_of_day })
    }

    pub fn from_records(records: &[DayStringRecord], vocab: &Vocabulary) -> Result<Self> {
        let days = records
            .iter()
            .map(|r| {
                Ok(CorpusDay {
                    participant_id: r.participant_id.clone(),
                    date: r.date,
                    ids: tokenize(&DayString::new(r.text.clone()), vocab)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(days)
    }

    pub fn days(&self) -> &[CorpusDay] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn num_participants(&self) -> usize {
        self.spans.len()
    }

    /// Index range of the participant owning day `i`.
    pub fn participant_span(&self, i: usize) -> (usize, usize) {
        self.spans[self.span_of_day[i]]
    }

    /// Indices of the anchor's eligible positives: same participant,
    /// 1 ≤ |Δdate| ≤ 30.
    pub fn positive_candidates(&self, anchor: usize) -> impl Iterator<Item = usize> + '_ {
        let (lo, hi) = self.positive_range(anchor);
        (lo..hi).filter(move |&i| i != anchor)
    }

    fn positive_range(&self, anchor: usize) -> (usize, usize) {
        let (start, end) = self.participant_span(anchor);
        let d = self.days[anchor].date;
        let span = &self.days[start..end];
        let lo = span.partition_point(|x| (d - x.date).num_days() > POSITIVE_WINDOW_DAYS);
        let hi = span.partition_point(|x| (x.date - d).num_days() <= POSITIVE_WINDOW_DAYS);
        (start + lo, start + hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSampling {
    /// Uniform over all days of all other participants.
    #[default]
    Day,
    /// Uniform over other participants, then uniform over that participant's days.
    Participant,
}

/// Indices into a [`TrainingCorpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

pub fn sample_triplet(corpus: &TrainingCorpus, rng: &mut Rng, negatives: NegativeSampling) -> Result<Triplet> {
    if corpus.num_participants() < 2 {
        return Err(Error::Sampling("need at least two participants to draw a negative".into()));
    }
    let n = corpus.len();
    for _ in 0..MAX_ANCHOR_REDRAWS {
        let anchor = rng.random_range(0..n);
        let (lo, hi) = corpus.positive_range(anchor);
        let candidates = hi - lo - 1;
        if candidates == 0 {
            continue;
        }
        let mut positive = lo + rng.random_range(0..candidates);
        if positive >= anchor {
            positive += 1;
        }
        let (start, end) = corpus.participant_span(anchor);
        let negative = match negatives {
            NegativeSampling::Day => {
                let r = rng.random_range(0..n - (end - start));
                if r < start {
                    r
                } else {
                    r + (end - start)
                }
            }
            NegativeSampling::Participant => {
                let own = corpus.span_of_day[anchor];
                let mut p = rng.random_range(0..corpus.spans.len() - 1);
                if p >= own {
                    p += 1;
                }
                let (a, b) = corpus.spans[p];
                rng.random_range(a..b)
            }
        };
        return Ok(Triplet { anchor, positive, negative });
    }
    Err(Error::Sampling(format!("no anchor with an eligible positive after {MAX_ANCHOR_REDRAWS} draws")))
}

/// `max(0, margin − cos(a, p) + cos(a, n))`
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    let ap = cosine(anchor, positive)?;
    let an = cosine(anchor, negative)?;
    Ok((margin - ap + an).max(0.0))
}

/// Gradients of `cos(u, v)` with respect to `u` and `v`.
fn cosine_grads(u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    let du = u.iter().zip(v).map(|(a, b)| b / (nu * nv) - c * a / (nu * nu)).collect();
    let dv = u.iter().zip(v).map(|(a, b)| a / (nu * nv) - c * b / (nv * nv)).collect();
    (du, dv, c)
}

/// Token ids for one triplet.
#[derive(Debug, Clone, Copy)]
pub struct TripletIds<'a> {
    pub anchor: &'a [usize],
    pub positive: &'a [usize],
    pub negative: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Mean triplet loss over the batch.
    pub loss: f64,
    pub grads: ModelParams,
    /// Triplets with a positive hinge.
    pub active: usize,
}

fn triplet_grads(
    params: &ModelParams,
    config: &EncoderConfig,
    t: &TripletIds<'_>,
    margin: f64,
) -> Result<(f64, Option<ModelParams>)> {
    let fa = encoder::forward(params, config, t.anchor)?;
    let fp = encoder::forward(params, config, t.positive)?;
    let fn_ = encoder::forward(params, config, t.negative)?;
    let (da_p, dp, cos_ap) = cosine_grads(&fa.output, &fp.output);
    let (da_n, dn, cos_an) = cosine_grads(&fa.output, &fn_.output);
    let loss = margin - cos_ap + cos_an;
    if !loss.is_finite() {
        return Err(Error::NonFinite("triplet loss".into()));
    }
    if loss <= 0.0 {
        return Ok((0.0, None));
    }
    let mut grads = params.zeros_like();
    let da: Vec<f64> = da_p.iter().zip(&da_n).map(|(p, n)| n - p).collect();
    let dp: Vec<f64> = dp.iter().map(|x| -x).collect();
    encoder::backward(params, config, &fa, &da, &mut grads);
    encoder::backward(params, config, &fp, &dp, &mut grads);
    encoder::backward(params, config, &fn_, &dn, &mut grads);
    Ok((loss, Some(grads)))
}

/// Mean triplet loss over `batch` and its gradient with respect to every
/// parameter tensor. Per-triplet work runs in parallel; the reduction is
/// serial in batch order.
pub fn backward(
    params: &ModelParams,
    config: &EncoderConfig,
    batch: &[TripletIds<'_>],
    margin: f64,
) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let parts = batch.par_iter().map(|t| triplet_grads(params, config, t, margin)).collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut active = 0;
    for (l, g) in parts {
        loss += l;
        if let Some(g) = g {
            active += 1;
            grads.add_scaled(&g, scale);
        }
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(name));
    }
    Ok(BatchGradients { loss: loss * scale, grads, active })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
    pub hyper: AdamWHyper,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            hyper: AdamWHyper::default(),
        }
    }
}

/// One AdamW update on flat slices; `step` is the 1-based step count.
///
/// `θ ← θ − lr·(m̂/(√v̂ + ε) + weight_decay·θ)` with bias-corrected moments.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
    hyper: AdamWHyper,
) {
    let bc1 = 1.0 - hyper.beta1.powi(step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(step as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + weight_decay * theta[i]);
    }
}

pub fn adamw_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState, lr: f64, weight_decay: f64) {
    state.step += 1;
    let grads = grads.named_tensors();
    let ms = state.first_moment.tensors_mut();
    let vs = state.second_moment.tensors_mut();
    for (((theta, (_, g)), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        adamw_update(&mut theta.data, &g.data, &mut m.data, &mut v.data, state.step, lr, weight_decay, state.hyper);
    }
}

/// Linear warmup from 0 to `peak_lr` over `[0, warmup_steps]`, then linear
/// decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, warmup_steps: usize, total_steps: usize, peak_lr: f64) -> f64 {
    if step < warmup_steps {
        peak_lr * step as f64 / warmup_steps as f64
    } else if total_steps > warmup_steps {
        peak_lr * total_steps.saturating_sub(step) as f64 / (total_steps - warmup_steps) as f64
    } else {
        peak_lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub triplets_per_epoch: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Caps the number of optimizer steps; `None` runs every batch of every epoch.
    pub total_steps: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub negative_sampling: NegativeSampling,
}

impl TrainConfig {
    /// Defaults sized for a laptop run on a corpus of `corpus_days` days.
    pub fn desk(corpus_days: usize, epochs: usize, seed: u64) -> Self {
        Self {
            triplets_per_epoch: 10_000,
            batch_size: 256,
            margin: 0.25,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            warmup_steps: if corpus_days < 50_000 { 500 } else { 10_000 },
            total_steps: None,
            epochs,
            seed,
            negative_sampling: NegativeSampling::Day,
        }
    }

    /// The published fine-tuning settings: 100,000 triplets per epoch,
    /// batches of 256, learning rate 2e-5, weight decay 0.01, 10,000 warmup steps.
    pub fn paper(epochs: usize, seed: u64) -> Self {
        Self {
            triplets_per_epoch: 100_000,
            batch_size: 256,
            margin: 0.25,
            learning_rate: 2e-5,
            weight_decay: 0.01,
            warmup_steps: 10_000,
            total_steps: None,
            epochs,
            seed,
            negative_sampling: NegativeSampling::Day,
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.triplets_per_epoch.div_ceil(self.batch_size.max(1))
    }

    /// Optimizer steps the run will take.
    pub fn planned_steps(&self) -> usize {
        let all = self.epochs * self.steps_per_epoch();
        self.total_steps.map_or(all, |cap| cap.min(all))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate and weight_decay must be non-negative");
        }
        if self.warmup_steps > self.planned_steps() && self.planned_steps() > 0 {
            return bad("warmup_steps exceeds total steps");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<StepRecord>,
}

/// Fits encoder parameters. `initial` defaults to seeded initialization;
/// `on_epoch_end` receives each finished epoch (for checkpointing).
pub fn train(
    corpus: &TrainingCorpus,
    enc_config: &EncoderConfig,
    config: &TrainConfig,
    initial: Option<ModelParams>,
    mut on_epoch_end: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    enc_config.validate()?;
    config.validate()?;
    let mut params = match initial {
        Some(p) => {
            p.check_shapes(enc_config)?;
            p
        }
        None => encoder::init_params(enc_config, &mut seed::derive_rng(config.seed, "encoder", "init"))?,
    };
    let total = config.planned_steps();
    let mut history = Vec::with_capacity(total);
    if total == 0 {
        return Ok(TrainOutcome { params, history });
    }
    let mut state = OptimizerState::new(&params);
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        let mut rng = seed::derive_rng(config.seed, "trainer", &format!("epoch/{epoch}"));
        let triplets = (0..config.triplets_per_epoch)
            .map(|_| sample_triplet(corpus, &mut rng, config.negative_sampling))
            .collect::<Result<Vec<_>>>()?;
        for chunk in triplets.chunks(config.batch_size) {
            if step == total {
                break 'epochs;
            }
            let batch: Vec<TripletIds<'_>> = chunk
                .iter()
                .map(|t| TripletIds {
                    anchor: &corpus.days[t.anchor].ids,
                    positive: &corpus.days[t.positive].ids,
                    negative: &corpus.days[t.negative].ids,
                })
                .collect();
            let lr = lr_schedule(step, config.warmup_steps, total, config.learning_rate);
            let out = backward(&params, enc_config, &batch, config.margin)?;
            adamw_step(&mut params, &out.grads, &mut state, lr, config.weight_decay);
            if let Some(name) = params.first_non_finite() {
                return Err(Error::NonFinite(name));
            }
            history.push(StepRecord { step, epoch, lr, loss: out.loss });
            step += 1;
            if step % 50 == 0 {
                log::debug!("step {step}/{total} loss {:.4}", out.loss);
            }
        }
        on_epoch_end(epoch, &params)?;
    }
    Ok(TrainOutcome { params, history })
}

pub fn write_history<W: Write>(out: W, history: &[StepRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["step", "epoch", "lr", "loss"])?;
    for r in history {
        wtr.write_record([r.step.to_string(), r.epoch.to_string(), r.lr.to_string(), r.loss.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Mean of the first and last `window` losses.
pub fn loss_trend(history: &[StepRecord], window: usize) -> Option<(f64, f64)> {
    if history.len() < window || window == 0 {
        return None;
    }
    let mean = |s: &[StepRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
    Some((mean(&history[..window]), mean(&history[history.len() - window..])))
}

/// Per-participant day counts, handy for sanity checks.
pub fn days_per_participant(corpus: &TrainingCorpus) -> BTreeMap<String, usize> {
    corpus.spans.iter().map(|&(a, b)| (corpus.days[a].participant_id.clone(), b - a)).collect()
}
