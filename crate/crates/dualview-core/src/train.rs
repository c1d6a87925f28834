//! Shared training loop: shuffled micro-batches, gradient accumulation,
//! global-norm clipping, AdamW under a warmup+cosine schedule, periodic
//! validation, and best-checkpoint tracking.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::config::TrainConfig;
use crate::data::CandidateSet;
use crate::losses::{combined_loss_tape, LossError};
use crate::matrix::Element;
use crate::metrics::{evaluate_pairs, MetricsReport};
use crate::model::{ModelError, ScoringModel};
use crate::optim::{clip_gradients, lr_schedule, AdamWConfig, AdamWState};
use crate::params::ParameterRegistry;
use crate::rng::Rng;
use crate::tape::Tape;

#[derive(Debug, Clone)]
pub enum TrainError {
    Config(String),
    Model(ModelError),
    Loss(LossError),
    NoTrainingData,
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::Config(m) => write!(f, "train config: {m}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Loss(e) => write!(f, "{e}"),
            TrainError::NoTrainingData => write!(f, "no training queries"),
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}

/// One optimizer step's worth of telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub bce: f64,
    pub margin: f64,
    pub infonce: f64,
    pub triplet: f64,
    /// gradient norm before clipping
    pub grad_norm: f64,
    pub clip_scale: f64,
    /// queries in this step whose label set made some loss term vacuous
    pub degenerate_queries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    pub metrics: MetricsReport,
}

/// Streamed to the caller as training progresses; the CLI turns these into
/// log lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    Step(StepRecord),
    Eval(EvalRecord),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Element> {
    /// parameters of the best validation checkpoint (final parameters if no
    /// validation set was given)
    pub best_params: ParameterRegistry<F>,
    pub best_metrics: Option<MetricsReport>,
    pub final_metrics: Option<MetricsReport>,
    pub steps: u64,
    /// set when training stopped early on a non-finite loss; the model is
    /// left at the last finite state
    pub aborted: Option<String>,
}

/// Ranks every validation query with the current weights.
pub fn validate_model<F: Element, M: ScoringModel<F>>(
    model: &M,
    queries: &[CandidateSet],
    k: usize,
) -> Result<MetricsReport, ModelError> {
    let mut pairs = Vec::with_capacity(queries.len());
    for set in queries {
        let ranking = model.rank(set)?;
        let labels: Vec<u8> = set.candidates.iter().map(|c| c.label).collect();
        pairs.push((ranking, labels));
    }
    Ok(evaluate_pairs(&pairs, k))
}

/// Better checkpoint = higher full-hit, then higher recall, then higher ndcg.
fn improves(new: &MetricsReport, old: &MetricsReport) -> bool {
    (new.full_hit, new.recall, new.ndcg) > (old.full_hit, old.recall, old.ndcg)
}

/// Trains `model` in place. Validation runs every `cfg.eval_every` optimizer
/// steps (or once per epoch when 0) plus once at the end; the model is left
/// at the best checkpoint. `on_event` observes every step and validation.
pub fn train<F: Element, M: ScoringModel<F>>(
    model: &mut M,
    train_queries: &[CandidateSet],
    val_queries: &[CandidateSet],
    cfg: &TrainConfig,
    k: usize,
    mut on_event: impl FnMut(&TrainEvent),
) -> Result<TrainOutcome<F>, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if train_queries.is_empty() {
        return Err(TrainError::NoTrainingData);
    }

    let queries_per_step = cfg.batch_size * cfg.accumulation_steps;
    let steps_per_epoch = train_queries.len().div_ceil(queries_per_step);
    let total_steps = (steps_per_epoch * cfg.epochs) as u64;

    let mut adam = AdamWState::new(
        AdamWConfig {
            lr: cfg.base_lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        model.registry(),
    );
    let mut shuffle_rng = Rng::new(cfg.seed).fork(0x7368756666);

    let mut step: u64 = 0;
    let mut last_good = model.registry().clone();
    let mut best_params = model.registry().clone();
    let mut best_metrics: Option<MetricsReport> = None;
    let mut aborted: Option<String> = None;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_queries.len()).collect();
        shuffle_rng.shuffle(&mut order);

        for chunk in order.chunks(queries_per_step) {
            let inv = 1.0 / chunk.len() as f64;
            let mut sums = StepRecord {
                step: step + 1,
                epoch,
                lr: 0.0,
                loss: 0.0,
                bce: 0.0,
                margin: 0.0,
                infonce: 0.0,
                triplet: 0.0,
                grad_norm: 0.0,
                clip_scale: 1.0,
                degenerate_queries: 0,
            };
            model.registry_mut().zero_grads();
            let mut bad_loss: Option<String> = None;
            for micro in chunk.chunks(cfg.batch_size) {
                for &qi in micro {
                    let set = &train_queries[qi];
                    let mut tape = Tape::new();
                    let scores = model.forward_scores(&mut tape, set)?;
                    let labels: Vec<u8> = set.candidates.iter().map(|c| c.label).collect();
                    let (loss, breakdown) =
                        combined_loss_tape(&mut tape, scores, &labels, &cfg.loss)?;
                    let scaled = tape.scale(loss, F::from_f64(inv));
                    match tape.backward(scaled) {
                        Ok(grads) => grads.accumulate_into(&tape, model.registry_mut()),
                        Err(e) => {
                            bad_loss = Some(format!("query {}: {e}", set.query_id));
                            break;
                        }
                    }
                    sums.loss += breakdown.total * inv;
                    sums.bce += breakdown.bce * inv;
                    sums.margin += breakdown.margin * inv;
                    sums.infonce += breakdown.infonce * inv;
                    sums.triplet += breakdown.triplet * inv;
                    sums.degenerate_queries += usize::from(breakdown.degenerate);
                }
                if bad_loss.is_some() {
                    break;
                }
            }

            let grad_norm = model.registry().grad_norm().to_f64();
            if bad_loss.is_none() && !grad_norm.is_finite() {
                bad_loss = Some(format!("non-finite gradient norm at step {}", step + 1));
            }
            if let Some(msg) = bad_loss {
                // roll back to the last finite state and stop
                let snapshot = last_good.clone();
                replace_params(model.registry_mut(), &snapshot);
                aborted = Some(msg);
                break 'epochs;
            }

            sums.grad_norm = grad_norm;
            sums.clip_scale = clip_gradients(model.registry_mut(), cfg.max_grad_norm);
            let lr = lr_schedule(step + 1, total_steps, cfg.base_lr, cfg.warmup_fraction)
                .map_err(|e| TrainError::Config(format!("{e:?}")))?;
            sums.lr = lr;
            adam.step(model.registry_mut(), lr);
            step += 1;
            last_good = model.registry().clone();
            on_event(&TrainEvent::Step(sums));

            let eval_now = !val_queries.is_empty()
                && cfg.eval_every != 0
                && step.is_multiple_of(cfg.eval_every as u64);
            if eval_now {
                run_eval(
                    model,
                    val_queries,
                    k,
                    step,
                    epoch,
                    &mut best_params,
                    &mut best_metrics,
                    &mut on_event,
                )?;
            }
        }

        if !val_queries.is_empty() && cfg.eval_every == 0 {
            run_eval(
                model,
                val_queries,
                k,
                step,
                epoch,
                &mut best_params,
                &mut best_metrics,
                &mut on_event,
            )?;
        }
    }

    let final_metrics = if val_queries.is_empty() {
        None
    } else {
        Some(validate_model(model, val_queries, k)?)
    };

    if best_metrics.is_some() {
        // leave the model at its best validation checkpoint
        let best = best_params.clone();
        replace_params(model.registry_mut(), &best);
    } else {
        best_params = model.registry().clone();
    }

    Ok(TrainOutcome {
        best_params,
        best_metrics,
        final_metrics,
        steps: step,
        aborted,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_eval<F: Element, M: ScoringModel<F>>(
    model: &M,
    val_queries: &[CandidateSet],
    k: usize,
    step: u64,
    epoch: usize,
    best_params: &mut ParameterRegistry<F>,
    best_metrics: &mut Option<MetricsReport>,
    on_event: &mut impl FnMut(&TrainEvent),
) -> Result<(), TrainError> {
    let metrics = validate_model(model, val_queries, k)?;
    let better = match best_metrics {
        Some(old) => improves(&metrics, old),
        None => true,
    };
    if better {
        *best_params = model.registry().clone();
        *best_metrics = Some(metrics);
    }
    on_event(&TrainEvent::Eval(EvalRecord {
        step,
        epoch,
        metrics,
    }));
    Ok(())
}

fn replace_params<F: Element>(dst: &mut ParameterRegistry<F>, src: &ParameterRegistry<F>) {
    debug_assert_eq!(dst.len(), src.len());
    for slot in 0..src.len() {
        *dst.value_mut(slot) = src.value(slot).clone();
    }
}
