//! The four-term training objective: pointwise BCE, pairwise margin,
//! listwise InfoNCE, and hardest-negative triplet, all in score space.
//!
//! Each loss has a tape-level builder (used by training, differentiable)
//! and a value-level wrapper that evaluates the same graph on constants.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::matrix::{Element, Matrix};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossConfig {
    pub weight_bce: f64,
    pub weight_margin: f64,
    pub weight_infonce: f64,
    pub weight_triplet: f64,
    pub margin_pairwise: f64,
    pub margin_triplet: f64,
    pub infonce_temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weight_bce: 1.0,
            weight_margin: 1.0,
            weight_infonce: 1.0,
            weight_triplet: 1.0,
            margin_pairwise: 1.0,
            margin_triplet: 0.5,
            infonce_temperature: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.infonce_temperature <= 0.0 {
            return Err(LossError::InvalidConfig(String::from(
                "infonce_temperature must be positive",
            )));
        }
        if self.margin_pairwise < 0.0 || self.margin_triplet < 0.0 {
            return Err(LossError::InvalidConfig(String::from(
                "margins must be nonnegative",
            )));
        }
        let weights = [
            self.weight_bce,
            self.weight_margin,
            self.weight_infonce,
            self.weight_triplet,
        ];
        if weights.iter().any(|w| *w < 0.0) {
            return Err(LossError::InvalidConfig(String::from(
                "loss weights must be nonnegative",
            )));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(LossError::InvalidConfig(String::from(
                "at least one loss weight must be positive",
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LossError {
    EmptyInput,
    LengthMismatch { scores: usize, labels: usize },
    InvalidConfig(String),
}

impl core::fmt::Display for LossError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LossError::EmptyInput => write!(f, "loss on empty candidate list"),
            LossError::LengthMismatch { scores, labels } => {
                write!(f, "{scores} scores vs {labels} labels")
            }
            LossError::InvalidConfig(msg) => write!(f, "invalid loss config: {msg}"),
        }
    }
}

/// A loss term plus a flag marking degenerate label sets (no positive or no
/// negative present), in which case the value is zero by convention.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm {
    pub var: Var,
    pub degenerate: bool,
}

fn split_labels(labels: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    (pos, neg)
}

fn check_inputs<F: Element>(
    tape: &Tape<F>,
    scores: Var,
    labels: &[u8],
) -> Result<(), LossError> {
    let n = tape.value(scores).len();
    if n == 0 || labels.is_empty() {
        return Err(LossError::EmptyInput);
    }
    if n != labels.len() {
        return Err(LossError::LengthMismatch {
            scores: n,
            labels: labels.len(),
        });
    }
    debug_assert_eq!(tape.value(scores).rows(), 1, "scores must be a 1xN row");
    Ok(())
}

/// Mean binary cross-entropy with logits, in the overflow-free
/// `softplus(s) - y*s` form.
pub fn bce_loss_tape<F: Element>(
    tape: &mut Tape<F>,
    scores: Var,
    labels: &[u8],
) -> Result<Var, LossError> {
    check_inputs(tape, scores, labels)?;
    let y = tape.constant(Matrix::row_vector(
        &labels.iter().map(|&l| F::from_f32(l as f32)).collect::<Vec<_>>(),
    ));
    let sp = tape.softplus(scores);
    let ys = tape.mul(y, scores);
    let per_doc = tape.sub(sp, ys);
    Ok(tape.mean(per_doc))
}

/// Mean over all (positive, negative) pairs of `max(0, m - (s_pos - s_neg))`.
pub fn margin_loss_tape<F: Element>(
    tape: &mut Tape<F>,
    scores: Var,
    labels: &[u8],
    margin: f64,
) -> Result<LossTerm, LossError> {
    check_inputs(tape, scores, labels)?;
    let (pos, neg) = split_labels(labels);
    if pos.is_empty() || neg.is_empty() {
        let var = tape.constant(Matrix::scalar(F::zero()));
        return Ok(LossTerm { var, degenerate: true });
    }
    let mut terms = Vec::with_capacity(pos.len() * neg.len());
    for &p in &pos {
        let sp = tape.select(scores, 0, p);
        for &q in &neg {
            let sq = tape.select(scores, 0, q);
            let diff = tape.sub(sq, sp); // s_neg - s_pos
            let shifted = tape.add_scalar(diff, F::from_f64(margin));
            terms.push(tape.relu(shifted));
        }
    }
    let all = tape.concat_cols(&terms);
    let var = tape.mean(all);
    Ok(LossTerm { var, degenerate: false })
}

/// Mean over positives of `-log softmax(s/tau)[p]`, denominator over all
/// candidates.
pub fn infonce_loss_tape<F: Element>(
    tape: &mut Tape<F>,
    scores: Var,
    labels: &[u8],
    temperature: f64,
) -> Result<LossTerm, LossError> {
    check_inputs(tape, scores, labels)?;
    let (pos, _) = split_labels(labels);
    if pos.is_empty() {
        let var = tape.constant(Matrix::scalar(F::zero()));
        return Ok(LossTerm { var, degenerate: true });
    }
    let scaled = tape.scale(scores, F::from_f64(1.0 / temperature));
    let lse = tape.logsumexp_rows(scaled);
    let mut terms = Vec::with_capacity(pos.len());
    for &p in &pos {
        let sp = tape.select(scaled, 0, p);
        terms.push(tape.sub(lse, sp));
    }
    let all = tape.concat_cols(&terms);
    let var = tape.mean(all);
    Ok(LossTerm { var, degenerate: false })
}

/// Score-space triplet with hardest-negative mining: mean over positives of
/// `max(0, m - (s_pos - max_neg s_neg))`. The hardest negative is selected
/// by value; the (sub)gradient flows through the selected element.
pub fn triplet_loss_tape<F: Element>(
    tape: &mut Tape<F>,
    scores: Var,
    labels: &[u8],
    margin: f64,
) -> Result<LossTerm, LossError> {
    check_inputs(tape, scores, labels)?;
    let (pos, neg) = split_labels(labels);
    if pos.is_empty() || neg.is_empty() {
        let var = tape.constant(Matrix::scalar(F::zero()));
        return Ok(LossTerm { var, degenerate: true });
    }
    let values = tape.value(scores).clone();
    let hardest = neg
        .iter()
        .copied()
        .max_by(|&a, &b| {
            values
                .get(0, a)
                .partial_cmp(&values.get(0, b))
                .unwrap_or(core::cmp::Ordering::Equal)
        })
        .expect("nonempty negatives");
    let s_hard = tape.select(scores, 0, hardest);
    let mut terms = Vec::with_capacity(pos.len());
    for &p in &pos {
        let sp = tape.select(scores, 0, p);
        let diff = tape.sub(s_hard, sp);
        let shifted = tape.add_scalar(diff, F::from_f64(margin));
        terms.push(tape.relu(shifted));
    }
    let all = tape.concat_cols(&terms);
    let var = tape.mean(all);
    Ok(LossTerm { var, degenerate: false })
}

/// Per-term values of the combined objective, for logging.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub bce: f64,
    pub margin: f64,
    pub infonce: f64,
    pub triplet: f64,
    pub degenerate: bool,
}

/// Weighted sum of the four components. Components with zero weight are not
/// built at all.
pub fn combined_loss_tape<F: Element>(
    tape: &mut Tape<F>,
    scores: Var,
    labels: &[u8],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown), LossError> {
    cfg.validate()?;
    check_inputs(tape, scores, labels)?;
    let mut breakdown = LossBreakdown::default();
    let mut weighted: Vec<Var> = Vec::with_capacity(4);

    if cfg.weight_bce > 0.0 {
        let v = bce_loss_tape(tape, scores, labels)?;
        breakdown.bce = tape.value(v).item().to_f64();
        weighted.push(tape.scale(v, F::from_f64(cfg.weight_bce)));
    }
    if cfg.weight_margin > 0.0 {
        let term = margin_loss_tape(tape, scores, labels, cfg.margin_pairwise)?;
        breakdown.margin = tape.value(term.var).item().to_f64();
        breakdown.degenerate |= term.degenerate;
        weighted.push(tape.scale(term.var, F::from_f64(cfg.weight_margin)));
    }
    if cfg.weight_infonce > 0.0 {
        let term = infonce_loss_tape(tape, scores, labels, cfg.infonce_temperature)?;
        breakdown.infonce = tape.value(term.var).item().to_f64();
        breakdown.degenerate |= term.degenerate;
        weighted.push(tape.scale(term.var, F::from_f64(cfg.weight_infonce)));
    }
    if cfg.weight_triplet > 0.0 {
        let term = triplet_loss_tape(tape, scores, labels, cfg.margin_triplet)?;
        breakdown.triplet = tape.value(term.var).item().to_f64();
        breakdown.degenerate |= term.degenerate;
        weighted.push(tape.scale(term.var, F::from_f64(cfg.weight_triplet)));
    }

    let stacked = tape.concat_cols(&weighted);
    let total = tape.sum(stacked);
    breakdown.total = tape.value(total).item().to_f64();
    Ok((total, breakdown))
}

fn with_constant_scores<F: Element, T>(
    scores: &[F],
    f: impl FnOnce(&mut Tape<F>, Var) -> Result<T, LossError>,
) -> Result<T, LossError> {
    let mut tape = Tape::new();
    let v = tape.constant(Matrix::row_vector(scores));
    f(&mut tape, v)
}

pub fn bce_loss<F: Element>(scores: &[F], labels: &[u8]) -> Result<F, LossError> {
    with_constant_scores(scores, |t, s| {
        let v = bce_loss_tape(t, s, labels)?;
        Ok(t.value(v).item())
    })
}

pub fn margin_loss<F: Element>(scores: &[F], labels: &[u8], margin: f64) -> Result<(F, bool), LossError> {
    with_constant_scores(scores, |t, s| {
        let term = margin_loss_tape(t, s, labels, margin)?;
        Ok((t.value(term.var).item(), term.degenerate))
    })
}

pub fn infonce_loss<F: Element>(
    scores: &[F],
    labels: &[u8],
    temperature: f64,
) -> Result<(F, bool), LossError> {
    with_constant_scores(scores, |t, s| {
        let term = infonce_loss_tape(t, s, labels, temperature)?;
        Ok((t.value(term.var).item(), term.degenerate))
    })
}

pub fn triplet_loss<F: Element>(
    scores: &[F],
    labels: &[u8],
    margin: f64,
) -> Result<(F, bool), LossError> {
    with_constant_scores(scores, |t, s| {
        let term = triplet_loss_tape(t, s, labels, margin)?;
        Ok((t.value(term.var).item(), term.degenerate))
    })
}

pub fn combined_loss<F: Element>(
    scores: &[F],
    labels: &[u8],
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    with_constant_scores(scores, |t, s| {
        let (_, breakdown) = combined_loss_tape(t, s, labels, cfg)?;
        Ok(breakdown)
    })
}
