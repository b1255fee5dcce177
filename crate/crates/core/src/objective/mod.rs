//! Task loss, band-masking consistency, band-wise contrastive alignment and
//! their weighted sum.

mod check;
mod contrastive;


use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

pub use check::{check_batch, check_config, check_fixture, composite_gradient_check, CheckFixture};
pub use contrastive::{cosine, info_nce, sample_scr_plan, scr_loss, scr_on_tape, ScrAnchor, ScrNegative, ScrPlan};

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SsrError};
use crate::model::{band_stack_on_tape, embed_on_tape, pair_logits_on_tape, MaskSample, ModelParams, ParamVars, SpectralInputs};

/// Scores are clamped to `[SCORE_CLAMP, 1 − SCORE_CLAMP]` before taking logs.
pub const SCORE_CLAMP: f64 = 1e-7;

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().position(|&y| y != 0.0 && y != 1.0) {
        Some(i) => Err(SsrError::InvalidArgument(format!(
            "label {} at position {i} is not 0 or 1",
            labels[i]
        ))),
        None => Ok(()),
    }
}

fn check_len(context: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(SsrError::shape(context, a, b));
    }
    if a == 0 {
        return Err(SsrError::InvalidArgument(format!("{context}: empty batch")));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities against 0/1 labels.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_len("bce_loss", scores.len(), labels.len())?;
    check_labels(labels)?;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Mean squared difference between full-view and masked-view scores.
pub fn sbm_consistency_loss(full: &[f64], masked: &[f64]) -> Result<f64> {
    check_len("sbm_consistency_loss", full.len(), masked.len())?;
    let total: f64 = full.iter().zip(masked).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(total / full.len() as f64)
}

/// BCE written on logits as `log(1 + e^s) − y·s`, which equals the
/// probability form without clamping.
pub fn bce_on_tape(tape: &mut Tape, logits: Var, labels: &[f64]) -> Result<Var> {
    let p = tape.shape(logits).to_vec();
    if p.len() != 1 {
        return Err(SsrError::shape("bce logits", "[P]", format!("{p:?}")));
    }
    check_len("bce_on_tape", p[0], labels.len())?;
    check_labels(labels)?;
    let n = p[0];
    let col = tape.reshape(logits, &[n, 1])?;
    let zero = tape.constant(ArrayD::zeros(IxDyn(&[n, 1])));
    let both = tape.concat(&[zero, col], 1)?;
    let softplus = tape.logsumexp(both)?;
    let y = tape.constant(ArrayD::from_shape_vec(IxDyn(&[n]), labels.to_vec()).expect("length checked"));
    let ys = tape.mul(y, logits)?;
    let per = tape.sub(softplus, ys)?;
    tape.mean(per)
}

/// Mean of `(σ(a) − σ(b))²` over a batch of logits.
pub fn sbm_on_tape(tape: &mut Tape, full_logits: Var, masked_logits: Var) -> Result<Var> {
    check_len("sbm_on_tape", tape.value(full_logits).len(), tape.value(masked_logits).len())?;
    let a = tape.sigmoid(full_logits);
    let b = tape.sigmoid(masked_logits);
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

/// Weights of the auxiliary terms and the contrastive temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub eta: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.01,
            eta: 0.01,
            tau: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(SsrError::InvalidArgument(format!(
                "loss weights must be finite and non-negative (lambda {}, eta {})",
                self.lambda, self.eta
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(SsrError::InvalidArgument(format!(
                "temperature {} must be positive",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Values of every loss term for one batch or an epoch average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub sbm: f64,
    pub scr: f64,
    pub total: f64,
    pub lambda: f64,
    pub eta: f64,
    pub tau: f64,
}

/// `total = bce + λ·sbm + η·scr`.
pub fn total_loss(bce: f64, sbm: f64, scr: f64, weights: LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    Ok(LossBreakdown {
        bce,
        sbm,
        scr,
        total: bce + weights.lambda * sbm + weights.eta * scr,
        lambda: weights.lambda,
        eta: weights.eta,
        tau: weights.tau,
    })
}

/// Everything random about one optimization step, drawn up front so the
/// loss is a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
    /// One masked view per sample; empty skips the consistency term.
    pub masks: Vec<MaskSample>,
    /// `None` skips the contrastive term.
    pub scr: Option<ScrPlan>,
}

/// Tape handles of the composite objective.
#[derive(Debug, Clone, Copy)]
pub struct CompositeVars {
    pub total: Var,
    pub bce: Var,
    pub sbm: Option<Var>,
    pub scr: Option<Var>,
}

impl CompositeVars {
    pub fn breakdown(&self, tape: &Tape, weights: LossWeights) -> Result<LossBreakdown> {
        let get = |v: Option<Var>| v.map(|v| tape.value(v)[[]]).unwrap_or(0.0);
        let b = total_loss(tape.value(self.bce)[[]], get(self.sbm), get(self.scr), weights)?;
        Ok(LossBreakdown {
            total: tape.value(self.total)[[]],
            ..b
        })
    }
}

/// Records the full objective for one batch on `tape`.
pub fn composite_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    inputs: &SpectralInputs,
    batch: &BatchSpec,
    weights: LossWeights,
) -> Result<CompositeVars> {
    weights.validate()?;
    let shape = &params.shape;
    let pv = ParamVars::register(tape, params);
    let stack = band_stack_on_tape(tape, &pv, shape, inputs)?;
    let full = embed_on_tape(tape, &pv, shape, inputs, stack, None)?;
    let logits = pair_logits_on_tape(tape, full.z, shape.n_users, &batch.pairs)?;
    let bce = bce_on_tape(tape, logits, &batch.labels)?;
    let mut total = bce;

    let sbm = if batch.masks.is_empty() {
        None
    } else {
        let mut acc: Option<Var> = None;
        for mask in &batch.masks {
            let view = embed_on_tape(tape, &pv, shape, inputs, stack, Some(mask))?;
            let masked = pair_logits_on_tape(tape, view.z, shape.n_users, &batch.pairs)?;
            let term = sbm_on_tape(tape, logits, masked)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        let avg = tape.scale(acc.expect("non-empty"), 1.0 / batch.masks.len() as f64);
        let weighted = tape.scale(avg, weights.lambda);
        total = tape.add(total, weighted)?;
        Some(avg)
    };

    let scr = match &batch.scr {
        None => None,
        Some(plan) => {
            let term = scr_on_tape(tape, stack, shape, plan, weights.tau)?;
            let weighted = tape.scale(term, weights.eta);
            total = tape.add(total, weighted)?;
            Some(term)
        }
    };
    Ok(CompositeVars { total, bce, sbm, scr })
}
