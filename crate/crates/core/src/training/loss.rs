use serde::{Deserialize, Serialize};

use crate::decoder::{attend, make_input, step, DecoderState, Dropout};
use crate::math::{grad_check, GradCheckOptions, GradCheckReport, NodeId, Tape};
use crate::model::{Model, Target, PLACEHOLDER};
use crate::semantics::SemanticRepresentation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Negative log-likelihood of the reference words.
    Nll,
    /// NLL plus the negative log-probabilities of the true domain, act and
    /// slot at every placeholder.
    Att,
}

/// `-Σ log p(y_t)` given per-step log-distributions.
pub fn nll_loss(log_probs: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if log_probs.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} distributions for {} targets",
            log_probs.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    for (lp, &y) in log_probs.iter().zip(targets) {
        let v = lp
            .get(y)
            .ok_or_else(|| Error::Contract(format!("target id {y} outside vocabulary of {}", lp.len())))?;
        loss -= v;
    }
    Ok(loss)
}

/// Adds `-(log p_d + log p_a + log p_s)` at the true labels of every
/// placeholder step to `nll`. Each step gives three distributions and the
/// three true label indices.
pub fn att_loss(nll: f64, steps: &[([&[f64]; 3], [usize; 3])]) -> Result<f64> {
    let mut loss = nll;
    for (dists, labels) in steps {
        for k in 0..3 {
            let p = *dists[k]
                .get(labels[k])
                .ok_or_else(|| Error::Contract(format!("label {} outside distribution", labels[k])))?;
            if p <= 0.0 {
                return Err(Error::Contract(format!("true label {} has no probability mass", labels[k])));
            }
            loss -= p.ln();
        }
    }
    Ok(loss)
}

/// Teacher-forced loss of one sentence, built on `tape`.
pub fn sentence_loss(
    tape: &mut Tape<'_>,
    model: &Model,
    sr: &SemanticRepresentation,
    target: &Target,
    objective: Objective,
    dropout: &mut Dropout<'_>,
) -> Result<NodeId> {
    let h = model.dims.hidden;
    let enc = model.encode(tape, sr)?;
    let nodes = model.decoder_params().on_tape(tape)?;
    let zeros = tape.input_vec(vec![0.0; h])?;
    let mut state = DecoderState {
        h: zeros,
        c: zeros,
        s: enc.f_sr,
    };
    let fb_len = model.feedback_len();
    let mut feedback = None;
    let mut terms = Vec::with_capacity(target.outputs.len() + 3 * target.labels.len());
    for (t, (&x_id, &y)) in target.inputs.iter().zip(&target.outputs).enumerate() {
        let x = make_input(tape, &nodes, x_id, feedback.take(), fb_len, dropout)?;
        let (next, log_p) = step(tape, &nodes, h, state, x, dropout)?;
        state = next;
        terms.push(tape.pick(log_p, y)?);
        if model.mode.has_attention() && y == PLACEHOLDER {
            let memory = enc.memory.as_ref().expect("attention mode keeps a memory");
            let dists = attend(tape, state.s, memory)?;
            feedback = Some(dists.feedback(tape)?);
            if let (Objective::Att, Some(labels)) = (objective, target.labels[t]) {
                for (k, &label) in labels.iter().enumerate() {
                    if let Some(lp) = dists.log_prob_of(tape, k, label)? {
                        terms.push(lp);
                    }
                }
            }
        }
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.affine(total, -1.0, 0.0)?)
}

/// Finite-difference check of the sentence loss gradients for every
/// parameter tensor of `model`, dropout disabled.
pub fn check_sentence_gradients(
    model: &Model,
    sr: &SemanticRepresentation,
    text: &str,
    objective: Objective,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let target = model.target(sr, text);
    grad_check(
        &model.params,
        |tape| sentence_loss(tape, model, sr, &target, objective, &mut Dropout::off()),
        opts,
    )
}
