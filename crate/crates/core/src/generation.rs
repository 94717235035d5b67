//! Beam and greedy search over any [`StepModel`], the neural stepper that
//! resolves placeholders through attention, and lexicalization of results.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::{assemble_token, attend, make_input, step, AttentionTrace, DecoderState, Dropout, MemoryValues, TraceStep};
use crate::math::{argmax, Tape};
use crate::model::{Model, BOS, EOS, PLACEHOLDER, PLACEHOLDER_TOKEN};
use crate::semantics::{lexicalize_lenient, DelexToken, SemanticRepresentation};
use crate::{Error, Result};

pub const DEFAULT_BEAM: usize = 10;
pub const DEFAULT_MAX_LEN: usize = 80;

/// A left-to-right model exposing next-token log-probabilities per state.
pub trait StepModel {
    type State: Clone;

    fn initial(&self) -> Result<Self::State>;

    /// Log-probabilities of the next token in `state`.
    fn log_probs<'s>(&self, state: &'s Self::State) -> &'s [f64];

    /// State after emitting `token`. Never called with the end token.
    fn advance(&self, state: &Self::State, token: usize) -> Result<Self::State>;

    fn end_token(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    /// Emitted tokens, excluding the end token.
    pub tokens: Vec<usize>,
    /// Log-probability of each chosen token, end token included when finished.
    pub step_scores: Vec<f64>,
    pub score: f64,
    pub finished: bool,
    pub state: S,
}

#[derive(Debug, Clone)]
pub struct Search<S> {
    /// Best first, at most the beam size.
    pub hyps: Vec<Hypothesis<S>>,
    /// No hypothesis reached the end token within the length limit.
    pub truncated: bool,
}

fn check_args(beam: usize, max_len: usize) -> Result<()> {
    if beam == 0 || max_len == 0 {
        return Err(Error::Config(format!("beam {beam} and max length {max_len} must be positive")));
    }
    Ok(())
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy<M: StepModel>(model: &M, max_len: usize) -> Result<Search<M::State>> {
    check_args(1, max_len)?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        step_scores: Vec::new(),
        score: 0.0,
        finished: false,
        state: model.initial()?,
    };
    for _ in 0..max_len {
        let lp = model.log_probs(&hyp.state);
        let best = argmax(lp);
        hyp.score += lp[best];
        hyp.step_scores.push(lp[best]);
        if best == model.end_token() {
            hyp.finished = true;
            break;
        }
        hyp.state = model.advance(&hyp.state, best)?;
        hyp.tokens.push(best);
    }
    let truncated = !hyp.finished;
    Ok(Search {
        hyps: vec![hyp],
        truncated,
    })
}

/// Beam search scored by total log-probability. Finished hypotheses leave the
/// beam, which refills from the remaining candidates; the search stops once
/// `beam` hypotheses have finished and no live one can still beat the worst
/// of them, or at `max_len` steps.
pub fn beam_search<M: StepModel>(model: &M, beam: usize, max_len: usize) -> Result<Search<M::State>> {
    check_args(beam, max_len)?;
    let end = model.end_token();
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        step_scores: Vec::new(),
        score: 0.0,
        finished: false,
        state: model.initial()?,
    }];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();
    for _ in 0..max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            for (tok, lp) in model.log_probs(&h.state).iter().enumerate() {
                cands.push((h.score + lp, hi, tok));
            }
        }
        // Highest score first; ties by hypothesis rank, then token id.
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut next = Vec::with_capacity(beam);
        for (score, hi, tok) in cands {
            if next.len() == beam {
                break;
            }
            let parent = &live[hi];
            let mut step_scores = parent.step_scores.clone();
            step_scores.push(model.log_probs(&parent.state)[tok]);
            if tok == end {
                finished.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    step_scores,
                    score,
                    finished: true,
                    state: parent.state.clone(),
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                next.push(Hypothesis {
                    tokens,
                    step_scores,
                    score,
                    finished: false,
                    state: model.advance(&parent.state, tok)?,
                });
            }
        }
        sort_hyps(&mut finished);
        finished.truncate(beam);
        live = next;
        let done = finished.len() == beam
            && live.first().is_none_or(|best| best.score <= finished.last().expect("non-empty").score);
        if done || live.is_empty() {
            break;
        }
    }
    if finished.is_empty() {
        sort_hyps(&mut live);
        live.truncate(beam);
        return Ok(Search {
            hyps: live,
            truncated: true,
        });
    }
    Ok(Search {
        hyps: finished,
        truncated: false,
    })
}

fn sort_hyps<S>(hyps: &mut [Hypothesis<S>]) {
    // Stable: equal scores keep discovery order.
    hyps.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
}

/// Decoding state of the neural model, detached from any tape.
#[derive(Debug, Clone)]
pub struct NeuralState {
    h: Vec<f64>,
    c: Vec<f64>,
    s: Vec<f64>,
    log_p: Vec<f64>,
    /// Output words so far, placeholders already resolved.
    pub words: Vec<String>,
    pub trace: AttentionTrace,
}

/// Adapts a [`Model`] and one SR to [`StepModel`]. Every step runs the same
/// decoder code as training, on a fresh tape, in evaluation mode.
pub struct NeuralStepper<'m> {
    model: &'m Model,
    f_sr: Vec<f64>,
    memory: Option<MemoryValues>,
    /// Informable entries per triple, to decide on occurrence indices.
    repeats: BTreeMap<(String, String, String), usize>,
}

impl<'m> NeuralStepper<'m> {
    pub fn new(model: &'m Model, sr: &SemanticRepresentation) -> Result<Self> {
        let mut tape = Tape::with_params(&model.params);
        let enc = model.encode(&mut tape, sr)?;
        let mut repeats = BTreeMap::new();
        for (_, t) in sr.licensed_tokens(&model.ontology) {
            *repeats.entry(t.triple()).or_insert(0) += 1;
        }
        Ok(NeuralStepper {
            model,
            f_sr: tape.data(enc.f_sr).to_vec(),
            memory: enc.memory.map(|m| m.values(&tape)),
            repeats,
        })
    }

    fn run(&self, h: &[f64], c: &[f64], s: &[f64], word: usize, feedback: Option<Vec<f64>>) -> Result<[Vec<f64>; 4]> {
        let m = self.model;
        let mut tape = Tape::with_params(&m.params);
        let nodes = m.decoder_params().on_tape(&mut tape)?;
        let prev = DecoderState {
            h: tape.input_vec(h.to_vec())?,
            c: tape.input_vec(c.to_vec())?,
            s: tape.input_vec(s.to_vec())?,
        };
        let fb = feedback.map(|f| tape.input_vec(f)).transpose()?;
        let mut off = Dropout::off();
        let x = make_input(&mut tape, &nodes, word, fb, m.feedback_len(), &mut off)?;
        let (st, log_p) = step(&mut tape, &nodes, m.dims.hidden, prev, x, &mut off)?;
        Ok([st.h, st.c, st.s, log_p].map(|n| tape.data(n).to_vec()))
    }

    /// Resolves a placeholder emitted in `state`: attention over the SR's
    /// labels with the current semantic state.
    fn resolve(&self, state: &NeuralState) -> Result<Option<(String, TraceStep, Vec<f64>)>> {
        let Some(mem) = self.memory.as_ref().filter(|m| m.is_resolvable()) else {
            return Ok(None);
        };
        let mut tape = Tape::new();
        let memory = mem.to_tape(&mut tape)?;
        let s = tape.input_vec(state.s.clone())?;
        let dists = attend(&mut tape, s, &memory)?;
        let probs = dists.probs.map(|p| tape.data(p).to_vec());
        let (_, mut token) = assemble_token(&probs, &self.model.ontology);
        if self.repeats.get(&token.triple()).copied().unwrap_or(0) > 1 {
            let before = state
                .words
                .iter()
                .filter_map(|w| DelexToken::parse(w))
                .filter(|t| t.triple() == token.triple())
                .count();
            token.occurrence = Some(before as u32 + 1);
        }
        let feedback = probs.concat();
        let [domain, act, slot] = probs;
        let text = token.to_string();
        Ok(Some((
            text.clone(),
            TraceStep {
                step: state.words.len(),
                domain,
                act,
                slot,
                token: text,
            },
            feedback,
        )))
    }
}

impl StepModel for NeuralStepper<'_> {
    type State = NeuralState;

    fn initial(&self) -> Result<NeuralState> {
        let h = self.model.dims.hidden;
        let zeros = vec![0.0; h];
        let [h, c, s, log_p] = self.run(&zeros, &zeros, &self.f_sr, BOS, None)?;
        Ok(NeuralState {
            h,
            c,
            s,
            log_p,
            words: Vec::new(),
            trace: AttentionTrace::new(&self.model.ontology),
        })
    }

    fn log_probs<'s>(&self, state: &'s NeuralState) -> &'s [f64] {
        &state.log_p
    }

    fn advance(&self, state: &NeuralState, token: usize) -> Result<NeuralState> {
        let mut words = state.words.clone();
        let mut trace = state.trace.clone();
        let mut feedback = None;
        if self.model.mode.has_attention() && token == PLACEHOLDER {
            match self.resolve(state)? {
                Some((word, entry, fb)) => {
                    words.push(word);
                    trace.steps.push(entry);
                    feedback = Some(fb);
                }
                None => {
                    words.push(PLACEHOLDER_TOKEN.into());
                    feedback = Some(vec![0.0; self.model.feedback_len()]);
                }
            }
        } else {
            words.push(self.model.vocab.token(token).to_string());
        }
        let [h, c, s, log_p] = self.run(&state.h, &state.c, &state.s, token, feedback)?;
        Ok(NeuralState {
            h,
            c,
            s,
            log_p,
            words,
            trace,
        })
    }

    fn end_token(&self) -> usize {
        EOS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedHyp {
    pub delex: String,
    pub text: String,
    pub score: f64,
    /// Tokens the SR could not fill, left verbatim in `text`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unresolved: Vec<String>,
    #[serde(skip)]
    pub trace: AttentionTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub hyps: Vec<GeneratedHyp>,
    pub truncated: bool,
}

impl GenerationResult {
    pub fn best(&self) -> &GeneratedHyp {
        &self.hyps[0]
    }
}

/// Lexicalizes every hypothesis against the SR.
pub fn render(search: Search<NeuralState>, sr: &SemanticRepresentation) -> GenerationResult {
    let hyps = search
        .hyps
        .into_iter()
        .map(|h| {
            let delex = h.state.words.join(" ");
            let lex = lexicalize_lenient(sr, &delex);
            GeneratedHyp {
                delex,
                text: lex.text,
                score: h.score,
                unresolved: lex.unresolved.iter().map(ToString::to_string).collect(),
                trace: h.state.trace,
            }
        })
        .collect();
    GenerationResult {
        hyps,
        truncated: search.truncated,
    }
}

pub fn beam_decode(model: &Model, sr: &SemanticRepresentation, beam: usize, max_len: usize) -> Result<GenerationResult> {
    let stepper = NeuralStepper::new(model, sr)?;
    Ok(render(beam_search(&stepper, beam, max_len)?, sr))
}

pub fn greedy_decode(model: &Model, sr: &SemanticRepresentation, max_len: usize) -> Result<GenerationResult> {
    let stepper = NeuralStepper::new(model, sr)?;
    Ok(render(greedy(&stepper, max_len)?, sr))
}

/// Attention distributions at each placeholder of the greedy output.
pub fn trace(model: &Model, sr: &SemanticRepresentation, max_len: usize) -> Result<(GeneratedHyp, AttentionTrace)> {
    if !model.mode.has_attention() {
        return Err(Error::Mode(format!("no attention in this mode ({})", model.mode)));
    }
    let result = greedy_decode(model, sr, max_len)?;
    let best = result.hyps.into_iter().next().expect("greedy returns one hypothesis");
    let trace = best.trace.clone();
    Ok((best, trace))
}
