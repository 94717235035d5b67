//! Decoder cell with reading/writing gates over a semantic state, and the
//! layer-wise attention that resolves placeholders into delex tokens.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{gate, Layer, NodeStates, SemTree};
use crate::math::{argmax, NodeId, ParamId, Tape};
use crate::semantics::{DelexToken, Ontology};
use crate::{Error, Result};

/// Decoder parameter ids. `w_x`, `u_h` and `b` stack the seven transforms
/// `[i; f; o; g; r; w; d]`; `v_s` stacks only `[r; w; d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub embed: ParamId,
    pub w_x: ParamId,
    pub u_h: ParamId,
    pub v_s: ParamId,
    pub b: ParamId,
    pub w_out: ParamId,
}

/// Decoder parameters pushed onto one tape.
#[derive(Debug, Clone, Copy)]
pub struct DecoderNodes {
    embed: NodeId,
    w_x: NodeId,
    u_h: NodeId,
    v_s: NodeId,
    b: NodeId,
    w_out: NodeId,
}

impl DecoderParams {
    pub fn on_tape(&self, tape: &mut Tape<'_>) -> Result<DecoderNodes> {
        Ok(DecoderNodes {
            embed: tape.param(self.embed)?,
            w_x: tape.param(self.w_x)?,
            u_h: tape.param(self.u_h)?,
            v_s: tape.param(self.v_s)?,
            b: tape.param(self.b)?,
            w_out: tape.param(self.w_out)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: NodeId,
    pub c: NodeId,
    /// Semantic state, initialized with the SR embedding.
    pub s: NodeId,
}

/// Dropout setting for one forward pass; no generator means evaluation.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn apply(&mut self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        match self.rng.as_deref_mut() {
            Some(rng) => Ok(tape.dropout(x, self.rate, true, rng)?),
            None => Ok(x),
        }
    }
}

/// Word embedding (with dropout) followed by the feedback block, which is
/// zeros unless attention distributions from the previous step are given.
pub fn make_input(
    tape: &mut Tape<'_>,
    nodes: &DecoderNodes,
    word: usize,
    feedback: Option<NodeId>,
    feedback_len: usize,
    dropout: &mut Dropout<'_>,
) -> Result<NodeId> {
    let e = tape.row(nodes.embed, word)?;
    let e = dropout.apply(tape, e)?;
    if feedback_len == 0 {
        if feedback.is_some() {
            return Err(Error::Contract("feedback given to a decoder without a feedback block".into()));
        }
        return Ok(e);
    }
    let block = match feedback {
        Some(f) => {
            if tape.value(f).numel() != feedback_len {
                return Err(Error::Contract(format!(
                    "feedback block has {} values, expected {feedback_len}",
                    tape.value(f).numel()
                )));
            }
            f
        }
        None => tape.input_vec(vec![0.0; feedback_len])?,
    };
    Ok(tape.concat(&[e, block])?)
}

/// One decoder step. Returns the new state and log-probabilities over the
/// vocabulary.
pub fn step(
    tape: &mut Tape<'_>,
    nodes: &DecoderNodes,
    hidden: usize,
    prev: DecoderState,
    x: NodeId,
    dropout: &mut Dropout<'_>,
) -> Result<(DecoderState, NodeId)> {
    let wx = tape.matmul(nodes.w_x, x)?;
    let uh = tape.matmul(nodes.u_h, prev.h)?;
    let z = tape.add_n(&[wx, uh, nodes.b])?;
    let vs = tape.matmul(nodes.v_s, prev.s)?;
    let i = gate(tape, z, 0, hidden, false)?;
    let f = gate(tape, z, 1, hidden, false)?;
    let o = gate(tape, z, 2, hidden, false)?;
    let g = gate(tape, z, 3, hidden, true)?;
    let rwd = tape.slice(z, 4 * hidden, 3 * hidden)?;
    let rwd = tape.add(rwd, vs)?;
    let r = gate(tape, rwd, 0, hidden, false)?;
    let w = gate(tape, rwd, 1, hidden, false)?;
    let d = gate(tape, rwd, 2, hidden, true)?;

    let ig = tape.mul(i, g)?;
    let fc = tape.mul(f, prev.c)?;
    let c = tape.add(ig, fc)?;
    let wd = tape.mul(w, d)?;
    let rs = tape.mul(r, prev.s)?;
    let s = tape.add(wd, rs)?;
    let tc = tape.tanh(c)?;
    let ts = tape.tanh(s)?;
    let oc = tape.mul(o, tc)?;
    let not_o = tape.one_minus(o)?;
    let os = tape.mul(not_o, ts)?;
    let h = tape.add(oc, os)?;

    let h_out = dropout.apply(tape, h)?;
    let logits = tape.matmul(nodes.w_out, h_out)?;
    let log_p = tape.log_softmax(logits)?;
    Ok((DecoderState { h, c, s }, log_p))
}

/// Per-layer label states that attention scores against: for each of the
/// domain, act and slot layers, the activated labels in ascending order and
/// the sum of their nodes' hidden states.
#[derive(Debug, Clone)]
pub struct AttentionMemory {
    layers: [Vec<(usize, NodeId)>; 3],
    sizes: [usize; 3],
}

/// [`AttentionMemory`] detached from its tape.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryValues {
    layers: [Vec<(usize, Vec<f64>)>; 3],
    sizes: [usize; 3],
}

const LAYERS: [Layer; 3] = [Layer::Domain, Layer::Act, Layer::Slot];

impl AttentionMemory {
    pub fn gather(tape: &mut Tape<'_>, tree: &SemTree, states: &NodeStates, ontology: &Ontology) -> Result<Self> {
        let mut layers: [Vec<(usize, NodeId)>; 3] = Default::default();
        for (k, layer) in LAYERS.into_iter().enumerate() {
            for (label, nodes) in tree.labels(layer) {
                let hs: Vec<NodeId> = nodes.iter().map(|&n| states.h[n]).collect();
                let h = if hs.len() == 1 { hs[0] } else { tape.add_n(&hs)? };
                layers[k].push((label, h));
            }
        }
        Ok(AttentionMemory {
            layers,
            sizes: label_sizes(ontology),
        })
    }

    /// Builds a memory directly from label states, e.g. hand-set vectors.
    pub fn from_parts(layers: [Vec<(usize, NodeId)>; 3], sizes: [usize; 3]) -> Self {
        AttentionMemory { layers, sizes }
    }

    pub fn values(&self, tape: &Tape<'_>) -> MemoryValues {
        MemoryValues {
            layers: self
                .layers
                .clone()
                .map(|l| l.into_iter().map(|(label, n)| (label, tape.data(n).to_vec())).collect()),
            sizes: self.sizes,
        }
    }

    pub fn support(&self, layer: usize) -> Vec<usize> {
        self.layers[layer].iter().map(|(l, _)| *l).collect()
    }
}

impl MemoryValues {
    pub fn to_tape(&self, tape: &mut Tape<'_>) -> Result<AttentionMemory> {
        let mut layers: [Vec<(usize, NodeId)>; 3] = Default::default();
        for (k, l) in self.layers.iter().enumerate() {
            for (label, v) in l {
                layers[k].push((*label, tape.input_vec(v.clone())?));
            }
        }
        Ok(AttentionMemory {
            layers,
            sizes: self.sizes,
        })
    }

    pub fn is_resolvable(&self) -> bool {
        self.layers.iter().all(|l| !l.is_empty())
    }
}

pub fn label_sizes(ontology: &Ontology) -> [usize; 3] {
    [ontology.domains().len(), ontology.acts().len(), ontology.slots().len()]
}

/// Attention output for one placeholder step.
#[derive(Debug, Clone)]
pub struct LayerDists {
    /// Distributions over the full label sets, zero off the support.
    pub probs: [NodeId; 3],
    /// Log-probabilities over the support only, aligned with `support`.
    pub log_probs: [NodeId; 3],
    pub support: [Vec<usize>; 3],
}

impl LayerDists {
    /// Log-probability of `label` in `layer`, if it is in the support.
    pub fn log_prob_of(&self, tape: &mut Tape<'_>, layer: usize, label: usize) -> Result<Option<NodeId>> {
        match self.support[layer].iter().position(|&l| l == label) {
            Some(i) => Ok(Some(tape.pick(self.log_probs[layer], i)?)),
            None => Ok(None),
        }
    }

    /// `[p_d ‖ p_a ‖ p_s]`, the next step's feedback block.
    pub fn feedback(&self, tape: &mut Tape<'_>) -> Result<NodeId> {
        Ok(tape.concat(&self.probs)?)
    }
}

/// Scores every activated label of each layer by its dot product with the
/// semantic state and normalizes over the activated labels.
pub fn attend(tape: &mut Tape<'_>, s_t: NodeId, memory: &AttentionMemory) -> Result<LayerDists> {
    let mut probs = Vec::with_capacity(3);
    let mut log_probs = Vec::with_capacity(3);
    for (k, layer) in memory.layers.iter().enumerate() {
        if layer.is_empty() {
            return Err(Error::Contract(format!("no activated labels in the {:?} layer", LAYERS[k])));
        }
        let scores: Vec<NodeId> = layer
            .iter()
            .map(|&(_, h)| tape.dot(s_t, h))
            .collect::<std::result::Result<_, _>>()?;
        let scores = tape.concat(&scores)?;
        let p = tape.softmax(scores)?;
        let positions: Vec<usize> = layer.iter().map(|(l, _)| *l).collect();
        probs.push(tape.scatter(p, &positions, memory.sizes[k])?);
        log_probs.push(tape.log_softmax(scores)?);
    }
    Ok(LayerDists {
        probs: [probs[0], probs[1], probs[2]],
        log_probs: [log_probs[0], log_probs[1], log_probs[2]],
        support: [memory.support(0), memory.support(1), memory.support(2)],
    })
}

/// Argmax label per layer (lowest index on ties) and the resulting token.
pub fn assemble_token(dists: &[Vec<f64>; 3], ontology: &Ontology) -> ([usize; 3], DelexToken) {
    let idx = [argmax(&dists[0]), argmax(&dists[1]), argmax(&dists[2])];
    let token = DelexToken::new(
        &ontology.domains()[idx[0]],
        &ontology.acts()[idx[1]],
        &ontology.slots()[idx[2]],
    );
    (idx, token)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Position of the placeholder in the output, from 0.
    pub step: usize,
    pub domain: Vec<f64>,
    pub act: Vec<f64>,
    pub slot: Vec<f64>,
    pub token: String,
}

/// Attention distributions at every placeholder of one output, for
/// inspection and heatmaps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub domains: Vec<String>,
    pub acts: Vec<String>,
    pub slots: Vec<String>,
    pub steps: Vec<TraceStep>,
}

impl AttentionTrace {
    pub fn new(ontology: &Ontology) -> Self {
        AttentionTrace {
            domains: ontology.domains().to_vec(),
            acts: ontology.acts().to_vec(),
            slots: ontology.slots().to_vec(),
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// One CSV matrix for `layer` (0 domain, 1 act, 2 slot): a header of
    /// labels, then one row per placeholder step.
    pub fn to_csv(&self, layer: usize) -> String {
        let labels = [&self.domains, &self.acts, &self.slots][layer];
        let mut out = String::from("step,token");
        for l in labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for s in &self.steps {
            let row = [&s.domain, &s.act, &s.slot][layer];
            let _ = write!(out, "{},{}", s.step, s.token);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{softmax_slice, ParamSet, Tensor};

    fn zero_decoder(x: usize, h: usize, v: usize) -> (ParamSet, DecoderParams) {
        let mut ps = ParamSet::new();
        let p = DecoderParams {
            embed: ps.add("embed", Tensor::zeros(&[v, x])),
            w_x: ps.add("w_x", Tensor::zeros(&[7 * h, x])),
            u_h: ps.add("u_h", Tensor::zeros(&[7 * h, h])),
            v_s: ps.add("v_s", Tensor::zeros(&[3 * h, h])),
            b: ps.add("b", Tensor::zeros(&[7 * h])),
            w_out: ps.add("w_out", Tensor::zeros(&[v, h])),
        };
        (ps, p)
    }

    #[test]
    fn zero_params_halve_semantic_state() {
        let (ps, p) = zero_decoder(3, 2, 4);
        let mut tape = Tape::with_params(&ps);
        let nodes = p.on_tape(&mut tape).unwrap();
        let h0 = tape.input_vec(vec![0.0; 2]).unwrap();
        let c0 = tape.input_vec(vec![0.0; 2]).unwrap();
        let s0 = tape.input_vec(vec![0.8, -1.4]).unwrap();
        let x = make_input(&mut tape, &nodes, 1, None, 0, &mut Dropout::off()).unwrap();
        let (st, log_p) = step(&mut tape, &nodes, 2, DecoderState { h: h0, c: c0, s: s0 }, x, &mut Dropout::off()).unwrap();
        assert_eq!(tape.data(st.s), &[0.4, -0.7]);
        let expect: Vec<f64> = [0.4f64, -0.7].iter().map(|v| 0.5 * v.tanh()).collect();
        assert_eq!(tape.data(st.h), expect.as_slice());
        assert_eq!(tape.data(st.c), &[0.0, 0.0]);
        // Uniform output.
        for v in tape.data(log_p) {
            assert!((v + 4f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (ps, p) = zero_decoder(3, 2, 4);
        let mut tape = Tape::with_params(&ps);
        let nodes = p.on_tape(&mut tape).unwrap();
        let h0 = tape.input_vec(vec![0.0; 3]).unwrap();
        let x = tape.input_vec(vec![0.0; 3]).unwrap();
        let r = step(&mut tape, &nodes, 2, DecoderState { h: h0, c: h0, s: h0 }, x, &mut Dropout::off());
        assert!(r.is_err());
    }

    fn memory(tape: &mut Tape<'_>, slots: &[Vec<f64>], sizes: [usize; 3]) -> AttentionMemory {
        let d = tape.input_vec(vec![1.0]).unwrap();
        let layers = [
            vec![(0, d)],
            vec![(0, d)],
            slots.iter().enumerate().map(|(i, v)| (i, tape.input_vec(v.clone()).unwrap())).collect(),
        ];
        AttentionMemory::from_parts(layers, sizes)
    }

    #[test]
    fn singleton_layer_gets_all_mass() {
        let mut tape = Tape::new();
        let s = tape.input_vec(vec![1.0, 2.0]).unwrap();
        let h = tape.input_vec(vec![3.0, 4.0]).unwrap();
        let mem = AttentionMemory::from_parts([vec![(0, h)], vec![(1, h)], vec![(0, h)]], [1, 2, 1]);
        let dists = attend(&mut tape, s, &mem).unwrap();
        assert_eq!(tape.data(dists.probs[0]), &[1.0]);
        assert_eq!(tape.data(dists.probs[1]), &[0.0, 1.0]);
    }

    #[test]
    fn equal_states_give_uniform() {
        let mut tape = Tape::new();
        let s = tape.input_vec(vec![0.3]).unwrap();
        let mem = memory(&mut tape, &[vec![2.0], vec![2.0]], [1, 1, 2]);
        let dists = attend(&mut tape, s, &mem).unwrap();
        assert_eq!(tape.data(dists.probs[2]), &[0.5, 0.5]);
    }

    #[test]
    fn three_slots_match_hand_softmax() {
        let mut tape = Tape::new();
        let s = tape.input_vec(vec![1.0]).unwrap();
        let mem = memory(&mut tape, &[vec![1.0], vec![2.0], vec![3.0]], [1, 1, 3]);
        let dists = attend(&mut tape, s, &mem).unwrap();
        let z = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        let expect = [1.0 - z, 2.0 - z, 3.0 - z].map(f64::exp);
        for (a, b) in tape.data(dists.probs[2]).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let sum: f64 = tape.data(dists.probs[2]).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_layer_is_a_contract_error() {
        let mut tape = Tape::new();
        let s = tape.input_vec(vec![1.0]).unwrap();
        let mem = memory(&mut tape, &[], [1, 1, 3]);
        assert!(matches!(attend(&mut tape, s, &mem), Err(Error::Contract(_))));
    }

    #[test]
    fn assemble_picks_argmax_and_breaks_ties_low() {
        let o = Ontology::from_json_str(
            r#"{"attraction": {"inform": {"area": "informable", "type": "informable"}},
                "hotel": {"inform": {"area": "informable"}}}"#,
        )
        .unwrap();
        let (idx, tok) = assemble_token(&[vec![0.9, 0.1], vec![1.0], vec![0.7, 0.3]], &o);
        assert_eq!(idx, [0, 0, 0]);
        assert_eq!(tok.to_string(), "@attraction-inform-area");
        let (idx, _) = assemble_token(&[vec![0.5, 0.5], vec![1.0], vec![0.5, 0.5]], &o);
        assert_eq!(idx, [0, 0, 0]);
    }

    #[test]
    fn trace_csv_layout() {
        let o = Ontology::from_json_str(r#"{"hotel": {"inform": {"area": "informable", "name": "informable"}}}"#).unwrap();
        let mut trace = AttentionTrace::new(&o);
        trace.steps.push(TraceStep {
            step: 2,
            domain: vec![1.0],
            act: vec![1.0],
            slot: softmax_slice(&[0.0, 0.0]),
            token: "@hotel-inform-area".into(),
        });
        assert_eq!(trace.to_csv(2), "step,token,area,name\n2,@hotel-inform-area,0.5,0.5\n");
    }
}
