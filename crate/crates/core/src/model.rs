//! Model container: mode, dimensions, output vocabulary and the parameter
//! layout shared by training and generation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{AttentionMemory, DecoderParams};
use crate::encoder::{encode_flat, encode_tree, EncoderVocab, FlatEncoderParams, SemTree, TreeEncoderParams};
use crate::math::{NodeId, ParamSet, Tape, Tensor};
use crate::semantics::{delexicalize, tokenize, DelexToken, Example, Ontology, SemanticRepresentation, SlotProperty};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Tree encoder; the decoder emits a placeholder resolved by layer-wise
    /// attention.
    #[serde(rename = "tree+att")]
    TreeAtt,
    /// Tree encoder; delexicalized tokens are ordinary vocabulary items.
    #[serde(rename = "tree")]
    Tree,
    /// Indicator-vector encoder; delexicalized tokens are vocabulary items.
    #[serde(rename = "flat")]
    Flat,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::TreeAtt, Mode::Tree, Mode::Flat];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TreeAtt => "tree+att",
            Mode::Tree => "tree",
            Mode::Flat => "flat",
        }
    }

    pub fn has_attention(self) -> bool {
        self == Mode::TreeAtt
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected tree+att, tree or flat)")))
    }
}

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
/// Id of `@` in attention mode.
pub const PLACEHOLDER: usize = 3;
pub const PLACEHOLDER_TOKEN: &str = "@";

/// Output vocabulary. Ids 0..3 are `<s>`, `</s>`, `<unk>`; attention mode
/// adds `@` at id 3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn base(mode: Mode) -> Self {
        let mut tokens: Vec<String> = ["<s>", "</s>", "<unk>"].map(String::from).to_vec();
        if mode.has_attention() {
            tokens.push(PLACEHOLDER_TOKEN.into());
        }
        tokens.into()
    }

    /// Words of the training examples' delexicalized texts, sorted. Outside
    /// attention mode every informable triple's token is included as well,
    /// so unseen-domain tokens are at least representable.
    pub fn build<'a>(mode: Mode, ontology: &Ontology, examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut vocab = Self::base(mode);
        let mut words = std::collections::BTreeSet::new();
        for ex in examples {
            words.extend(target_words(mode, ontology, &ex.sr, &ex.text));
        }
        if !mode.has_attention() {
            for (d, a, s, p) in ontology.triples() {
                if p == SlotProperty::Informable {
                    words.insert(DelexToken::new(d, a, s).to_string());
                }
            }
        }
        for w in words {
            vocab.push(w);
        }
        vocab
    }

    /// Appends `word` unless present; returns its id.
    pub fn push(&mut self, word: String) -> usize {
        if let Some(&i) = self.index.get(&word) {
            return i;
        }
        self.index.insert(word.clone(), self.tokens.len());
        self.tokens.push(word);
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Delexicalized, tokenized reference; in attention mode delex tokens become
/// the placeholder.
fn target_words(mode: Mode, ontology: &Ontology, sr: &SemanticRepresentation, text: &str) -> Vec<String> {
    reference_tokens(ontology, sr, text)
        .into_iter()
        .map(|t| {
            if mode.has_attention() && DelexToken::parse(&t).is_some() {
                PLACEHOLDER_TOKEN.to_string()
            } else {
                t
            }
        })
        .collect()
}

/// Tokens of the delexicalized reference text.
pub fn reference_tokens(ontology: &Ontology, sr: &SemanticRepresentation, text: &str) -> Vec<String> {
    tokenize(&delexicalize(sr, ontology, text).text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub embed: usize,
    pub hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            embed: 100,
            hidden: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderLayout {
    Tree(TreeEncoderParams),
    Flat(FlatEncoderParams),
}

/// Decoder training targets for one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    /// `<s>` followed by the words.
    pub inputs: Vec<usize>,
    /// The words followed by `</s>`.
    pub outputs: Vec<usize>,
    /// For placeholder outputs, the true (domain, act, slot) indices.
    pub labels: Vec<Option<[usize; 3]>>,
    /// Placeholders whose triple is not licensed by the SR.
    pub unlabeled: usize,
}

/// Encoder output on a tape.
pub struct Encoding {
    pub f_sr: NodeId,
    pub memory: Option<AttentionMemory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub mode: Mode,
    pub dims: Dims,
    pub ontology: Ontology,
    pub vocab: Vocab,
    pub params: ParamSet,
    encoder: EncoderLayout,
    decoder: DecoderParams,
}

const INIT_SCALE: f64 = 0.1;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-INIT_SCALE..INIT_SCALE);
    }
    t
}

impl Model {
    pub fn new(mode: Mode, dims: Dims, ontology: Ontology, vocab: Vocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, h) = (dims.embed, dims.hidden);
        let mut params = ParamSet::new();
        match mode {
            Mode::TreeAtt | Mode::Tree => {
                let v = EncoderVocab::new(&ontology).len();
                params.add("enc.embed", uniform(&mut rng, &[v, e]));
                params.add("enc.w", uniform(&mut rng, &[4 * h, e]));
                params.add("enc.u", uniform(&mut rng, &[4 * h, h]));
                params.add("enc.b", Tensor::zeros(&[4 * h]));
            }
            Mode::Flat => {
                params.add("flat.w", uniform(&mut rng, &[h, ontology.num_triples()]));
                params.add("flat.b", Tensor::zeros(&[h]));
            }
        }
        let x = e + feedback_len(mode, &ontology);
        params.add("dec.embed", uniform(&mut rng, &[vocab.len(), e]));
        params.add("dec.w_x", uniform(&mut rng, &[7 * h, x]));
        params.add("dec.u_h", uniform(&mut rng, &[7 * h, h]));
        params.add("dec.v_s", uniform(&mut rng, &[3 * h, h]));
        params.add("dec.b", Tensor::zeros(&[7 * h]));
        params.add("dec.w_out", uniform(&mut rng, &[vocab.len(), h]));
        Self::from_parts(mode, dims, ontology, vocab, params).expect("fresh layout is complete")
    }

    /// Reassembles a model from stored parts, checking every tensor shape.
    pub fn from_parts(mode: Mode, dims: Dims, ontology: Ontology, vocab: Vocab, params: ParamSet) -> Result<Self> {
        let find = |name: &str, shape: &[usize]| {
            let id = params
                .find(name)
                .ok_or_else(|| Error::Compatibility(format!("parameter `{name}` is missing")))?;
            if params.get(id).shape() != shape {
                return Err(Error::Compatibility(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    params.get(id).shape()
                )));
            }
            Ok(id)
        };
        let (e, h) = (dims.embed, dims.hidden);
        let encoder = match mode {
            Mode::TreeAtt | Mode::Tree => {
                let v = EncoderVocab::new(&ontology).len();
                EncoderLayout::Tree(TreeEncoderParams {
                    embed: find("enc.embed", &[v, e])?,
                    w: find("enc.w", &[4 * h, e])?,
                    u: find("enc.u", &[4 * h, h])?,
                    b: find("enc.b", &[4 * h])?,
                })
            }
            Mode::Flat => EncoderLayout::Flat(FlatEncoderParams {
                w: find("flat.w", &[h, ontology.num_triples()])?,
                b: find("flat.b", &[h])?,
            }),
        };
        let x = e + feedback_len(mode, &ontology);
        let decoder = DecoderParams {
            embed: find("dec.embed", &[vocab.len(), e])?,
            w_x: find("dec.w_x", &[7 * h, x])?,
            u_h: find("dec.u_h", &[7 * h, h])?,
            v_s: find("dec.v_s", &[3 * h, h])?,
            b: find("dec.b", &[7 * h])?,
            w_out: find("dec.w_out", &[vocab.len(), h])?,
        };
        if mode.has_attention() && vocab.get(PLACEHOLDER_TOKEN) != Some(PLACEHOLDER) {
            return Err(Error::Compatibility("attention-mode vocabulary lacks the placeholder".into()));
        }
        Ok(Model {
            mode,
            dims,
            ontology,
            vocab,
            params,
            encoder,
            decoder,
        })
    }

    pub fn encoder_layout(&self) -> EncoderLayout {
        self.encoder
    }

    pub fn decoder_params(&self) -> &DecoderParams {
        &self.decoder
    }

    /// Length of the feedback block appended to the word embedding.
    pub fn feedback_len(&self) -> usize {
        feedback_len(self.mode, &self.ontology)
    }

    /// Adds unseen words with freshly initialized embedding and output rows.
    /// Returns how many were added.
    pub fn extend_vocab(&mut self, words: impl IntoIterator<Item = String>, seed: u64) -> Result<usize> {
        let before = self.vocab.len();
        for w in words {
            self.vocab.push(w);
        }
        let added = self.vocab.len() - before;
        if added == 0 {
            return Ok(0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in [self.decoder.embed, self.decoder.w_out] {
            let t = self.params.get_mut(id);
            let start = t.numel();
            t.grow_rows(added)?;
            for v in &mut t.data_mut()[start..] {
                *v = rng.random_range(-INIT_SCALE..INIT_SCALE);
            }
        }
        Ok(added)
    }

    /// Words of `examples` missing from the vocabulary, in sorted order.
    pub fn unseen_words<'a>(&self, examples: impl IntoIterator<Item = &'a Example>) -> Vec<String> {
        let mut out = std::collections::BTreeSet::new();
        for ex in examples {
            for w in target_words(self.mode, &self.ontology, &ex.sr, &ex.text) {
                if self.vocab.get(&w).is_none() {
                    out.insert(w);
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn target(&self, sr: &SemanticRepresentation, text: &str) -> Target {
        let licensed: std::collections::BTreeSet<(String, String, String)> = sr
            .licensed_tokens(&self.ontology)
            .into_iter()
            .map(|(_, t)| t.triple())
            .collect();
        let mut inputs = vec![BOS];
        let mut outputs = Vec::new();
        let mut labels = Vec::new();
        let mut unlabeled = 0;
        for word in reference_tokens(&self.ontology, sr, text) {
            let delex = DelexToken::parse(&word);
            let (id, label) = match (self.mode.has_attention(), delex) {
                (true, Some(t)) => {
                    let label = licensed
                        .contains(&t.triple())
                        .then(|| {
                            Some([
                                self.ontology.domain_index(&t.domain)?,
                                self.ontology.act_index(&t.act)?,
                                self.ontology.slot_index(&t.slot)?,
                            ])
                        })
                        .flatten();
                    if label.is_none() {
                        unlabeled += 1;
                    }
                    (PLACEHOLDER, label)
                }
                _ => (self.vocab.id(&word), None),
            };
            inputs.push(id);
            outputs.push(id);
            labels.push(label);
        }
        outputs.push(EOS);
        labels.push(None);
        Target {
            inputs,
            outputs,
            labels,
            unlabeled,
        }
    }

    /// Runs the encoder; in attention mode also gathers the per-label states
    /// that attention scores against.
    pub fn encode(&self, tape: &mut Tape<'_>, sr: &SemanticRepresentation) -> Result<Encoding> {
        match self.encoder {
            EncoderLayout::Tree(p) => {
                let tree = SemTree::build(sr, &self.ontology);
                let states = encode_tree(tape, &tree, &p, self.dims.hidden)?;
                let memory = if self.mode.has_attention() {
                    Some(AttentionMemory::gather(tape, &tree, &states, &self.ontology)?)
                } else {
                    None
                };
                Ok(Encoding {
                    f_sr: states.h[0],
                    memory,
                })
            }
            EncoderLayout::Flat(p) => Ok(Encoding {
                f_sr: encode_flat(tape, sr, &self.ontology, &p)?,
                memory: None,
            }),
        }
    }

    /// Parameter count per tensor name, for reports.
    pub fn param_summary(&self) -> BTreeMap<String, usize> {
        self.params.iter().map(|(n, t)| (n.to_string(), t.numel())).collect()
    }
}

pub fn feedback_len(mode: Mode, ontology: &Ontology) -> usize {
    if mode.has_attention() {
        ontology.domains().len() + ontology.acts().len() + ontology.slots().len()
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{Split, SrEntry};

    fn setup() -> (Ontology, Example) {
        let o = Ontology::from_json_str(
            r#"{"hotel": {"inform": {"area": "informable", "name": "informable"}, "request": {"price": "requestable"}}}"#,
        )
        .unwrap();
        let ex = Example {
            sr: SemanticRepresentation::new(vec![
                SrEntry::text("hotel", "inform", "name", "the lensfield"),
                SrEntry::text("hotel", "inform", "area", "west"),
            ]),
            text: "The Lensfield is in the west.".into(),
            split: Split::Train,
        };
        (o, ex)
    }

    #[test]
    fn attention_vocab_has_only_the_placeholder() {
        let (o, ex) = setup();
        let v = Vocab::build(Mode::TreeAtt, &o, [&ex]);
        assert_eq!(v.get("@"), Some(PLACEHOLDER));
        assert!(v.tokens().iter().all(|t| !t.starts_with("@hotel")));
        let b = Vocab::build(Mode::Flat, &o, [&ex]);
        assert!(b.get("@").is_none());
        assert!(b.get("@hotel-inform-area").is_some());
        assert!(b.get("@hotel-inform-name").is_some());
    }

    #[test]
    fn targets_carry_labels() {
        let (o, ex) = setup();
        let v = Vocab::build(Mode::TreeAtt, &o, [&ex]);
        let m = Model::new(Mode::TreeAtt, Dims { embed: 4, hidden: 3 }, o.clone(), v, 1);
        let t = m.target(&ex.sr, &ex.text);
        // @ is in the west .
        assert_eq!(t.outputs.len(), 7);
        assert_eq!(t.inputs[0], BOS);
        assert_eq!(*t.outputs.last().unwrap(), EOS);
        let name = o.slot_index("name").unwrap();
        assert_eq!(t.labels[0], Some([0, 0, name]));
        assert_eq!(t.labels.iter().flatten().count(), 2);
        assert_eq!(t.unlabeled, 0);
    }

    #[test]
    fn vocab_extension_grows_rows() {
        let (o, ex) = setup();
        let v = Vocab::build(Mode::Tree, &o, [&ex]);
        let mut m = Model::new(Mode::Tree, Dims { embed: 4, hidden: 3 }, o, v, 1);
        let before = m.vocab.len();
        let added = m.extend_vocab(["lodge".to_string(), "is".to_string()], 9).unwrap();
        assert_eq!(added, 1);
        assert_eq!(m.params.get(m.decoder_params().embed).shape(), &[before + 1, 4]);
        assert_eq!(m.params.get(m.decoder_params().w_out).shape(), &[before + 1, 3]);
        let rebuilt = Model::from_parts(m.mode, m.dims, m.ontology.clone(), m.vocab.clone(), m.params.clone());
        assert!(rebuilt.is_ok());
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("sclstm".parse::<Mode>().is_err());
    }
}
