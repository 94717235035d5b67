//! Tree construction for an SR and the child-sum tree-LSTM over it, plus the
//! flat indicator encoder used by the baseline.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{NodeId, ParamId, Tape};
use crate::semantics::{Ontology, SemanticRepresentation, SlotProperty, Triple};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Root,
    Domain,
    Act,
    Slot,
    Property,
}

impl Layer {
    pub fn depth(self) -> usize {
        self as usize
    }
}

/// Token ids of the encoder's input vocabulary: a root symbol, every domain,
/// act and slot name, a no-slot marker, the three properties and a marker
/// closing no-slot paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderVocab {
    domains: usize,
    acts: usize,
    slots: usize,
}

impl EncoderVocab {
    pub fn new(ontology: &Ontology) -> Self {
        EncoderVocab {
            domains: ontology.domains().len(),
            acts: ontology.acts().len(),
            slots: ontology.slots().len(),
        }
    }

    pub const ROOT: usize = 0;

    pub fn domain(&self, i: usize) -> usize {
        1 + i
    }

    pub fn act(&self, i: usize) -> usize {
        1 + self.domains + i
    }

    pub fn slot(&self, i: usize) -> usize {
        1 + self.domains + self.acts + i
    }

    pub fn no_slot(&self) -> usize {
        1 + self.domains + self.acts + self.slots
    }

    pub fn property(&self, p: SlotProperty) -> usize {
        let k = SlotProperty::ALL.iter().position(|q| *q == p).expect("listed");
        self.no_slot() + 1 + k
    }

    pub fn no_property(&self) -> usize {
        self.no_slot() + 4
    }

    pub fn len(&self) -> usize {
        self.no_property() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub layer: Layer,
    pub token: usize,
    /// Index into the ontology's global domain/act/slot list; `None` for the
    /// root, property leaves and no-slot nodes.
    pub label: Option<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// The activated part of the ontology tree for one SR. Node 0 is the root and
/// every child has a larger index than its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemTree {
    nodes: Vec<TreeNode>,
    names: Vec<String>,
}

impl SemTree {
    /// One node per distinct domain, (domain, act) and (domain, act, slot);
    /// each slot node ends in a leaf for its property. Children are stored
    /// sorted by token id.
    pub fn build(sr: &SemanticRepresentation, ontology: &Ontology) -> Self {
        let vocab = EncoderVocab::new(ontology);
        let mut paths: BTreeMap<usize, BTreeMap<usize, BTreeSet<Option<usize>>>> = BTreeMap::new();
        for e in sr.entries() {
            let (Some(d), Some(a)) = (ontology.domain_index(&e.domain), ontology.act_index(&e.act)) else {
                continue;
            };
            let s = e.slot.as_deref().and_then(|s| ontology.slot_index(s));
            paths.entry(d).or_default().entry(a).or_default().insert(s);
        }
        let mut tree = SemTree {
            nodes: Vec::new(),
            names: Vec::new(),
        };
        let root = tree.push(Layer::Root, EncoderVocab::ROOT, None, None, "<root>".into());
        for (d, acts) in paths {
            let dn = tree.push(Layer::Domain, vocab.domain(d), Some(d), Some(root), ontology.domains()[d].clone());
            for (a, slots) in acts {
                let an = tree.push(Layer::Act, vocab.act(a), Some(a), Some(dn), ontology.acts()[a].clone());
                // `None` sorts first, but the no-slot token sorts after every slot.
                let mut slots: Vec<Option<usize>> = slots.into_iter().collect();
                slots.sort_by_key(|s| s.map_or(vocab.no_slot(), |s| vocab.slot(s)));
                for s in slots {
                    match s {
                        Some(s) => {
                            let slot = &ontology.slots()[s];
                            let sn = tree.push(Layer::Slot, vocab.slot(s), Some(s), Some(an), slot.clone());
                            let prop = ontology
                                .property(&ontology.domains()[d], &ontology.acts()[a], slot)
                                .expect("validated SR");
                            tree.push(Layer::Property, vocab.property(prop), None, Some(sn), prop.as_str().into());
                        }
                        None => {
                            let sn = tree.push(Layer::Slot, vocab.no_slot(), None, Some(an), "<noslot>".into());
                            tree.push(Layer::Property, vocab.no_property(), None, Some(sn), "<none>".into());
                        }
                    }
                }
            }
        }
        tree
    }

    fn push(&mut self, layer: Layer, token: usize, label: Option<usize>, parent: Option<usize>, name: String) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            layer,
            token,
            label,
            parent,
            children: Vec::new(),
        });
        self.names.push(name);
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn depth(&self, mut node: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[node].parent {
            node = p;
            d += 1;
        }
        d
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].children.is_empty())
    }

    /// Nodes of `layer` grouped by label, labels ascending.
    pub fn labels(&self, layer: Layer) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.layer == layer {
                if let Some(l) = n.label {
                    out.entry(l).or_default().push(i);
                }
            }
        }
        out
    }

    /// Reads the SR's triples back off the tree.
    pub fn triples(&self) -> BTreeSet<Triple> {
        let mut out = BTreeSet::new();
        for leaf in self.leaves() {
            let slot = self.nodes[leaf].parent.expect("leaf has a slot parent");
            let act = self.nodes[slot].parent.expect("slot has an act parent");
            let domain = self.nodes[act].parent.expect("act has a domain parent");
            out.insert(Triple {
                domain: self.names[domain].clone(),
                act: self.names[act].clone(),
                slot: self.nodes[slot].label.map(|_| self.names[slot].clone()),
            });
        }
        out
    }

    /// Node for a `(domain, act, slot)` path prefix, if activated.
    pub fn find(&self, path: &[&str]) -> Option<usize> {
        let mut node = 0;
        for name in path {
            node = *self.nodes[node].children.iter().find(|&&c| self.names[c] == *name)?;
        }
        Some(node)
    }

    /// Structural fingerprint of the subtree under `node`.
    pub fn subtree_key(&self, node: usize) -> String {
        let mut kids: Vec<String> = self.nodes[node].children.iter().map(|&c| self.subtree_key(c)).collect();
        kids.sort();
        format!("{}({})", self.nodes[node].token, kids.join(","))
    }

    /// Reorders every child list at random. Encoding must not notice.
    pub fn shuffle_children<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for n in &mut self.nodes {
            n.children.shuffle(rng);
        }
    }
}

/// Parameter ids of the tree-LSTM. Gates are stacked `[i; f; o; g]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEncoderParams {
    pub embed: ParamId,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

/// Per-node hidden and cell states, as tape nodes indexed like the tree.
#[derive(Debug, Clone)]
pub struct NodeStates {
    pub h: Vec<NodeId>,
    pub c: Vec<NodeId>,
}

/// Encodes bottom-up. Children are summed in token order whatever order the
/// tree stores them in, so the result is bitwise independent of it.
pub fn encode_tree(tape: &mut Tape<'_>, tree: &SemTree, p: &TreeEncoderParams, hidden: usize) -> Result<NodeStates> {
    let n = tree.len();
    let embed = tape.param(p.embed)?;
    let w = tape.param(p.w)?;
    let u = tape.param(p.u)?;
    let b = tape.param(p.b)?;
    let mut h: Vec<Option<NodeId>> = vec![None; n];
    let mut c: Vec<Option<NodeId>> = vec![None; n];
    // Leaves with the same token have the same state.
    let mut leaf_cache: BTreeMap<usize, (NodeId, NodeId)> = BTreeMap::new();
    for j in (0..n).rev() {
        let node = &tree.nodes[j];
        if node.children.is_empty() {
            if let Some(&(hj, cj)) = leaf_cache.get(&node.token) {
                h[j] = Some(hj);
                c[j] = Some(cj);
                continue;
            }
        }
        let x = tape.row(embed, node.token)?;
        let wx = tape.matmul(w, x)?;
        let mut z = tape.add(wx, b)?;
        let mut kids = node.children.clone();
        kids.sort_by_key(|&k| tree.nodes[k].token);
        let c_sum = if kids.is_empty() {
            None
        } else {
            let hs: Vec<NodeId> = kids.iter().map(|&k| h[k].expect("children first")).collect();
            let cs: Vec<NodeId> = kids.iter().map(|&k| c[k].expect("children first")).collect();
            let h_sum = tape.add_n(&hs)?;
            let uh = tape.matmul(u, h_sum)?;
            z = tape.add(z, uh)?;
            Some(tape.add_n(&cs)?)
        };
        let i = gate(tape, z, 0, hidden, false)?;
        let f = gate(tape, z, 1, hidden, false)?;
        let o = gate(tape, z, 2, hidden, false)?;
        let g = gate(tape, z, 3, hidden, true)?;
        let mut cj = tape.mul(i, g)?;
        if let Some(cs) = c_sum {
            let fc = tape.mul(f, cs)?;
            cj = tape.add(cj, fc)?;
        }
        let tc = tape.tanh(cj)?;
        let hj = tape.mul(o, tc)?;
        h[j] = Some(hj);
        c[j] = Some(cj);
        if node.children.is_empty() {
            leaf_cache.insert(node.token, (hj, cj));
        }
    }
    Ok(NodeStates {
        h: h.into_iter().map(|x| x.expect("every node encoded")).collect(),
        c: c.into_iter().map(|x| x.expect("every node encoded")).collect(),
    })
}

/// The `k`-th `hidden`-sized block of `z`, through sigmoid or tanh.
pub(crate) fn gate(tape: &mut Tape<'_>, z: NodeId, k: usize, hidden: usize, tanh: bool) -> Result<NodeId> {
    let part = tape.slice(z, k * hidden, hidden)?;
    Ok(if tanh { tape.tanh(part)? } else { tape.sigmoid(part)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatEncoderParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// One coordinate per ontology triple, in canonical order; 1 when the SR
/// mentions the triple.
pub fn flat_indicator(sr: &SemanticRepresentation, ontology: &Ontology) -> Vec<f64> {
    let present: BTreeSet<(&str, &str, &str)> = sr
        .entries()
        .iter()
        .filter_map(|e| Some((e.domain.as_str(), e.act.as_str(), e.slot.as_deref()?)))
        .collect();
    ontology
        .triples()
        .map(|(d, a, s, _)| if present.contains(&(d, a, s)) { 1.0 } else { 0.0 })
        .collect()
}

/// `tanh(W · indicator + b)`.
pub fn encode_flat(
    tape: &mut Tape<'_>,
    sr: &SemanticRepresentation,
    ontology: &Ontology,
    p: &FlatEncoderParams,
) -> Result<NodeId> {
    let ind = tape.input_vec(flat_indicator(sr, ontology))?;
    let w = tape.param(p.w)?;
    let b = tape.param(p.b)?;
    let wx = tape.matmul(w, ind)?;
    let z = tape.add(wx, b)?;
    Ok(tape.tanh(z)?)
}
