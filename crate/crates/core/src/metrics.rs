//! Slot error rate, corpus BLEU and multi-seed aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::semantics::{DelexToken, Example, Ontology, SemanticRepresentation, SlotValue, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SerCounts {
    /// Licensed tokens missing from the hypothesis.
    pub missing: usize,
    /// Hypothesis tokens beyond the licensed ones.
    pub redundant: usize,
    /// Number of licensed tokens.
    pub required: usize,
}

impl SerCounts {
    /// `(p + q) / N`; with nothing required, the redundant count itself.
    pub fn rate(&self) -> f64 {
        let errors = (self.missing + self.redundant) as f64;
        if self.required == 0 {
            errors
        } else {
            errors / self.required as f64
        }
    }

    pub fn add(&mut self, other: SerCounts) {
        self.missing += other.missing;
        self.redundant += other.redundant;
        self.required += other.required;
    }
}

/// Triples mentioned by delex tokens among `tokens`, with multiplicity.
fn token_triples<'a>(tokens: impl IntoIterator<Item = &'a str>) -> BTreeMap<(String, String, String), usize> {
    let mut out = BTreeMap::new();
    for t in tokens {
        if let Some(d) = DelexToken::parse(t) {
            *out.entry(d.triple()).or_insert(0) += 1;
        }
    }
    out
}

/// Compares the delex tokens of a tokenized hypothesis with those the SR
/// licenses. Occurrence indices are ignored: a token counts for its triple.
pub fn ser(sr: &SemanticRepresentation, ontology: &Ontology, hypothesis: &[String]) -> SerCounts {
    let licensed: Vec<String> = sr.licensed_tokens(ontology).into_iter().map(|(_, t)| t.to_string()).collect();
    let reference = token_triples(licensed.iter().map(String::as_str));
    let hyp = token_triples(hypothesis.iter().map(String::as_str));
    let keys: BTreeSet<_> = reference.keys().chain(hyp.keys()).collect();
    let mut counts = SerCounts {
        required: reference.values().sum(),
        ..Default::default()
    };
    for k in keys {
        let r = reference.get(k).copied().unwrap_or(0);
        let h = hyp.get(k).copied().unwrap_or(0);
        counts.missing += r.saturating_sub(h);
        counts.redundant += h.saturating_sub(r);
    }
    counts
}

/// Corpus SER: total errors over total required tokens, or total errors
/// when no token is required anywhere.
pub fn corpus_ser(counts: impl IntoIterator<Item = SerCounts>) -> f64 {
    let mut total = SerCounts::default();
    for c in counts {
        total.add(c);
    }
    total.rate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Replaces zero n-gram matches so the geometric mean stays defined.
pub const BLEU_EPSILON: f64 = 1e-9;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU-4 with uniform weights and one reference per hypothesis.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuReport> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "BLEU needs equally many hypotheses and references, got {} and {}",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (g, c) in &hc {
                matched[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = if matched[n] == 0 {
            if total[n] == 0 {
                BLEU_EPSILON
            } else {
                BLEU_EPSILON / total[n] as f64
            }
        } else {
            matched[n] as f64 / total[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
    Ok(BleuReport {
        score: brevity_penalty * log_mean.exp(),
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Population mean and standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub group: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub count: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Mean and standard deviation of each metric column per group, groups in
/// sorted order. Values are summed in sorted order so row order never
/// changes the result.
pub fn aggregate(rows: &[MetricRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.group).or_default().push(&r.values);
    }
    groups
        .into_iter()
        .map(|(g, vals)| {
            let width = vals.iter().map(|v| v.len()).max().unwrap_or(0);
            let (mut mean, mut sd) = (Vec::new(), Vec::new());
            for col in 0..width {
                let mut column: Vec<f64> = vals.iter().filter_map(|v| v.get(col).copied()).collect();
                column.sort_by(f64::total_cmp);
                let (m, s) = mean_sd(&column);
                mean.push(m);
                sd.push(s);
            }
            Aggregate {
                group: g.to_string(),
                count: vals.len(),
                mean,
                sd,
            }
        })
        .collect()
}

/// Canonical set form of an SR for seen/unseen matching.
fn sr_key(sr: &SemanticRepresentation, with_values: bool) -> BTreeSet<(String, String, Option<String>, Option<String>)> {
    sr.entries()
        .iter()
        .map(|e| {
            let value = match (&e.value, with_values) {
                (SlotValue::Text(v), true) => Some(v.to_lowercase()),
                _ => None,
            };
            (e.domain.clone(), e.act.clone(), e.slot.clone(), value)
        })
        .collect()
}

/// Splits test examples into those whose SR occurs among the training
/// examples and those whose SR does not.
pub fn seen_unseen_split<'a>(
    test: &[&'a Example],
    train: &[&Example],
    with_values: bool,
) -> (Vec<&'a Example>, Vec<&'a Example>) {
    let known: BTreeSet<_> = train.iter().map(|e| sr_key(&e.sr, with_values)).collect();
    test.iter().partition(|e| known.contains(&sr_key(&e.sr, with_values)))
}

/// Convenience over a whole corpus.
pub fn seen_unseen<'a>(examples: &'a [Example], with_values: bool) -> (Vec<&'a Example>, Vec<&'a Example>) {
    let train: Vec<&Example> = examples.iter().filter(|e| e.split == Split::Train).collect();
    let test: Vec<&Example> = examples.iter().filter(|e| e.split == Split::Test).collect();
    seen_unseen_split(&test, &train, with_values)
}
