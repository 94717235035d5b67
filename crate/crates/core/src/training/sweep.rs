use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{adapt, evaluate, select, Decoding, TrainConfig};
use crate::metrics::{aggregate, MetricRow};
use crate::model::{Mode, Model};
use crate::semantics::{Corpus, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub source: String,
    pub target: String,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    /// Also score every hypothesis of a full beam on the test split.
    pub beam_metrics: bool,
}

/// One results line. Aggregate lines carry `seed = "mean"` and the standard
/// deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Mode,
    pub source: String,
    pub target: String,
    pub fraction: f64,
    pub seed: String,
    pub ser: f64,
    pub bleu: f64,
    pub beam_ser: Option<f64>,
    pub beam_bleu: Option<f64>,
    pub ser_sd: Option<f64>,
    pub bleu_sd: Option<f64>,
    pub beam_ser_sd: Option<f64>,
    pub beam_bleu_sd: Option<f64>,
}

impl SweepRow {
    pub fn is_aggregate(&self) -> bool {
        self.seed == "mean"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn seed_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| !r.is_aggregate())
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.is_aggregate())
    }

    pub fn mean(&self, mode: Mode, fraction: f64) -> Option<&SweepRow> {
        self.aggregates().find(|r| r.mode == mode && r.fraction == fraction)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>()?;
        Ok(SweepTable { rows })
    }

    /// Appends mean/sd rows per (mode, fraction), in first-seen order.
    pub fn with_aggregates(seed_rows: Vec<SweepRow>) -> Self {
        let mut order: Vec<(Mode, u64)> = Vec::new();
        let mut metric_rows = Vec::new();
        for r in &seed_rows {
            let key = (r.mode, r.fraction.to_bits());
            if !order.contains(&key) {
                order.push(key);
            }
            let mut values = vec![r.ser, r.bleu];
            if let (Some(s), Some(b)) = (r.beam_ser, r.beam_bleu) {
                values.extend([s, b]);
            }
            metric_rows.push(MetricRow {
                group: format!("{}|{}", r.mode, r.fraction.to_bits()),
                values,
            });
        }
        let stats: BTreeMap<String, _> = aggregate(&metric_rows).into_iter().map(|a| (a.group.clone(), a)).collect();
        let mut rows = seed_rows.clone();
        for (mode, bits) in order {
            let a = &stats[&format!("{mode}|{bits}")];
            let first = seed_rows
                .iter()
                .find(|r| r.mode == mode && r.fraction.to_bits() == bits)
                .expect("group has rows");
            rows.push(SweepRow {
                mode,
                source: first.source.clone(),
                target: first.target.clone(),
                fraction: f64::from_bits(bits),
                seed: "mean".into(),
                ser: a.mean[0],
                bleu: a.mean[1],
                beam_ser: a.mean.get(2).copied(),
                beam_bleu: a.mean.get(3).copied(),
                ser_sd: Some(a.sd[0]),
                bleu_sd: Some(a.sd[1]),
                beam_ser_sd: a.sd.get(2).copied(),
                beam_bleu_sd: a.sd.get(3).copied(),
            });
        }
        SweepTable { rows }
    }
}

/// Adapts each source model to the target domain for every (mode, fraction,
/// seed) and scores it on the target test split. Cell `i` runs with seed
/// `seed ^ i`, so every cell can be reproduced alone.
pub fn run_matrix(
    sources: &BTreeMap<Mode, Model>,
    corpus: &Corpus,
    config: &TrainConfig,
    spec: &SweepSpec,
    mut progress: impl FnMut(&SweepRow),
) -> Result<SweepTable> {
    if spec.fractions.is_empty() || spec.seeds.is_empty() || spec.modes.is_empty() {
        return Err(Error::Config("a sweep needs at least one mode, fraction and seed".into()));
    }
    let train = select(corpus, Split::Train, Some(&spec.target));
    let dev = select(corpus, config.monitor, Some(&spec.target));
    let test = select(corpus, Split::Test, Some(&spec.target));
    if test.is_empty() {
        return Err(Error::Config(format!("no test examples for domain `{}`", spec.target)));
    }
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &mode in &spec.modes {
        let source = sources
            .get(&mode)
            .ok_or_else(|| Error::Config(format!("no source model for mode {mode}")))?;
        let mut cfg = config.clone();
        cfg.mode = mode;
        cfg.objective = None;
        for &fraction in &spec.fractions {
            for &seed in &spec.seeds {
                let cell_seed = seed ^ cell;
                cell += 1;
                let adapted = adapt(source, &train, &dev, fraction, &cfg, cell_seed)?;
                let model = &adapted.outcome.model;
                let top = evaluate(model, &test, Decoding::Greedy, cfg.max_len)?;
                let beam = if spec.beam_metrics {
                    Some(evaluate(model, &test, Decoding::BeamAll(cfg.beam), cfg.max_len)?)
                } else {
                    None
                };
                let row = SweepRow {
                    mode,
                    source: spec.source.clone(),
                    target: spec.target.clone(),
                    fraction,
                    seed: seed.to_string(),
                    ser: top.ser,
                    bleu: top.bleu,
                    beam_ser: beam.map(|b| b.ser),
                    beam_bleu: beam.map(|b| b.bleu),
                    ser_sd: None,
                    bleu_sd: None,
                    beam_ser_sd: None,
                    beam_bleu_sd: None,
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(SweepTable::with_aggregates(rows))
}
