use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sentence_loss, TrainConfig};
use crate::decoder::Dropout;
use crate::generation::{beam_decode, greedy_decode};
use crate::math::{adam_step, AdamState, Tape};
use crate::metrics::{bleu, corpus_ser, ser, SerCounts};
use crate::model::{reference_tokens, Model, Target, Vocab};
use crate::semantics::{tokenize, Corpus, Example, Ontology, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Metrics on the monitored split; absent on epochs without evaluation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_ser: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_bleu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best evaluation.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_ser: f64,
    pub best_bleu: f64,
    /// Placeholders without a usable attention label, skipped in the loss.
    pub unlabeled_placeholders: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ser: f64,
    pub bleu: f64,
    pub counts: SerCounts,
    pub examples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    /// Metrics over every returned hypothesis of a beam of this size.
    BeamAll(usize),
    /// Metrics over the best hypothesis of a beam of this size.
    BeamTop(usize),
}

/// Decodes every example and scores the delexicalized outputs against the
/// delexicalized references.
pub fn evaluate(model: &Model, examples: &[&Example], decoding: Decoding, max_len: usize) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut counts = Vec::new();
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for ex in examples {
        let result = match decoding {
            Decoding::Greedy => greedy_decode(model, &ex.sr, max_len)?,
            Decoding::BeamAll(k) | Decoding::BeamTop(k) => beam_decode(model, &ex.sr, k, max_len)?,
        };
        let take = if matches!(decoding, Decoding::BeamAll(_)) { result.hyps.len() } else { 1 };
        let reference = reference_tokens(&model.ontology, &ex.sr, &ex.text);
        for h in result.hyps.iter().take(take) {
            let tokens = tokenize(&h.delex);
            counts.push(ser(&ex.sr, &model.ontology, &tokens));
            hyps.push(tokens);
            refs.push(reference.clone());
        }
    }
    let mut total = SerCounts::default();
    for c in &counts {
        total.add(*c);
    }
    Ok(EvalReport {
        ser: corpus_ser(counts),
        bleu: bleu(&hyps, &refs)?.score,
        counts: total,
        examples: examples.len(),
    })
}

/// Optimizes `model` on `train`, keeping the parameters that score best on
/// `monitor` (lowest SER, then highest BLEU, then earliest).
pub fn fit(
    mut model: Model,
    train: &[&Example],
    monitor: &[&Example],
    config: &TrainConfig,
    learning_rate: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    if monitor.is_empty() {
        return Err(Error::Config(format!("the {} split used for selection is empty", config.monitor)));
    }
    let objective = config.objective();
    let targets: Vec<Target> = train.iter().map(|e| model.target(&e.sr, &e.text)).collect();
    let unlabeled_placeholders = targets.iter().map(|t| t.unlabeled).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(&model.params, learning_rate);
    let mut grads = model.params.zeros_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, crate::math::ParamSet)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::with_params(&model.params);
                let mut dropout = Dropout {
                    rate: config.dropout,
                    rng: Some(&mut rng),
                };
                let loss = sentence_loss(&mut tape, &model, &train[i].sr, &targets[i], objective, &mut dropout)?;
                epoch_loss += tape.scalar(loss);
                tape.backward_into(loss, &mut grads, weight)?;
            }
            if let Some(c) = config.grad_clip {
                grads.clip_global_norm(c);
            }
            adam_step(&mut model.params, &grads, &mut adam)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let evaluate_now = epoch % config.eval_every == 0 || epoch == config.max_epochs;
        let mut entry = EpochLog {
            epoch,
            train_loss,
            dev_ser: None,
            dev_bleu: None,
        };
        if evaluate_now {
            let report = evaluate(&model, monitor, Decoding::Greedy, config.max_len)?;
            entry.dev_ser = Some(report.ser);
            entry.dev_bleu = Some(report.bleu);
            let improved = best
                .as_ref()
                .is_none_or(|(s, b, _, _)| report.ser < *s || (report.ser == *s && report.bleu > *b));
            if improved {
                best = Some((report.ser, report.bleu, epoch, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            log.push(entry);
            let reached = config.target_ser.is_none_or(|t| report.ser <= t)
                && config.target_bleu.is_none_or(|t| report.bleu >= t)
                && (config.target_ser.is_some() || config.target_bleu.is_some());
            if reached || since_best >= config.patience {
                break;
            }
        } else {
            log.push(entry);
        }
    }
    let (best_ser, best_bleu, best_epoch, params) = best.expect("the last epoch is always evaluated");
    model.params = params;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_ser,
        best_bleu,
        unlabeled_placeholders,
    })
}

/// Single-domain examples of `split`, optionally restricted to `domain`.
pub fn select<'c>(corpus: &'c Corpus, split: Split, domain: Option<&str>) -> Vec<&'c Example> {
    match domain {
        Some(d) => corpus.domain_split(d, split),
        None => corpus.split(split),
    }
}

/// Trains a fresh model on the train split (of one domain, if given).
pub fn train(corpus: &Corpus, ontology: &Ontology, config: &TrainConfig, domain: Option<&str>) -> Result<TrainOutcome> {
    config.validate()?;
    let train = select(corpus, Split::Train, domain);
    let monitor = select(corpus, config.monitor, domain);
    if train.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    let vocab = Vocab::build(config.mode, ontology, train.iter().copied());
    let model = Model::new(config.mode, config.dims(), ontology.clone(), vocab, config.seed);
    fit(model, &train, &monitor, config, config.lr_scratch, config.seed.wrapping_add(1))
}

/// Indices of `⌈fraction · pool⌉` examples drawn without replacement,
/// ascending.
pub fn sample_adaptation(pool: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("adaptation fraction {fraction} outside (0, 1]")));
    }
    // Guard against 0.0125 * 800 landing a hair above 10.
    let n = ((fraction * pool as f64) - 1e-9).ceil().max(0.0) as usize;
    if n == 0 {
        return Err(Error::Config(format!("fraction {fraction} of {pool} examples selects nothing")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, pool, n.min(pool)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub outcome: TrainOutcome,
    /// The adaptation examples, as indices into the single-domain pool.
    pub selected: Vec<usize>,
    pub added_words: usize,
}

/// Fine-tunes a trained model on a seeded fraction of the target training
/// examples (multi-domain turns excluded), selecting on the target monitor
/// split.
pub fn adapt(
    source: &Model,
    target_train: &[&Example],
    target_monitor: &[&Example],
    fraction: f64,
    config: &TrainConfig,
    seed: u64,
) -> Result<AdaptOutcome> {
    config.validate()?;
    for ex in target_train.iter().chain(target_monitor) {
        ex.sr.validate(&source.ontology).map_err(|m| {
            Error::Compatibility(format!("target data does not fit the model's ontology: {m}"))
        })?;
    }
    let pool: Vec<&Example> = target_train.iter().copied().filter(|e| !e.is_multi_domain()).collect();
    let selected = sample_adaptation(pool.len(), fraction, seed)?;
    let subset: Vec<&Example> = selected.iter().map(|&i| pool[i]).collect();
    let mut model = source.clone();
    let added_words = model.extend_vocab(model.unseen_words(subset.iter().copied()), seed ^ 0x5eed)?;
    let outcome = fit(model, &subset, target_monitor, config, config.lr_adapt, seed.wrapping_add(1))?;
    Ok(AdaptOutcome {
        outcome,
        selected,
        added_words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptation_sample_sizes() {
        assert_eq!(sample_adaptation(800, 0.0125, 1).unwrap().len(), 10);
        assert_eq!(sample_adaptation(800, 1.0, 1).unwrap(), (0..800).collect::<Vec<_>>());
        assert_eq!(sample_adaptation(120, 0.05, 1).unwrap().len(), 6);
        assert_eq!(sample_adaptation(5, 0.01, 1).unwrap().len(), 1);
        assert!(sample_adaptation(0, 0.5, 1).is_err());
        assert!(sample_adaptation(10, 0.0, 1).is_err());
        assert!(sample_adaptation(10, 1.5, 1).is_err());
    }

    #[test]
    fn adaptation_sample_is_seeded() {
        assert_eq!(sample_adaptation(300, 0.1, 4).unwrap(), sample_adaptation(300, 0.1, 4).unwrap());
        assert_ne!(sample_adaptation(300, 0.1, 4).unwrap(), sample_adaptation(300, 0.1, 5).unwrap());
    }
}
