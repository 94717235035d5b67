use std::collections::BTreeMap;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use semtree_core::generation::{beam_decode, trace, GenerationResult};
use semtree_core::math::GradCheckOptions;
use semtree_core::metrics::{bleu, corpus_ser, seen_unseen_split, ser, SerCounts};
use semtree_core::model::reference_tokens;
use semtree_core::semantics::{delexicalize, SynthSpec};
use semtree_core::training::{
    adapt, check_sentence_gradients, evaluate, run_matrix, select, train, write_atomic, Checkpoint, Decoding,
    EpochLog, Objective, SweepSpec, TrainConfig,
};
use semtree_core::{Corpus, Error, Example, Model, Ontology, SemanticRepresentation, Split, Vocab};

use crate::args::*;

fn load_ontology(path: &Path) -> Result<Ontology> {
    Ok(Ontology::load(path)?)
}

fn load_checkpoint(path: &Path, ontology: Option<&Path>) -> Result<(Checkpoint, Ontology)> {
    let ck = Checkpoint::load(path)?;
    let ontology = match ontology {
        Some(p) => {
            let o = load_ontology(p)?;
            ck.check_ontology(&o)?;
            o
        }
        None => ck.ontology.clone(),
    };
    Ok((ck, ontology))
}

/// Loads a corpus that has to fit a checkpoint's ontology; a mismatch is a
/// compatibility problem rather than bad input.
fn load_corpus_for(path: &Path, ontology: &Ontology) -> Result<Corpus> {
    match Corpus::load(path, ontology) {
        Err(Error::Validation(m)) => Err(Error::Compatibility(format!("corpus does not fit the checkpoint ontology: {m}")).into()),
        other => Ok(other?),
    }
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

fn read_config(args: &ConfigArgs, base: TrainConfig) -> Result<TrainConfig> {
    let base = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.display().to_string(),
                source: e,
            })?;
            TrainConfig::from_json_str(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => base,
    };
    let cfg = args.apply(base);
    cfg.validate()?;
    Ok(cfg)
}

pub fn prepare(a: PrepareArgs) -> Result<()> {
    let ontology = load_ontology(&a.ontology)?;
    let corpus = Corpus::load(&a.corpus, &ontology)?;
    out_dir(&a.out)?;
    #[derive(Serialize)]
    struct Record<'a> {
        sr: &'a SemanticRepresentation,
        text: &'a str,
        delex: String,
        split: Split,
    }
    let mut values = 0;
    let mut unmatched = 0;
    let mut records = Vec::with_capacity(corpus.len());
    for ex in corpus.examples() {
        let d = delexicalize(&ex.sr, &ontology, &ex.text);
        values += ex.sr.licensed_tokens(&ontology).len();
        unmatched += d.unmatched.len();
        records.push(Record {
            sr: &ex.sr,
            text: &ex.text,
            delex: d.text,
            split: ex.split,
        });
    }
    let splits: BTreeMap<&str, usize> = Split::ALL.iter().map(|s| (s.as_str(), corpus.split(*s).len())).collect();
    let report = json!({
        "records": corpus.len(),
        "splits": splits,
        "informable_values": values,
        "unmatched_values": unmatched,
        "unmatched_rate": if values == 0 { 0.0 } else { unmatched as f64 / values as f64 },
        "multi_domain_turns": corpus.multi_domain_count(),
        "distinct_srs": corpus.distinct_srs(),
    });
    write(&a.out.join("delex.jsonl"), &jsonl(&records)?)?;
    write(&a.out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn write_run(out: &Path, ck: &Checkpoint, log: &[EpochLog]) -> Result<()> {
    ck.save(out.join("checkpoint.json"))?;
    write(&out.join("epochs.jsonl"), &jsonl(log)?)
}

pub fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = read_config(&a.config, TrainConfig::default())?;
    let ontology = load_ontology(&a.ontology)?;
    let corpus = Corpus::load(&a.corpus, &ontology)?;
    out_dir(&a.out)?;
    let out = train(&corpus, &ontology, &cfg, a.domain.as_deref())?;
    let ck = Checkpoint::new(&out.model, &cfg, out.best_epoch, Some(out.best_ser), Some(out.best_bleu));
    write_run(&a.out, &ck, &out.log)?;
    eprintln!(
        "best epoch {} of {}: {} SER {:.4} BLEU {:.4}",
        out.best_epoch,
        out.log.len(),
        cfg.monitor,
        out.best_ser,
        out.best_bleu
    );
    Ok(())
}

pub fn adapt_cmd(a: AdaptArgs) -> Result<()> {
    let (ck, ontology) = load_checkpoint(&a.checkpoint, a.ontology.as_deref())?;
    let cfg = read_config(&a.config, ck.config.clone())?;
    if cfg.mode != ck.mode {
        return Err(Error::Compatibility(format!("checkpoint is a {} model, config asks for {}", ck.mode, cfg.mode)).into());
    }
    if ontology.domain_index(&a.domain).is_none() {
        return Err(Error::Compatibility(format!("domain `{}` is not in the checkpoint ontology", a.domain)).into());
    }
    let corpus = load_corpus_for(&a.corpus, &ontology)?;
    let source = ck.model()?;
    let train_ex = select(&corpus, Split::Train, Some(&a.domain));
    let monitor = select(&corpus, cfg.monitor, Some(&a.domain));
    out_dir(&a.out)?;
    let out = adapt(&source, &train_ex, &monitor, a.fraction, &cfg, cfg.seed)?;
    let r = &out.outcome;
    let ck = Checkpoint::new(&r.model, &cfg, r.best_epoch, Some(r.best_ser), Some(r.best_bleu));
    write_run(&a.out, &ck, &r.log)?;
    eprintln!(
        "adapted on {} of {} {} examples ({} new words): {} SER {:.4} BLEU {:.4}",
        out.selected.len(),
        train_ex.len(),
        a.domain,
        out.added_words,
        cfg.monitor,
        r.best_ser,
        r.best_bleu
    );
    Ok(())
}

#[derive(Deserialize)]
struct SrRecord {
    sr: SemanticRepresentation,
    #[serde(default)]
    split: Option<Split>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{} record {}", path.display(), i + 1),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn check_sr(sr: &SemanticRepresentation, ontology: &Ontology, what: &str) -> Result<()> {
    sr.validate(ontology)
        .map_err(|m| Error::Compatibility(format!("{what}: {m} for the checkpoint ontology")))?;
    Ok(())
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let (ck, ontology) = load_checkpoint(&a.checkpoint, a.ontology.as_deref())?;
    let model = ck.model()?;
    let beam = a.beam.unwrap_or(ck.config.beam);
    let max_len = a.max_len.unwrap_or(ck.config.max_len);
    let split = a.split.map(Split::from);
    let records: Vec<SrRecord> = read_jsonl(&a.input)?;
    #[derive(Serialize)]
    struct Line<'a> {
        index: usize,
        sr: &'a SemanticRepresentation,
        #[serde(flatten)]
        result: GenerationResult,
    }
    let mut lines = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if split.is_some() && r.split != split {
            continue;
        }
        check_sr(&r.sr, &ontology, &format!("record {}", i + 1))?;
        let result = beam_decode(&model, &r.sr, beam, max_len)?;
        lines.push(Line {
            index: i,
            sr: &r.sr,
            result,
        });
    }
    write(&a.out, &jsonl(&lines)?)?;
    eprintln!("{} records decoded with beam {beam}", lines.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct Metrics {
    subset: String,
    examples: usize,
    ser: f64,
    bleu: f64,
    missing: usize,
    redundant: usize,
    required: usize,
}

/// Text of the first hypothesis of a record, either `{"text": ..}` or a
/// `generate` output line.
fn hypothesis_text(v: &serde_json::Value, line: usize) -> Result<String> {
    let text = v
        .get("text")
        .or_else(|| v.get("hyps").and_then(|h| h.get(0)).and_then(|h| h.get("text")))
        .and_then(|t| t.as_str());
    Ok(text
        .ok_or_else(|| Error::Parse {
            location: format!("hypothesis record {line}"),
            message: "expected a `text` field or a `hyps` list".into(),
        })?
        .to_string())
}

fn score_texts(ontology: &Ontology, refs: &[&Example], hyps: &[String], subset: &str) -> Result<Metrics> {
    let mut counts = Vec::new();
    let mut h_tok = Vec::new();
    let mut r_tok = Vec::new();
    for (ex, h) in refs.iter().zip(hyps) {
        let tokens = reference_tokens(ontology, &ex.sr, h);
        counts.push(ser(&ex.sr, ontology, &tokens));
        h_tok.push(tokens);
        r_tok.push(reference_tokens(ontology, &ex.sr, &ex.text));
    }
    let mut total = SerCounts::default();
    for c in &counts {
        total.add(*c);
    }
    Ok(Metrics {
        subset: subset.into(),
        examples: refs.len(),
        ser: corpus_ser(counts),
        bleu: bleu(&h_tok, &r_tok)?.score,
        missing: total.missing,
        redundant: total.redundant,
        required: total.required,
    })
}

fn score_model(model: &Model, refs: &[&Example], decoding: Decoding, max_len: usize, subset: &str) -> Result<Metrics> {
    let r = evaluate(model, refs, decoding, max_len)?;
    Ok(Metrics {
        subset: subset.into(),
        examples: r.examples,
        ser: r.ser,
        bleu: r.bleu,
        missing: r.counts.missing,
        redundant: r.counts.redundant,
        required: r.counts.required,
    })
}

pub fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let (model, ontology) = match &a.checkpoint {
        Some(p) => {
            let (ck, o) = load_checkpoint(p, a.ontology.as_deref())?;
            (Some((ck.model()?, ck.config.max_len)), o)
        }
        None => {
            let p = a
                .ontology
                .as_deref()
                .ok_or_else(|| Error::Config("scoring hypotheses needs --ontology".into()))?;
            (None, load_ontology(p)?)
        }
    };
    let corpus = match model {
        Some(_) => load_corpus_for(&a.corpus, &ontology)?,
        None => Corpus::load(&a.corpus, &ontology)?,
    };
    let refs: Vec<&Example> = corpus
        .examples()
        .iter()
        .filter(|e| a.split.is_none_or(|s| e.split == Split::from(s)))
        .filter(|e| a.domain.as_ref().is_none_or(|d| e.sr.domains().iter().any(|x| x == d)))
        .collect();
    if refs.is_empty() {
        return Err(Error::Config("no reference examples selected".into()).into());
    }
    let score = |subset: &[&Example], positions: &[usize], name: &str| -> Result<Metrics> {
        match (&model, &a.hypotheses) {
            (Some((m, default_len)), _) => {
                let decoding = a.beam.map_or(Decoding::Greedy, Decoding::BeamTop);
                score_model(m, subset, decoding, a.max_len.unwrap_or(*default_len), name)
            }
            (None, Some(path)) => {
                let all: Vec<serde_json::Value> = read_jsonl(path)?;
                if all.len() != refs.len() {
                    return Err(Error::Validation(format!(
                        "{} hypotheses for {} references",
                        all.len(),
                        refs.len()
                    ))
                    .into());
                }
                let texts = positions
                    .iter()
                    .map(|&i| hypothesis_text(&all[i], i + 1))
                    .collect::<Result<Vec<_>>>()?;
                score_texts(&ontology, subset, &texts, name)
            }
            (None, None) => unreachable!("clap requires one of the two"),
        }
    };
    let all_pos: Vec<usize> = (0..refs.len()).collect();
    let mut rows = vec![score(&refs, &all_pos, "all")?];
    if a.seen_unseen {
        let train_ex = corpus.split(Split::Train);
        let (seen, unseen) = seen_unseen_split(&refs, &train_ex, false);
        let pos = |sub: &[&Example]| -> Vec<usize> {
            sub.iter()
                .map(|e| refs.iter().position(|r| std::ptr::eq(*r, *e)).expect("subset of refs"))
                .collect()
        };
        for (name, sub) in [("seen", seen), ("unseen", unseen)] {
            if !sub.is_empty() {
                rows.push(score(&sub, &pos(&sub), name)?);
            }
        }
    }
    let text = match &a.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => {
            let mut s = String::from("subset,examples,ser,bleu,missing,redundant,required\n");
            for m in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    m.subset, m.examples, m.ser, m.bleu, m.missing, m.redundant, m.required
                ));
            }
            s
        }
        _ => serde_json::to_string_pretty(&rows)?,
    };
    if let Some(p) = &a.out {
        write(p, &text)?;
    }
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = read_config(&a.config, TrainConfig::default())?;
    let source_cfg = match &a.source_config {
        Some(path) => read_config(
            &ConfigArgs {
                config: Some(path.clone()),
                ..a.config.clone()
            },
            TrainConfig::default(),
        )?,
        None => cfg.clone(),
    };
    let ontology = load_ontology(&a.ontology)?;
    let corpus = Corpus::load(&a.corpus, &ontology)?;
    for d in [&a.source, &a.target] {
        if ontology.domain_index(d).is_none() {
            return Err(Error::Config(format!("domain `{d}` is not in the ontology")).into());
        }
    }
    out_dir(&a.out)?;
    let mut sources = BTreeMap::new();
    for &mode in &a.modes {
        let mut c = source_cfg.clone();
        c.mode = mode;
        c.objective = None;
        let out = train(&corpus, &ontology, &c, Some(&a.source))?;
        eprintln!("source {mode}: epoch {} SER {:.4} BLEU {:.4}", out.best_epoch, out.best_ser, out.best_bleu);
        let ck = Checkpoint::new(&out.model, &c, out.best_epoch, Some(out.best_ser), Some(out.best_bleu));
        ck.save(a.out.join(format!("source-{}.json", mode.as_str().replace('+', "-"))))?;
        sources.insert(mode, out.model);
    }
    let spec = SweepSpec {
        source: a.source.clone(),
        target: a.target.clone(),
        fractions: a.fractions.clone(),
        seeds: a.seeds.clone(),
        modes: a.modes.clone(),
        beam_metrics: a.beam_metrics,
    };
    let table = run_matrix(&sources, &corpus, &cfg, &spec, |r| {
        eprintln!("{} fraction {} seed {}: SER {:.4} BLEU {:.4}", r.mode, r.fraction, r.seed, r.ser, r.bleu)
    })?;
    write(&a.out.join("results.csv"), &table.to_csv()?)?;
    for r in table.aggregates() {
        println!(
            "{:<9} {:>7} SER {:.4} ± {:.4}  BLEU {:.4} ± {:.4}",
            r.mode,
            r.fraction,
            r.ser,
            r.ser_sd.unwrap_or(0.0),
            r.bleu,
            r.bleu_sd.unwrap_or(0.0)
        );
    }
    Ok(())
}

fn read_sr(path: &Path) -> Result<SemanticRepresentation> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: format!("{} line {}", path.display(), e.line()),
        message: e.to_string(),
    })?;
    let sr = v.get("sr").cloned().unwrap_or(v);
    Ok(serde_json::from_value(sr).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })?)
}

pub fn trace_cmd(a: TraceArgs) -> Result<()> {
    let (ck, ontology) = load_checkpoint(&a.checkpoint, a.ontology.as_deref())?;
    if !ck.mode.has_attention() {
        return Err(Error::Mode(format!("no attention in this mode ({})", ck.mode)).into());
    }
    let sr = read_sr(&a.sr)?;
    check_sr(&sr, &ontology, "SR")?;
    let model = ck.model()?;
    let (hyp, tr) = trace(&model, &sr, a.max_len.unwrap_or(ck.config.max_len))?;
    out_dir(&a.out)?;
    for (k, name) in ["domain", "act", "slot"].iter().enumerate() {
        write(&a.out.join(format!("attention_{name}.csv")), &tr.to_csv(k))?;
    }
    let doc = json!({ "text": hyp.text, "delex": hyp.delex, "trace": tr });
    write(&a.out.join("trace.json"), &serde_json::to_string_pretty(&doc)?)?;
    eprintln!("{} placeholder steps: {}", tr.len(), hyp.text);
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let (corpus, ontology) = match (&a.ontology, &a.corpus) {
        (Some(o), Some(c)) => {
            let o = load_ontology(o)?;
            (Corpus::load(c, &o)?, o)
        }
        _ => SynthSpec::default().generate(a.seed)?,
    };
    let ex = corpus
        .examples()
        .get(a.index)
        .ok_or_else(|| Error::Config(format!("record index {} out of range ({} records)", a.index, corpus.len())))?;
    let opts = GradCheckOptions {
        step: a.step,
        tolerance: a.tolerance,
        seed: a.seed,
        ..Default::default()
    };
    let mut reports = Vec::new();
    let mut passed = true;
    for &mode in &a.modes {
        let vocab = Vocab::build(mode, &ontology, [ex]);
        let dims = semtree_core::Dims {
            embed: a.hidden,
            hidden: a.hidden,
        };
        let mut model = Model::new(mode, dims, ontology.clone(), vocab, a.seed);
        model.params.redraw_uniform(a.init_scale, a.seed);
        let objectives: &[Objective] = if mode.has_attention() {
            &[Objective::Nll, Objective::Att]
        } else {
            &[Objective::Nll]
        };
        for &objective in objectives {
            let r = check_sentence_gradients(&model, &ex.sr, &ex.text, objective, &opts)?;
            eprintln!(
                "{mode} {objective:?}: max relative error {:.3e} ({})",
                r.max_rel_error(),
                if r.passed() { "ok" } else { "FAILED" }
            );
            passed &= r.passed();
            reports.push(json!({ "mode": mode, "objective": objective, "report": r }));
        }
    }
    println!("{}", serde_json::to_string_pretty(&reports)?);
    if !passed {
        anyhow::bail!("gradient check failed");
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    let (corpus, ontology) = spec.generate(a.seed)?;
    out_dir(&a.out)?;
    write(&a.out.join("corpus.jsonl"), &corpus.to_jsonl())?;
    write(&a.out.join("ontology.json"), &ontology.to_json())?;
    eprintln!(
        "{} examples; distinct SRs {:?}",
        corpus.len(),
        corpus.distinct_srs()
    );
    Ok(())
}
