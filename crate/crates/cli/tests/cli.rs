use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semtree_core::semantics::SynthSpec;
use serde_json::Value;

fn semtree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semtree"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = semtree(args);
    assert!(
        out.status.success(),
        "semtree {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).expect("file exists")).expect("valid JSON")
}

/// Synthetic corpus and ontology under `dir/data`.
fn synth(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    ok(&["synth", "--seed", "1", "--out", s(&data)]);
    (data.join("corpus.jsonl"), data.join("ontology.json"))
}

/// A small tree+att model under `dir/<name>`.
fn tiny_train(dir: &Path, corpus: &Path, ontology: &Path, name: &str, mode: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "train", "--corpus", s(corpus), "--ontology", s(ontology), "--out", s(&out),
        "--mode", mode, "--hidden", "8", "--embed", "8", "--max-epochs", "2", "--max-len", "20",
    ]);
    out.join("checkpoint.json")
}

#[test]
fn prepare_reports_corpus_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ontology) = synth(dir.path());
    let out = dir.path().join("prep");
    ok(&["prepare", "--corpus", s(&corpus), "--ontology", s(&ontology), "--out", s(&out)]);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["distinct_srs"]["restaurant"], 50);
    assert_eq!(report["distinct_srs"]["hotel"], 50);
    assert_eq!(report["unmatched_values"], 0);
    let lines = fs::read_to_string(out.join("delex.jsonl")).unwrap();
    assert_eq!(lines.lines().count() as u64, report["records"].as_u64().unwrap());
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["delex"].as_str().unwrap().contains('@'));

    let mut spec = SynthSpec::default();
    spec.domain_mut("hotel").unwrap().distinct_srs = 47;
    let spec_path = dir.path().join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let custom = dir.path().join("custom");
    ok(&["synth", "--spec", s(&spec_path), "--out", s(&custom)]);
    let out2 = dir.path().join("prep2");
    ok(&[
        "prepare", "--corpus", s(&custom.join("corpus.jsonl")), "--ontology",
        s(&custom.join("ontology.json")), "--out", s(&out2),
    ]);
    assert_eq!(read_json(&out2.join("report.json"))["distinct_srs"]["hotel"], 47);
}

#[test]
fn missing_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = synth(dir.path());
    let missing = dir.path().join("nope.json");
    let out = semtree(&["prepare", "--corpus", s(&corpus), "--ontology", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let bad = semtree(&["train", "--corpus", s(&corpus), "--ontology", s(&missing), "--out", "x", "--hidden", "many"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn train_generate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ontology) = synth(dir.path());
    let ck = tiny_train(dir.path(), &corpus, &ontology, "run", "tree+att");
    let log = fs::read_to_string(dir.path().join("run/epochs.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let gen = dir.path().join("gen.jsonl");
    ok(&[
        "generate", "--checkpoint", s(&ck), "--input", s(&corpus), "--split", "test", "--beam", "3", "--out", s(&gen),
    ]);
    let lines: Vec<Value> = fs::read_to_string(&gen).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    for l in &lines {
        let hyps = l["hyps"].as_array().unwrap();
        assert!(!hyps.is_empty() && hyps.len() <= 3);
        let scores: Vec<f64> = hyps.iter().map(|h| h["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    // Scoring the generated file works; scoring the references against
    // themselves is perfect.
    ok(&[
        "evaluate", "--corpus", s(&corpus), "--ontology", s(&ontology), "--split", "test", "--hypotheses", s(&gen),
    ]);
    let refs = dir.path().join("refs.jsonl");
    let all = fs::read_to_string(&corpus).unwrap();
    let test_lines: Vec<&str> = all
        .lines()
        .filter(|l| serde_json::from_str::<Value>(l).unwrap()["split"] == "test")
        .collect();
    fs::write(&refs, test_lines.join("\n")).unwrap();
    let metrics = dir.path().join("m.json");
    ok(&[
        "evaluate", "--corpus", s(&corpus), "--ontology", s(&ontology), "--split", "test", "--hypotheses", s(&refs),
        "--out", s(&metrics),
    ]);
    let m = read_json(&metrics);
    assert_eq!(m[0]["ser"], 0.0);
    assert!((m[0]["bleu"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let csv = dir.path().join("m.csv");
    ok(&[
        "evaluate", "--corpus", s(&corpus), "--checkpoint", s(&ck), "--split", "dev", "--seen-unseen", "--out", s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("subset,examples,ser,bleu"));
    assert!(text.lines().nth(1).unwrap().starts_with("all,"));
}

#[test]
fn trace_exports_attention_or_refuses() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ontology) = synth(dir.path());
    let first: Value = serde_json::from_str(fs::read_to_string(&corpus).unwrap().lines().next().unwrap()).unwrap();
    let sr = dir.path().join("sr.json");
    fs::write(&sr, first["sr"].to_string()).unwrap();

    let ck = tiny_train(dir.path(), &corpus, &ontology, "att", "tree+att");
    let (a, b) = (dir.path().join("t1"), dir.path().join("t2"));
    for out in [&a, &b] {
        ok(&["trace", "--checkpoint", s(&ck), "--sr", s(&sr), "--out", s(out)]);
    }
    for name in ["attention_domain.csv", "attention_act.csv", "attention_slot.csv", "trace.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let csv = fs::read_to_string(a.join("attention_slot.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let weights: Vec<f64> = row.split(',').skip(2).map(|c| c.parse().unwrap()).collect();
        if !weights.is_empty() {
            assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9, "row {row}");
        }
    }

    let flat = tiny_train(dir.path(), &corpus, &ontology, "flat", "flat");
    let out = semtree(&["trace", "--checkpoint", s(&flat), "--sr", s(&sr), "--out", s(&dir.path().join("t3"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn foreign_ontology_is_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ontology) = synth(dir.path());
    let ck = tiny_train(dir.path(), &corpus, &ontology, "run", "tree");
    let mut schema = read_json(&ontology);
    schema["hotel"].as_object_mut().unwrap().remove("recommend");
    let foreign = dir.path().join("foreign.json");
    fs::write(&foreign, schema.to_string()).unwrap();
    let out = semtree(&[
        "generate", "--checkpoint", s(&ck), "--input", s(&corpus), "--ontology", s(&foreign), "--out",
        s(&dir.path().join("g.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = semtree(&[
        "adapt", "--checkpoint", s(&ck), "--corpus", s(&corpus), "--domain", "guesthouse", "--fraction", "0.1",
        "--out", s(&dir.path().join("a")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn adapt_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ontology) = synth(dir.path());
    let small = ["--hidden", "8", "--embed", "8", "--max-epochs", "2", "--max-len", "20"];

    let ck = dir.path().join("src");
    let mut args = vec!["train", "--corpus", s(&corpus), "--ontology", s(&ontology), "--domain", "restaurant"];
    args.extend(["--out", s(&ck)]);
    args.extend(small);
    ok(&args);
    let adapted = dir.path().join("adapted");
    ok(&[
        "adapt", "--checkpoint", s(&ck.join("checkpoint.json")), "--corpus", s(&corpus), "--domain", "hotel",
        "--fraction", "0.1", "--out", s(&adapted),
    ]);
    assert!(adapted.join("checkpoint.json").exists());

    let out = dir.path().join("sweep");
    let mut args = vec!["sweep", "--corpus", s(&corpus), "--ontology", s(&ontology), "--source", "restaurant"];
    args.extend(["--target", "hotel", "--fractions", "0.05,0.1", "--seeds", "1,2", "--out", s(&out)]);
    args.extend(small);
    ok(&args);
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    // 2 modes x 2 fractions x 2 seeds, plus a mean row per mode and fraction.
    assert_eq!(rows.len(), 8 + 4);
    assert_eq!(rows.iter().filter(|r| r.contains(",mean,")).count(), 4);
    assert!(out.join("source-tree-att.json").exists() && out.join("source-flat.json").exists());
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--hidden", "3", "--modes", "tree+att,flat"]);
    let reports: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 3);
}
