use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use grasp::checkpoint::load_checkpoint;
use grasp::corpus::{load_corpus, Split};
use grasp::evaluation::evaluate;
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn grasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasp"))
        .args(args)
        .env_remove("GRASP_LOG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small fast model; every flag pinned.
fn quick_train(data_path: &Path, ck: &Path, log: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--data", s(data_path), "--checkpoint", s(ck), "--log", s(log),
        "--epochs", "2", "--d-model", "16", "--layers", "1", "--heads", "2",
        "--max-seq-len", "96", "--lr", "1e-3", "--seed", "5",
    ];
    args.extend_from_slice(extra);
    grasp(&args)
}

#[test]
fn help_exists_for_every_subcommand() {
    for sub in ["ingest", "encode", "train", "eval", "fewshot", "inspect-template", "gradcheck"] {
        let o = grasp(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(code(&grasp(&["--version"])), 0);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = grasp(&["train", "--data", s(&data("toy.json")), "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&grasp(&[])), 1);
}

#[test]
fn ingest_of_empty_input_reports_zero_counts() {
    let o = grasp(&["ingest", "--input", s(&data("empty.json"))]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n_dialogues"], 0);
    assert_eq!(v["n_instances"], 0);
    assert_eq!(v["cross_utterance_pct"], 0.0);
    assert_eq!(v["empty"], true);
}

#[test]
fn ingest_round_trips_through_normalized_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy.norm.json");
    let a = grasp(&["ingest", "--input", s(&data("toy.json")), "--out", s(&out)]);
    assert_eq!(code(&a), 0);
    let b = grasp(&["ingest", "--input", s(&out)]);
    assert_eq!(code(&b), 0);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["n_instances"], 25);
}

#[test]
fn bad_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "[[\"Speaker 1: hi\"], ").unwrap();
    let o = grasp(&["ingest", "--input", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed JSON"));
    assert_eq!(code(&grasp(&["ingest", "--input", s(&dir.path().join("missing.json"))])), 2);
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("split.json");
    std::fs::write(&out, "keep").unwrap();
    let toy = data("toy.json");
    let args = ["fewshot", "--data", s(&toy), "--k", "2", "--out", s(&out)];
    assert_eq!(code(&grasp(&args)), 1);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "keep");
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&grasp(&forced)), 0);
    assert_ne!(std::fs::read_to_string(&out).unwrap(), "keep");
}

#[test]
fn fewshot_is_reproducible_and_seed_dependent() {
    let run = |seed: &str| grasp(&["fewshot", "--data", s(&data("toy.json")), "--k", "2", "--seed", seed]);
    let (a, b, c) = (run("13"), run("13"), run("42"));
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["k"], 2);
    assert!(!v["train_ids"].as_array().unwrap().is_empty());
}

#[test]
fn encode_dump_lines_carry_markers_spans_and_clues() {
    let o = grasp(&["encode", "--input", s(&data("toy.json")), "--with-clues"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 25);
    for v in &lines {
        let tokens = v["tokens"].as_array().unwrap();
        assert_eq!(v["clue_labels"].as_array().unwrap().len(), tokens.len());
        assert_eq!(tokens[v["mask_index"].as_u64().unwrap() as usize], "[MASK]");
        let markers = v["marker_positions"].as_array().unwrap();
        assert!(!markers.is_empty());
        for m in markers {
            assert_eq!(tokens[m.as_u64().unwrap() as usize], "[p]");
        }
        assert!(!v["spans"].as_array().unwrap().is_empty());
    }
}

#[test]
fn inspect_template_prints_the_prompt() {
    let o = grasp(&["inspect-template", "--data", s(&data("siblings.json")), "--instance", "0"]);
    assert_eq!(code(&o), 0);
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(line.starts_with("[CLS] "));
    assert!(line.trim_end().ends_with("[subj] frank jr . [subj] [MASK] [obj] alice [obj] [SEP]"), "{line}");
    let far = grasp(&["inspect-template", "--data", s(&data("siblings.json")), "--instance", "9"]);
    assert_eq!(code(&far), 1);
}

#[test]
fn gradcheck_passes_on_the_toy_corpus() {
    let o = grasp(&["gradcheck", "--data", s(&data("toy.json"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["max_relative_error"].as_f64().unwrap() < 1e-3);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let a = quick_train(&data("toy.json"), &p("a.json"), &p("a.log"), &[]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = quick_train(&data("toy.json"), &p("b.json"), &p("b.log"), &["--jobs", "1"]);
    assert_eq!(code(&b), 0);
    assert_eq!(std::fs::read(p("a.json")).unwrap(), std::fs::read(p("b.json")).unwrap());
    assert_eq!(std::fs::read(p("a.log")).unwrap(), std::fs::read(p("b.log")).unwrap());
    let log = std::fs::read_to_string(p("a.log")).unwrap();
    for (i, line) in log.lines().enumerate() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["epoch"], i + 1);
        for key in ["train_loss", "rcd_loss", "rel_loss", "dev_f1"] {
            assert!(v[key].is_number(), "{key}");
        }
    }
    // Existing checkpoint is protected.
    assert_eq!(code(&quick_train(&data("toy.json"), &p("a.json"), &p("c.log"), &[])), 1);
}

#[test]
fn training_on_a_fewshot_split() {
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("split.json");
    let f = grasp(&["fewshot", "--data", s(&data("toy.json")), "--k", "2", "--out", s(&split)]);
    assert_eq!(code(&f), 0);
    let o = quick_train(
        &data("toy.json"),
        &dir.path().join("ck.json"),
        &dir.path().join("log"),
        &["--fewshot", s(&split), "--precision", "f64"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_hyperparameters_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = quick_train(&data("toy.json"), &dir.path().join("ck"), &dir.path().join("log"), &["--batch-size", "0"]);
    assert_eq!(code(&o), 1);
    let o = quick_train(&data("toy.json"), &dir.path().join("ck"), &dir.path().join("log"), &["--heads", "3"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn eval_f1_matches_the_library_on_the_overfit_toy_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("toy.ck.json");
    let results = dir.path().join("results.json");
    let toy = data("toy.json");
    let log = dir.path().join("log");
    let t = grasp(&[
        "train", "--data", s(&toy), "--checkpoint", s(&ck), "--log", s(&log),
        "--epochs", "300", "--patience", "40", "--lr", "2e-3", "--dropout", "0",
        "--max-seq-len", "128", "--d-model", "64", "--layers", "2", "--heads", "2",
        "--trigger-source", "predicted", "--clue-input", "unmarked", "--seed", "13",
    ]);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));

    let args = ["eval", "--checkpoint", s(&ck), "--data", s(&toy), "--split", "train", "--out", s(&results)];
    assert_eq!(code(&grasp(&args)), 0);
    let text = std::fs::read_to_string(&results).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    for key in ["f1", "f1c", "per_relation", "config_hash"] {
        assert!(!v[key].is_null(), "{key}");
    }

    let g = load_checkpoint::<f32>(&ck).unwrap();
    let corpus = load_corpus(&toy, Split::Train).unwrap();
    let lib = evaluate(&g, &corpus).unwrap();
    let expected = format!("\"f1\": {}", serde_json::to_string(&lib.f1).unwrap());
    assert!(text.contains(&expected), "{expected} not in {text}");
    assert!(lib.f1 >= 0.95, "toy checkpoint did not overfit: {}", lib.f1);

    // Same inputs give the same results file, byte for byte.
    let again = dir.path().join("again.json");
    let mut args2 = args.to_vec();
    *args2.last_mut().unwrap() = s(&again);
    assert_eq!(code(&grasp(&args2)), 0);
    assert_eq!(text, std::fs::read_to_string(&again).unwrap());
}
