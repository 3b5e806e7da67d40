use std::collections::BTreeSet;
use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use lgp::encoder::{DescriptionProvider, EmbeddingStore, StoreHeader};
use lgp::episodes::{Corpus, SplitSpec};
use lgp::numerics::Mat;
use lgp::pipeline::required_prompts;
use lgp::prompts::TemplateSet;
use tempfile::TempDir;

fn lgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgp")).args(args).output().expect("run lgp")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic corpus and split under `dir/data`.
fn synth(dir: &Path, spec: Option<&str>) -> (String, String) {
    let data = dir.join("data");
    let mut args = vec!["synth", "--seed", "13", "--out", p(&data)];
    let spec_path = dir.join("spec.json");
    if let Some(spec) = spec {
        fs::write(&spec_path, spec).unwrap();
        args.extend(["--spec", p(&spec_path)]);
    }
    let out = lgp(&args);
    assert!(out.status.success(), "{}", text(&out.stderr));
    (
        data.join("corpus.jsonl").to_str().unwrap().to_string(),
        data.join("split.json").to_str().unwrap().to_string(),
    )
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (ca, sa) = synth(a.path(), None);
    let (cb, sb) = synth(b.path(), None);
    assert_eq!(fs::read(ca).unwrap(), fs::read(cb).unwrap());
    assert_eq!(fs::read(sa).unwrap(), fs::read(sb).unwrap());
}

#[test]
fn help_and_parse_errors() {
    assert_eq!(code(&lgp(&["--help"])), 0);
    assert_eq!(code(&lgp(&["frobnicate"])), 1);
    assert_eq!(code(&lgp(&["eval", "--n-way", "five"])), 1);
    assert_eq!(code(&lgp(&["eval", "--token-state", "frozen"])), 1);
}

#[test]
fn validation_failures_exit_1() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), None);
    let out_dir = dir.path().join("out");
    let base = ["--corpus", corpus.as_str(), "--split", split.as_str(), "--out", p(&out_dir)];

    let missing = lgp(&["eval", "--corpus", p(&dir.path().join("nope.jsonl")), "--split", &split]);
    assert_eq!(code(&missing), 1);
    assert!(text(&missing.stderr).contains("does not exist"));

    assert_eq!(code(&lgp(&["eval", "--split", &split])), 1);

    let mut args = vec!["eval"];
    args.extend(base);
    args.extend(["--n-way", "0"]);
    assert_eq!(code(&lgp(&args)), 1);

    let mut args = vec!["eval"];
    args.extend(base);
    args.extend(["--n-way", "9"]);
    assert_eq!(code(&lgp(&args)), 1, "9-way on a 5-class test split");

    let mut args = vec!["eval"];
    args.extend(base);
    args.extend(["--preset", "no-such-preset"]);
    assert_eq!(code(&lgp(&args)), 1);

    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"n_wya": 5}"#).unwrap();
    let out = lgp(&["eval", "--config", p(&config)]);
    assert_eq!(code(&out), 1);
    assert!(text(&out.stderr).contains("n_wya"), "{}", text(&out.stderr));

    let mut args = vec!["eval", "--encoder", "store"];
    args.extend(base);
    assert_eq!(code(&lgp(&args)), 1, "store encoder without --store");
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), None);
    let out_dir = dir.path().join("out");
    let config = dir.path().join("run.json");
    let json = serde_json::json!({
        "corpus": corpus,
        "split": split,
        "out": out_dir,
        "d": 8,
        "n_way": 3,
        "k_shot": 2,
        "eval_tasks": 4,
        "seed": 5,
    });
    fs::write(&config, json.to_string()).unwrap();

    let out = lgp(&["eval", "--config", p(&config)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let r = report(&out_dir);
    assert_eq!(r["protocol"]["n_way"], 3);
    assert_eq!(r["protocol"]["k_shot"], 2);
    assert_eq!(r["protocol"]["episodes"], 4);
    assert_eq!(r["seed"], 5);

    let out = lgp(&["eval", "--config", p(&config), "--n-way", "4", "--episodes", "2", "--seed", "6"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let r = report(&out_dir);
    assert_eq!(r["protocol"]["n_way"], 4);
    assert_eq!(r["protocol"]["k_shot"], 2);
    assert_eq!(r["protocol"]["episodes"], 2);
    assert_eq!(r["seed"], 6);
}

/// Writes a store whose vectors are class-marker indicators, the export an
/// ideal encoder would produce.
fn oracle_store(corpus: &str, split: &str, path: &Path) -> usize {
    let corpus = Corpus::load(corpus).unwrap();
    let split = SplitSpec::load(split).unwrap();
    let templates = TemplateSet::default();
    let provider = DescriptionProvider::offline(templates.clone());
    let labels: Vec<String> = split.test.clone();
    let needed = required_prompts(&corpus, &labels, &templates, &provider).unwrap();
    let mut store = EmbeddingStore::new(StoreHeader::new(labels.len(), templates.mask_count, "marker-oracle"));
    for (key, prompt) in &needed {
        let mut row = vec![0.0; labels.len()];
        for token in prompt.context_tokens() {
            if let Some(i) = labels.iter().position(|l| l == token) {
                row[i] = 1.0;
            }
        }
        store
            .insert(key.clone(), Mat::from_rows(&vec![row; templates.mask_count]).unwrap())
            .unwrap();
    }
    store.save(path).unwrap();
    needed.len()
}

#[test]
fn oracle_store_scores_perfectly() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), None);
    let store = dir.path().join("store.jsonl");
    oracle_store(&corpus, &split, &store);
    let out_dir = dir.path().join("out");
    let out = lgp(&[
        "eval", "--corpus", &corpus, "--split", &split, "--encoder", "store", "--store", p(&store),
        "--episodes", "40", "--out", p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).trim(), "F1 100.00 AUC 100.00");
    assert_eq!(report(&out_dir)["macro_f1"], 1.0);
}

#[test]
fn store_missing_prompts_exit_2() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), None);
    let store = dir.path().join("store.jsonl");
    oracle_store(&corpus, &split, &store);
    // drop one record
    let text_in = fs::read_to_string(&store).unwrap();
    let mut lines: Vec<&str> = text_in.lines().collect();
    lines.pop();
    fs::write(&store, lines.join("\n") + "\n").unwrap();

    let out = lgp(&[
        "eval", "--corpus", &corpus, "--split", &split, "--encoder", "store", "--store", p(&store),
        "--out", p(&dir.path().join("out")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("lacks 1 of"), "{}", text(&out.stderr));

    let out = lgp(&[
        "eval", "--corpus", &corpus, "--split", &split, "--encoder", "store", "--store", p(&store), "--m", "2",
        "--out", p(&dir.path().join("out")),
    ]);
    assert_eq!(code(&out), 1, "mask count mismatch is a validation error");
}

#[test]
fn malformed_corpus_exits_2() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), None);
    let mut text_in = fs::read_to_string(&corpus).unwrap();
    text_in.push_str("{not json\n");
    fs::write(&corpus, text_in).unwrap();
    let out = lgp(&["eval", "--corpus", &corpus, "--split", &split, "--out", p(&dir.path().join("out"))]);
    assert_eq!(code(&out), 2, "{}", text(&out.stderr));
}

#[test]
fn unreachable_description_endpoint_exits_3() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), None);
    // bind then drop, leaving a port nothing listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = dir.path().join("remote.json");
    let json = serde_json::json!({
        "remote": {"url": format!("http://127.0.0.1:{port}/v1/chat/completions"), "model": "m", "timeout_secs": 2},
    });
    fs::write(&config, json.to_string()).unwrap();
    let out = lgp(&[
        "describe", "--config", p(&config), "--corpus", &corpus, "--split", &split, "--part", "test", "--out",
        p(&dir.path().join("out")),
    ]);
    assert_eq!(code(&out), 3, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("5 failed"));
}

#[test]
fn describe_writes_a_cache_that_is_replayed() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), None);
    let cache = dir.path().join("desc.jsonl");
    let out_dir = dir.path().join("out");
    let args = [
        "describe", "--corpus", &corpus, "--split", &split, "--description-cache", p(&cache), "--out",
        p(&out_dir),
    ];
    let first = lgp(&args);
    assert!(first.status.success(), "{}", text(&first.stderr));
    assert!(text(&first.stdout).starts_with("0 cached, 20 resolved (0 remote requests), 0 failed"));
    assert_eq!(fs::read_to_string(&cache).unwrap().lines().count(), 20);
    let second = lgp(&args);
    assert!(text(&second.stdout).starts_with("20 cached, 0 resolved"));
}

#[test]
fn export_covers_every_test_class() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), Some(r#"{"test_classes": 20, "sentences_per_class": 20}"#));
    let out_dir = dir.path().join("out");
    let out = lgp(&[
        "export-prototypes", "--corpus", &corpus, "--split", &split, "--d", "8", "--out", p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let lines: Vec<serde_json::Value> = fs::read_to_string(out_dir.join("prototypes.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 20 * 5);
    let labels: BTreeSet<&str> = lines.iter().map(|l| l["label"].as_str().unwrap()).collect();
    let test: Vec<String> = SplitSpec::load(&split).unwrap().test;
    assert_eq!(labels, test.iter().map(String::as_str).collect());
    assert!(lines.iter().all(|l| l["r"].as_array().unwrap().len() == 8));
}

#[test]
fn gradcheck_reports_pass() {
    let out = lgp(&["gradcheck", "--episodes", "3", "--seed", "2"]);
    assert!(out.status.success());
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("3 episodes, "), "{stdout}");
    assert!(stdout.contains("max rel err ≤ 1e-4: PASS"));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let (corpus, split) = synth(dir.path(), None);
    let common = [
        "--corpus", corpus.as_str(), "--split", split.as_str(), "--d", "8", "--tasks-per-epoch", "6",
        "--val-tasks", "3", "--seed", "4",
    ];
    let train = |out: &Path, extra: &[&str]| {
        let mut args = vec!["train"];
        args.extend(common);
        args.extend(["--out", p(out)]);
        args.extend(extra);
        let o = lgp(&args);
        assert!(o.status.success(), "{}", text(&o.stderr));
        o
    };
    let straight = dir.path().join("straight");
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let o = train(&straight, &["--epochs", "2"]);
    assert!(text(&o.stdout).starts_with("best epoch "));
    train(&first, &["--epochs", "1"]);
    let last = first.join("checkpoint_last.json");
    train(&second, &["--epochs", "2", "--resume", p(&last)]);

    assert_eq!(
        fs::read(straight.join("checkpoint_last.json")).unwrap(),
        fs::read(second.join("checkpoint_last.json")).unwrap()
    );
    assert_eq!(fs::read_to_string(straight.join("train_log.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_to_string(second.join("train_log.jsonl")).unwrap().lines().count(), 1);

    let eval = lgp(&[
        "eval", "--corpus", &corpus, "--split", &split, "--checkpoint", p(&second.join("checkpoint.json")),
        "--episodes", "3", "--out", p(&second),
    ]);
    assert!(eval.status.success(), "{}", text(&eval.stderr));
    assert!(text(&eval.stdout).starts_with("F1 "));
}
