use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn kbie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbie")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = kbie(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, preset: &str) {
    ok(&["generate", "--preset", preset, "--seed", "3", "--out", p(dir), "--docs", "6"]);
}

fn write_config(path: &Path, value: Value) {
    fs::write(path, serde_json::to_vec_pretty(&value).unwrap()).unwrap();
}

#[test]
fn build_dict_respects_cap_and_reports_missing_input() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), "kb-separable");
    let dict = tmp.path().join("dict.jsonl");
    ok(&["build-dict", "--hypercorpus", p(&tmp.path().join("hypercorpus.jsonl")), "--out", p(&dict), "--cap", "1"]);
    let d = kbie::kbstore::CandidateDictionary::load(&dict).unwrap();
    assert!(!d.is_empty());
    assert_eq!(d.max_candidates(), 1);

    let out = kbie(&["build-dict", "--hypercorpus", p(&tmp.path().join("absent.jsonl")), "--out", p(&dict)]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_embeddings_writes_deterministic_stores() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), "kb-separable");
    let triples = tmp.path().join("triples.tsv");
    let (a, b) = (tmp.path().join("a.bin"), tmp.path().join("b.bin"));
    for out in [&a, &b] {
        ok(&["train-embeddings", "--source", "graph", "--triples", p(&triples), "--out", p(out), "--seed", "5", "--epochs", "20"]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let store = kbie::kbstore::EmbeddingStore::load(&a).unwrap();
    assert_eq!(store.source(), kbie::kbstore::KbSource::Graph);
    let header = fs::read_to_string(kbie::kbstore::EmbeddingStore::header_path(&a)).unwrap();
    assert!(header.contains("kb-graph"));

    let out = kbie(&["train-embeddings", "--source", "text", "--out", p(&a)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn baseline_train_evaluate_predict_round() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "memorizable");
    let cfg = tmp.path().join("run.json");
    write_config(
        &cfg,
        json!({
            "data": {"train": "data/train.jsonl", "test": "data/train.jsonl"},
            "kb_source": "none",
            "optimizer": {"epochs": 2},
            "seed": 7,
            "output": "ckpt"
        }),
    );
    ok(&["train", "--config", p(&cfg)]);
    let ckpt = tmp.path().join("ckpt");
    for f in ["model.json", "params.bin", "config.json", "train_log.jsonl", "test_metrics.json"] {
        assert!(ckpt.join(f).exists(), "{f} missing");
    }
    assert!(!ckpt.join("dictionary.jsonl").exists());

    let corpus = data.join("train.jsonl");
    let (m1, m2) = (tmp.path().join("m1.json"), tmp.path().join("m2.json"));
    for m in [&m1, &m2] {
        ok(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--out", p(m)]);
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());

    let pred = tmp.path().join("pred.jsonl");
    ok(&["predict", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--out", p(&pred)]);
    let out = ok(&["evaluate", "--predictions", p(&pred), "--corpus", p(&corpus)]);
    let from_pred: Value = serde_json::from_slice(&out.stdout).unwrap();
    let from_ckpt: Value = serde_json::from_slice(&fs::read(&m1).unwrap()).unwrap();
    assert_eq!(from_pred, from_ckpt);

    let out = kbie(&["evaluate", "--checkpoint", p(&tmp.path().join("nope")), "--corpus", p(&corpus)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gold_as_prediction_scores_one_with_slices() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), "memorizable");
    let gold = tmp.path().join("train.jsonl");
    let out = ok(&[
        "evaluate", "--predictions", p(&gold), "--corpus", p(&gold),
        "--train-corpus", p(&gold), "--buckets", "0-3,4-",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for k in ["muc", "b3", "ceafe", "ner_hard", "re_hard"] {
        assert_eq!(v[k]["f1"], 1.0, "{k}");
    }
    assert_eq!(v["coref_avg"], 1.0);
    assert!(v.get("el_top1").is_none());
    assert_eq!(v["slices"].as_array().unwrap().len(), 2);
}

#[test]
fn invalid_schemes_exit_with_allowed_values() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.json");
    write_config(&cfg, json!({"kb_source": "both", "scheme": "softmax", "seed": 1}));
    let out = kbie(&["train", "--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("attprior"));

    write_config(&cfg, json!({"kb_source": "none", "seed": 1}));
    let out = kbie(&["train", "--config", p(&cfg), "--scheme", "softmax"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("attprior"));

    let out = kbie(&["train", "--config", p(&cfg), "--scheme", "prior"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline"));

    write_config(&cfg, json!({"kb_source": "none"}));
    let out = kbie(&["train", "--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn attprior_training_and_weight_report() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "kb-separable");
    let d = |f: &str| data.join(f);
    ok(&["train-embeddings", "--source", "text", "--hypercorpus", p(&d("hypercorpus.jsonl")), "--out", p(&d("text.bin")), "--epochs", "2"]);
    ok(&["train-embeddings", "--source", "graph", "--triples", p(&d("triples.tsv")), "--out", p(&d("graph.bin")), "--epochs", "20"]);
    let cfg = tmp.path().join("run.json");
    write_config(
        &cfg,
        json!({
            "data": {
                "train": "data/train.jsonl",
                "dictionary": "data/dictionary.jsonl",
                "text_store": "data/text.bin",
                "graph_store": "data/graph.bin"
            },
            "kb_source": "both",
            "scheme": "attprior",
            "optimizer": {"epochs": 1},
            "seed": 2
        }),
    );
    let ckpt = tmp.path().join("ckpt");
    ok(&["train", "--config", p(&cfg), "--output", p(&ckpt)]);
    let model = kbie::model::Model::load(&ckpt).unwrap();
    assert_eq!(model.scheme(), Some(kbie::kbmodule::WeightingScheme::AttPrior));
    assert!(model.params.by_name("kb/attention/w0").is_some());

    let (r1, r2) = (tmp.path().join("r1.txt"), tmp.path().join("r2.txt"));
    for r in [&r1, &r2] {
        ok(&["report-weights", "--checkpoint", p(&ckpt), "--corpus", p(&d("test.jsonl")), "--out", p(r)]);
    }
    let report = fs::read_to_string(&r1).unwrap();
    assert_eq!(report, fs::read_to_string(&r2).unwrap());
    let mut schemes = std::collections::BTreeSet::new();
    for line in report.lines().filter(|l| !l.is_empty()) {
        if let Some(h) = line.strip_prefix("# ") {
            schemes.insert(h.split('\t').nth(3).unwrap().to_string());
        } else {
            let f: Vec<&str> = line.split('\t').collect();
            assert_eq!(f.len(), 4, "{line}");
            f[2].parse::<f64>().unwrap();
            f[3].parse::<f64>().unwrap();
        }
    }
    assert_eq!(schemes.into_iter().collect::<Vec<_>>(), ["attprior", "prior", "uniform"]);

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    ok(&["report-weights", "--checkpoint", p(&ckpt), "--corpus", p(&empty), "--out", p(&r1)]);
    assert_eq!(fs::read_to_string(&r1).unwrap(), "");
}

#[test]
fn sweep_with_one_cell_and_one_seed_has_no_std() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), "memorizable");
    let cfg = tmp.path().join("sweep.json");
    write_config(
        &cfg,
        json!({
            "data": {"train": "train.jsonl", "test": "train.jsonl"},
            "optimizer": {"epochs": 1},
            "seed": 0
        }),
    );
    let json_out = tmp.path().join("table.json");
    let out = ok(&["sweep", "--config", p(&cfg), "--sources", "none", "--seeds", "4", "--out", p(&json_out)]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 2, "{table}");
    assert!(!table.contains('±'));
    let v: Value = serde_json::from_slice(&fs::read(&json_out).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
    assert!(v["rows"][0]["ner"].get("std").is_none());
}

#[test]
fn diverging_training_exits_with_numerics_code() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), "memorizable");
    let cfg = tmp.path().join("run.json");
    write_config(
        &cfg,
        json!({
            "data": {"train": "train.jsonl"},
            "optimizer": {"epochs": 3, "lr": 1e300, "clip": null},
            "seed": 1,
            "output": "out"
        }),
    );
    let out = kbie(&["train", "--config", p(&cfg)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
