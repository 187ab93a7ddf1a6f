use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const SMALL: &str = r#"
seed = 3

[encoder]
dim = 16

[trainer]
max_epochs = 2
min_epochs = 1
max_generations = 2

[augment]
batches = 2
per_batch = 6

[q_model]
embed_dim = 8
hidden = 8
vocab_buckets = 512
max_epochs = 3
min_epochs = 1

[synthetic]
n_labeled = 60
n_unlabeled = 60
n_test = 30
"#;

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_supportneeds"));
        c.env_clear()
            .current_dir(self.dir.path())
            .arg("--config")
            .arg("small.toml")
            .args(args);
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn synth(&self) {
        self.ok(&["synth", "--out", "data"]);
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn jsonl_records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn stage_by_stage_pipeline() {
    let w = Work::new();
    w.synth();
    w.ok(&[
        "train-qa",
        "--labeled",
        "data/labeled.jsonl",
        "--unlabeled",
        "data/unlabeled.jsonl",
        "--out",
        "qa",
    ]);
    assert!(w.path("qa/qa_model/manifest.json").exists());
    assert!(w.path("qa/generation-0/params.bin").exists());
    let log = w.json("qa/training_log.json");
    assert!(log["generation_count"].as_u64().unwrap() >= 1);
    assert!(w.path("qa/effective_config.toml").exists());

    w.ok(&[
        "pseudo-label",
        "--checkpoint",
        "qa/qa_model",
        "--unlabeled",
        "data/unlabeled.jsonl",
        "--out",
        "pl",
    ]);
    let summary = w.json("pl/pseudo_summary.json");
    assert_eq!(summary["input"], 60);

    w.ok(&["augment", "--labeled", "data/labeled.jsonl", "--out", "aug"]);
    w.ok(&[
        "select",
        "--candidates",
        "aug/generated.jsonl",
        "--labeled",
        "data/labeled.jsonl",
        "--out",
        "sel",
        "--sweep",
    ]);
    let curve = w.json("sel/selection_curve.json");
    let kept: Vec<u64> = curve["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["kept"].as_u64().unwrap())
        .collect();
    assert_eq!(kept.len(), 21);
    assert!(kept.windows(2).all(|k| k[1] <= k[0]), "{kept:?}");

    w.ok(&[
        "train-q",
        "--labeled",
        "data/labeled.jsonl",
        "--pseudo",
        "pl/pseudo.jsonl",
        "--selected",
        "sel/selected.jsonl",
        "--out",
        "q",
    ]);
    w.ok(&[
        "evaluate",
        "--checkpoint",
        "q/q_model",
        "--test",
        "data/test.jsonl",
        "--out",
        "ev",
        "--roc",
    ]);
    let metrics = w.json("ev/metrics.json");
    assert_eq!(metrics["n_samples"], 30);
    let f1 = metrics["micro"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert!(w.json("ev/roc.json")["micro"].as_array().unwrap().len() >= 2);

    let mut child = w
        .cmd(&["predict", "--checkpoint", "q/q_model"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"Where can I find a support group for my diagnosis?\n?!\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["probabilities"].as_object().unwrap().len(), 3);
    assert!(lines[0]["labels"].is_array());
    assert!(lines[1]["error"].is_string(), "{}", lines[1]);
}

#[test]
fn tau_one_admits_nothing() {
    let w = Work::new();
    w.synth();
    w.ok(&[
        "train-qa",
        "--labeled",
        "data/labeled.jsonl",
        "--unlabeled",
        "data/unlabeled.jsonl",
        "--out",
        "qa",
    ]);
    w.ok(&[
        "--set",
        "loss.tau=1.0",
        "pseudo-label",
        "--checkpoint",
        "qa/qa_model",
        "--unlabeled",
        "data/unlabeled.jsonl",
        "--out",
        "pl",
    ]);
    let text = std::fs::read_to_string(w.path("pl/pseudo.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1, "only the header line expected:\n{text}");
    assert_eq!(w.json("pl/pseudo_summary.json")["admitted"], 0);
}

#[test]
fn stub_generation_is_deterministic() {
    let w = Work::new();
    w.synth();
    w.ok(&["augment", "--labeled", "data/labeled.jsonl", "--out", "a1"]);
    w.ok(&["augment", "--labeled", "data/labeled.jsonl", "--out", "a2"]);
    let a = std::fs::read(w.path("a1/generated.jsonl")).unwrap();
    let b = std::fs::read(w.path("a2/generated.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(jsonl_records(&w.path("a1/generated.jsonl")).len(), 1 + 12);
}

#[test]
fn config_errors_exit_2() {
    let w = Work::new();
    let out = w.run(&["--set", "loss.tau=0.4", "synth", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("loss.tau"), "{}", stderr(&out));

    let out = w.run(&["--set", "model.nonsense=1", "synth", "--out", "x"]);
    assert_eq!(code(&out), 2);

    std::fs::write(w.path("bad.toml"), "[trainer]\nbatchsize = 4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_supportneeds"))
        .env_clear()
        .current_dir(w.dir.path())
        .args(["--config", "bad.toml", "synth", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("batchsize"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_exit_3() {
    let w = Work::new();
    let out = w.run(&["train-q", "--labeled", "nope.jsonl", "--out", "q"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("nope.jsonl"));

    let out = w.run(&["evaluate", "--checkpoint", "missing", "--test", "t.jsonl", "--out", "e"]);
    assert_eq!(code(&out), 3);

    std::fs::write(w.path("broken.jsonl"), "{\"id\": \"x\"\n").unwrap();
    let out = w.run(&["train-q", "--labeled", "broken.jsonl", "--out", "q"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));
}

#[test]
fn missing_credential_is_reported() {
    let w = Work::new();
    w.synth();
    let out = w.run(&[
        "--set",
        "augment.backend=chat",
        "augment",
        "--labeled",
        "data/labeled.jsonl",
        "--out",
        "aug",
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("SUPPORTNEEDS_LLM_API_KEY"), "{err}");
}

#[test]
fn existing_outputs_need_overwrite() {
    let w = Work::new();
    w.synth();
    let out = w.run(&["synth", "--out", "data"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--overwrite"));
    w.ok(&["--overwrite", "synth", "--out", "data"]);
}

#[test]
fn seed_flag_wins_over_config() {
    let w = Work::new();
    w.ok(&["--seed", "11", "synth", "--out", "s11"]);
    w.ok(&["--set", "seed=11", "synth", "--out", "t11"]);
    w.ok(&["synth", "--out", "s3"]);
    let read = |p: &str| std::fs::read(w.path(p)).unwrap();
    assert_eq!(read("s11/labeled.jsonl"), read("t11/labeled.jsonl"));
    assert_ne!(read("s11/labeled.jsonl"), read("s3/labeled.jsonl"));
    let eff = std::fs::read_to_string(w.path("s11/effective_config.toml")).unwrap();
    assert!(eff.contains("seed = 11"), "{eff}");
}

#[test]
fn cross_validation_reports_every_fold() {
    let w = Work::new();
    w.synth();
    w.ok(&[
        "cv",
        "--labeled",
        "data/labeled.jsonl",
        "--unlabeled",
        "data/unlabeled.jsonl",
        "--variant",
        "semi-supervised",
        "--baseline",
        "supervised",
        "--out",
        "cv",
    ]);
    let report = w.json("cv/cv_report.json");
    assert_eq!(report["folds"].as_array().unwrap().len(), 10);
    assert_eq!(w.json("cv/cv_baseline.json")["folds"].as_array().unwrap().len(), 10);
    let p = w.json("cv/comparison.json")["wilcoxon"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}
