use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_grc-attn"));
    c.env("GRC_ATTN_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn base_config(attention: Value) -> Value {
    json!({
        "seed": 1,
        "task": { "seed": 2, "vocab": 6, "min_len": 2, "max_len": 4, "upsample": 2, "noise": 0.1 },
        "train_size": 16,
        "dev_size": 4,
        "model": { "d_x": 6, "d_h": 6, "d_s": 6, "d_a": 5, "d_emb": 3, "vocab": 6, "lookahead": 1, "stride": 2 },
        "attention": attention,
        "optimizer": { "lr": 0.01, "batch_size": 8 },
        "epochs": 2,
        "eval_every": 1,
        "decode": { "beam": 1, "max_len": 10 },
        "nu": [0.0, 0.01, 0.1, 0.5]
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains into `dir/name` and returns the output directory.
fn train(dir: &Path, name: &str, attention: Value) -> PathBuf {
    let cfg = write_config(dir, &format!("{name}.json"), &base_config(attention));
    let out = dir.join(name);
    let o = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn verify_exit_codes() {
    let ok = run(&["verify", "--trials", "100", "--seed", "9"]);
    assert_eq!(code(&ok), 0);
    let text = String::from_utf8(ok.stdout).unwrap();
    for name in ["duality", "round_trip", "decgrc_gate_law", "convergence_bound", "gradients"] {
        assert!(text.contains(name), "{text}");
    }
    let bad = run(&["verify", "--trials", "10", "--inject-fault"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--seed"));
    assert_eq!(code(&run(&["verify", "--trials", "0"])), 2);
}

#[test]
fn verify_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--trials", "20", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 5);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["train"])), 2);

    let with_w = write_config(d, "grc_w.json", &base_config(json!({"kind": "grc", "w": 3})));
    assert_eq!(code(&run(&["train", "--config", s(&with_w), "--out", s(&d.join("x"))])), 2);
    let no_w = write_config(d, "mocha.json", &base_config(json!({"kind": "mocha"})));
    assert_eq!(code(&run(&["train", "--config", s(&no_w), "--out", s(&d.join("x"))])), 2);
    let mut typo = base_config(json!({"kind": "decgrc"}));
    typo["epoch"] = json!(3);
    let typo = write_config(d, "typo.json", &typo);
    assert_eq!(code(&run(&["train", "--config", s(&typo), "--out", s(&d.join("x"))])), 2);

    let good = write_config(d, "good.json", &base_config(json!({"kind": "decgrc"})));
    let o = run(&["train", "--config", s(&good)]);
    assert_eq!(code(&o), 2, "missing output directory");
    let missing = d.join("nope.json");
    assert_eq!(code(&run(&["train", "--config", s(&missing), "--out", s(d)])), 2);
}

#[test]
fn train_is_reproducible_and_sweep_checks_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = train(d, "a", json!({"kind": "decgrc"}));
    let b = train(d, "b", json!({"kind": "decgrc"}));
    for f in ["loss.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let loss = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("iteration,epoch,train_ce,dev_ce"));
    assert_eq!(loss.lines().count(), 1 + 4);

    // Re-running from the saved config reproduces the artifacts.
    let c = d.join("c");
    let o = run(&["train", "--config", s(&a.join("config.json")), "--out", s(&c)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(c.join("loss.csv")).unwrap());

    let ckpt = a.join("checkpoint.bin");
    let cfg = a.join("config.json");
    let sweep = |out: &Path, nu: &str| run(&["sweep", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(out), "--nu", nu]);
    assert_eq!(code(&sweep(&d.join("s1"), "0,0.01,0.1,0.5")), 0);
    assert_eq!(code(&sweep(&d.join("s2"), "0,0.01,0.1,0.5")), 0);
    let csv1 = fs::read_to_string(d.join("s1/sweep.csv")).unwrap();
    assert_eq!(csv1, fs::read_to_string(d.join("s2/sweep.csv")).unwrap());
    assert_eq!(fs::read(d.join("s1/sweep.jsonl")).unwrap(), fs::read(d.join("s2/sweep.jsonl")).unwrap());
    let rows: Vec<Vec<f64>> = csv1
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[1][2] <= w[0][2]), "{csv1}");
    assert_eq!(code(&sweep(&d.join("s3"), "")), 2);

    let g = train(d, "g", json!({"kind": "grc"}));
    let o = run(&[
        "sweep",
        "--config",
        s(&g.join("config.json")),
        "--checkpoint",
        s(&g.join("checkpoint.bin")),
        "--out",
        s(&d.join("s4")),
    ]);
    assert_eq!(code(&o), 2);
    // A checkpoint that does not match the config.
    let o = run(&["sweep", "--config", s(&cfg), "--checkpoint", s(&g.join("checkpoint.bin")), "--out", s(&d.join("s5"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn decode_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = train(d, "a", json!({"kind": "decgrc"}));
    let args = |out: &Path, nu: Option<&str>| {
        let mut v = vec![
            "decode".to_string(),
            "--config".into(),
            s(&a.join("config.json")).into(),
            "--checkpoint".into(),
            s(&a.join("checkpoint.bin")).into(),
            "--out".into(),
            s(out).into(),
        ];
        if let Some(nu) = nu {
            v.extend(["--nu".to_string(), nu.to_string()]);
        }
        bin().args(v).output().unwrap()
    };
    assert_eq!(code(&args(&d.join("d1"), None)), 0);
    assert_eq!(code(&args(&d.join("d2"), Some("0.1"))), 0);
    assert_eq!(code(&args(&d.join("d3"), Some("0.1,0.2"))), 2);
    let online = fs::read_to_string(d.join("d2/decode.jsonl")).unwrap();
    assert_eq!(online.lines().count(), 4);
    let first: Value = serde_json::from_str(online.lines().next().unwrap()).unwrap();
    assert!(first["endpoints"].is_array());
    let saved: Value = serde_json::from_str(&fs::read_to_string(d.join("d2/config.json")).unwrap()).unwrap();
    assert_eq!(saved["decode"]["nu"], json!(0.1));
}

fn dump(d: &Path, trained: &Path, name: &str, id: &str) -> Output {
    run(&[
        "dump-attention",
        "--config",
        s(&trained.join("config.json")),
        "--checkpoint",
        s(&trained.join("checkpoint.bin")),
        "--out",
        s(&d.join(name)),
        "--utterance",
        id,
    ])
}

#[test]
fn attention_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let gsa = train(d, "gsa", json!({"kind": "gsa"}));
    assert_eq!(code(&dump(d, &gsa, "p1", "3")), 0);
    for row in read_matrix(&d.join("p1/attention.csv")) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(!d.join("p1/gates.csv").exists());

    let dec = train(d, "dec", json!({"kind": "decgrc"}));
    assert_eq!(code(&dump(d, &dec, "p2", "1000001")), 0);
    let gates = read_matrix(&d.join("p2/gates.csv"));
    for row in &gates {
        assert_eq!(row[0], 1.0);
        assert!(row[1..].windows(2).all(|w| w[1] <= w[0]));
    }
    let pgm = fs::read(d.join("p2/gates.pgm")).unwrap();
    let (u, t) = (gates.len(), gates[0].len());
    let header = format!("P5 {t} {u} 255\n");
    assert!(pgm.starts_with(header.as_bytes()));
    assert_eq!(pgm.len(), header.len() + t * u);
    let att = fs::read(d.join("p2/attention.pgm")).unwrap();
    assert!(att.starts_with(header.as_bytes()));

    assert_eq!(code(&dump(d, &dec, "p3", "1000001")), 0);
    for f in ["attention.csv", "attention.pgm", "gates.csv", "gates.pgm", "tokens.json"] {
        assert_eq!(fs::read(d.join("p2").join(f)).unwrap(), fs::read(d.join("p3").join(f)).unwrap());
    }
    assert_eq!(code(&dump(d, &dec, "p4", "16")), 2);
}
