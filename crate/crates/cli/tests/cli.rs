//! Black-box tests of the command-line surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dgao"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_raw_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("data.jsonl");
    let mut lines = String::new();
    for i in 0..3 {
        lines.push_str(&format!(
            "{{\"elements\":[\"doc-a{i}\",\"doc-b{i}\",\"doc-c{i}\"],\"question\":\"which{i}?\",\"label\":\"doc-a{i}\"}}\n"
        ));
    }
    std::fs::write(&path, lines).unwrap();
    path
}

// small, fast run for determinism checks
const FAST: &[&str] = &[
    "--set",
    "train_groups=8",
    "--set",
    "eval_groups=8",
    "--set",
    "epochs=1",
    "--set",
    "cold_start_steps=2",
];

#[test]
fn augment_writes_one_line_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_raw_dataset(dir.path());
    let out_dir = dir.path().join("out");
    let before = std::fs::read(&input).unwrap();
    let out = run(&[
        "augment",
        "--in",
        input.to_str().unwrap(),
        "--variants",
        "8",
        "--seed",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let augmented = std::fs::read_to_string(out_dir.join("augmented.jsonl")).unwrap();
    assert_eq!(augmented.lines().count(), 3 * 8);
    // inputs are never mutated
    assert_eq!(std::fs::read(&input).unwrap(), before);
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 7"));
    assert!(manifest.contains("artifact augmented.jsonl sha256="));
}

#[test]
fn augment_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_raw_dataset(dir.path());
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for out_dir in [&a, &b] {
        assert_success(&run(&[
            "augment",
            "--in",
            input.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]));
    }
    assert_success(&run(&[
        "augment",
        "--in",
        input.to_str().unwrap(),
        "--seed",
        "8",
        "--out",
        c.to_str().unwrap(),
    ]));
    let read = |d: &Path| std::fs::read(d.join("augmented.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn train_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let mut args = vec!["train", "--mode", "dgao", "--seed", "1"];
        args.extend_from_slice(FAST);
        args.extend_from_slice(&["--out", out_dir.to_str().unwrap()]);
        assert_success(&run(&args));
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "curves.csv"), read(&b, "curves.csv"));
    assert_eq!(read(&a, "report.csv"), read(&b, "report.csv"));
    assert_eq!(read(&a, "manifest.txt"), read(&b, "manifest.txt"));
    let curves = std::fs::read_to_string(a.join("curves.csv")).unwrap();
    assert!(curves.starts_with("epoch,accuracy,consistency_rate,overconfidence_rate\n"));
    assert_eq!(curves.lines().count(), 1 + 2, "epoch 0 plus one epoch");
}

#[test]
fn config_file_env_and_overrides_stack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "epochs = 1\nalpha = 0.25\ntrain_groups = 8\neval_groups = 8\ncold_start_steps = 2\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--set",
            "alpha=0.75",
            "--seed",
            "3",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .env("DGAO_ALPHA", "0.5") // file < env < --set
        .env("DGAO_KL_BETA", "0.01")
        .output()
        .unwrap();
    assert_success(&out);
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("alpha = 0.75"), "--set wins: {manifest}");
    assert!(manifest.contains("kl_beta = 0.01"), "env beats file defaults");
    assert!(manifest.contains("epochs = 1"));
    assert!(manifest.contains("seed = 3"));
}

#[test]
fn unknown_override_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--set",
        "no_such_knob=1",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_alpha_list_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--mode", "alpha_sweep", "--alphas", ""];
    args.extend_from_slice(FAST);
    let out_dir = dir.path().join("out");
    args.extend_from_slice(&["--out", out_dir.to_str().unwrap()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn alpha_sweep_writes_one_row_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let mut args = vec![
        "train",
        "--mode",
        "alpha_sweep",
        "--alphas",
        "1,0", // deliberately unsorted
        "--seed",
        "2",
    ];
    args.extend_from_slice(FAST);
    args.extend_from_slice(&["--out", out_dir.to_str().unwrap()]);
    assert_success(&run(&args));
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains("dgao(alpha=0)"), "sorted by alpha: {csv}");
    assert!(rows[1].contains("dgao(alpha=1)"));
    assert!(out_dir.join("curves_alpha_0.csv").exists());
    assert!(out_dir.join("curves_alpha_1.csv").exists());
}

#[test]
fn report_renders_parenthesized_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let baseline = dir.path().join("sft.csv");
    let method = dir.path().join("dgao.csv");
    let header = "dataset,method,accuracy,consistency_rate,overconfidence_rate,delta_accuracy,delta_consistency_rate,delta_overconfidence_rate";
    std::fs::write(&baseline, format!("{header}\nsearchqa,sft,0.5876,0.8121,0.2588,,,\n")).unwrap();
    std::fs::write(&method, format!("{header}\nsearchqa,paft,0.5631,0.8648,0.3349,,,\n")).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "report",
        "--baseline",
        baseline.to_str().unwrap(),
        "--method",
        method.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let table = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(table.contains("56.31 (-2.45)"), "table:\n{table}");
    assert!(table.contains("86.48 (+5.27)"), "table:\n{table}");
}

#[test]
fn replay_recomputes_from_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("data.jsonl");
    std::fs::write(
        &input,
        "{\"group_id\":\"g0\",\"elements\":[\"x\",\"y\"],\"question\":\"q\",\"label\":\"a\"}\n",
    )
    .unwrap();
    let aug_dir = dir.path().join("aug");
    assert_success(&run(&[
        "augment",
        "--in",
        input.to_str().unwrap(),
        "--variants",
        "4",
        "--out",
        aug_dir.to_str().unwrap(),
    ]));
    let transcript = dir.path().join("transcript.jsonl");
    let mut lines = String::new();
    for (v, resp) in ["a", "a", "b", "a"].iter().enumerate() {
        lines.push_str(&format!(
            "{{\"group_id\":\"g0\",\"variant_index\":{v},\"request_digest\":\"d\",\"response_text\":\"{resp}\",\"latency_ms\":0,\"timestamp_ms\":0}}\n"
        ));
    }
    std::fs::write(&transcript, lines).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "replay",
        "--transcript",
        transcript.to_str().unwrap(),
        "--data",
        aug_dir.join("augmented.jsonl").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.contains("0.75,0.75,0.25"), "row: {row}");
}
