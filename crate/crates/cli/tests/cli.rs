//! End-to-end CLI tests over the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kvsplit"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kvsplit-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn no_subcommand_exits_2_with_usage() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(text.contains("Usage"), "no usage text in output");
}

#[test]
fn unknown_flag_exits_2_on_stderr() {
    let out = run(&["segment", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_file_is_runtime_error_exit_1() {
    let out = run(&[
        "segment",
        "--tokens",
        "/nonexistent/tokens.jsonl",
        "--weights",
        "/nonexistent/weights.json",
        "--chunk",
        "24",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_segment_params_exit_1() {
    let fixtures = fixtures();
    let out = run(&[
        "segment",
        "--tokens",
        fixtures.join("tokens.jsonl").to_str().unwrap(),
        "--weights",
        fixtures.join("delimiter_weights.json").to_str().unwrap(),
        "--chunk",
        "8",
        "--delta",
        "14",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn segment_matches_committed_golden() {
    let fixtures = fixtures();
    let out = run(&[
        "segment",
        "--tokens",
        fixtures.join("tokens.jsonl").to_str().unwrap(),
        "--weights",
        fixtures.join("delimiter_weights.json").to_str().unwrap(),
        "--chunk",
        "24",
        "--delta",
        "6",
        "--mix",
        "0.5",
    ]);
    assert!(out.status.success());
    let golden = std::fs::read(fixtures.join("segment_golden.json")).unwrap();
    assert_eq!(out.stdout, golden);
}

#[test]
fn simulate_streams_step_stats_json_lines() {
    let out = run(&[
        "simulate",
        "--seq-len",
        "256",
        "--steps",
        "5",
        "--budget",
        "32",
        "--seed",
        "3",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.trim_end().lines().collect();
    assert_eq!(lines.len(), 5);
    for (step, line) in lines.iter().enumerate() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(value["step"], step);
        let fresh = value["fresh"].as_u64().unwrap();
        let reused = value["reused"].as_u64().unwrap();
        assert_eq!(fresh + reused, 32);
        assert!(value["blocks_scored"].as_u64().unwrap() > 0);
    }
}

#[test]
fn score_delimiters_end_to_end() {
    // Build a tensor whose future windows stay local: every query attends
    // to itself. Then any candidate id gets a weight.
    let dir = tmp_dir();
    let s = 24usize;
    let mut values = vec![0.0f64; s * s];
    for q in 0..s {
        values[q * s + q] = 1.0;
    }
    let tensor = kvsplit::AttentionTensor::from_values(1, 1, s, values).unwrap();
    let attn_path = dir.join("local.atn1");
    kvsplit::io::write_attention(&attn_path, &tensor).unwrap();

    let tokens: Vec<u32> = (0..s as u32).map(|i| if i % 6 == 5 { 777 } else { i }).collect();
    let tokens_path = dir.join("tokens.jsonl");
    kvsplit::io::write_token_sequences(
        &tokens_path,
        &[kvsplit::TokenSequence::new(tokens)],
    )
    .unwrap();

    let candidates_path = dir.join("candidates.json");
    std::fs::write(&candidates_path, "[777]").unwrap();

    let out = run(&[
        "score-delimiters",
        "--attn",
        attn_path.to_str().unwrap(),
        "--tokens",
        tokens_path.to_str().unwrap(),
        "--candidates",
        candidates_path.to_str().unwrap(),
        "--window",
        "4",
        "--overlap",
        "8",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table =
        kvsplit::io::parse_delimiter_table(&String::from_utf8(out.stdout).unwrap()).unwrap();
    // Single token id under min-max collapses to weight 1.0.
    assert_eq!(table.weight(777), Some(1.0));
}

#[test]
fn score_delimiters_rejects_length_mismatch() {
    let dir = tmp_dir();
    let s = 8usize;
    let mut values = vec![0.0f64; s * s];
    for q in 0..s {
        values[q * s + q] = 1.0;
    }
    let tensor = kvsplit::AttentionTensor::from_values(1, 1, s, values).unwrap();
    let attn_path = dir.join("mismatch.atn1");
    kvsplit::io::write_attention(&attn_path, &tensor).unwrap();
    let tokens_path = dir.join("short.jsonl");
    kvsplit::io::write_token_sequences(&tokens_path, &[kvsplit::TokenSequence::new(vec![1, 2])])
        .unwrap();
    let candidates_path = dir.join("cands.json");
    std::fs::write(&candidates_path, "[1]").unwrap();

    let out = run(&[
        "score-delimiters",
        "--attn",
        attn_path.to_str().unwrap(),
        "--tokens",
        tokens_path.to_str().unwrap(),
        "--candidates",
        candidates_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn passkey_reports_hit_rates_per_budget() {
    let out = run(&[
        "passkey",
        "--seq-len",
        "1024",
        "--seeds",
        "5",
        "--budgets",
        "16,64",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.trim_end().lines().collect();
    assert_eq!(lines.len(), 2);
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["budget"], 16);
    assert_eq!(first["trials"], 5);
    assert!(first["hit_rate"].is_number());
}
