//! Acceptance criterion 12: the bench sweep is byte-deterministic across
//! repeated runs and matches the committed golden CSV for a pinned
//! configuration. Criteria 1-11 live in the core crate's acceptance
//! target.

use std::path::Path;
use std::process::Command;

fn run_bench(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_kvsplit"))
        .arg("bench")
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "bench failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// C12: `bench` with fixed seeds emits byte-identical CSV on repeated runs
/// and reproduces the committed golden exactly.
#[test]
fn c12_bench_csv_determinism() {
    let args = [
        "--seeds",
        "3",
        "--seq-len",
        "512",
        "--heads",
        "2",
        "--head-dim",
        "8",
        "--budgets",
        "36,64",
        "--steps",
        "4",
    ];
    let first = run_bench(&args);
    let second = run_bench(&args);
    assert_eq!(first, second, "repeated runs differ");

    let header = first.split(|&b| b == b'\n').next().unwrap();
    assert_eq!(
        header,
        kvsplit::BENCH_CSV_HEADER.as_bytes(),
        "CSV header drifted"
    );
    // 3 seeds x 2 variants x 2 plans x 2 budgets data rows + header.
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 1 + 24);

    // Golden pin: a separate fixed configuration committed to the repo.
    let golden_args = [
        "--seeds",
        "2",
        "--seq-len",
        "1024",
        "--heads",
        "2",
        "--head-dim",
        "8",
        "--chunk",
        "16",
        "--delta",
        "14",
        "--mix",
        "0.5",
        "--budgets",
        "36,64,128",
        "--steps",
        "4",
    ];
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/fixtures/bench_golden.csv");
    let golden = std::fs::read(&golden_path).unwrap();
    assert_eq!(run_bench(&golden_args), golden, "golden CSV drifted");
    println!("[C12] bench CSV determinism: PASS (byte-identical reruns, golden reproduced)");
}
