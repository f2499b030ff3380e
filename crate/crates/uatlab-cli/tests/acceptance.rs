//! Acceptance suite, command-line criterion: the shipped fixture model
//! verifies cleanly at 1e-9, a corrupted operator dump is rejected with
//! exit code 1, and a schema-broken model exits with code 2.

use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uatlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn criterion_10_cli_end_to_end() {
    let model = fixture("model.json");
    let input = fixture("input.json");

    let ok = run(&[
        "verify",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--tol",
        "1e-9",
    ]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "clean fixture failed: {}",
        String::from_utf8_lossy(&ok.stderr)
    );

    let corrupted = run(&[
        "verify",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--lowered",
        fixture("lowered_layer0_corrupt.json").to_str().unwrap(),
        "--layer",
        "0",
        "--tol",
        "1e-9",
    ]);
    assert_eq!(corrupted.status.code(), Some(1));

    let broken = run(&[
        "verify",
        "--model",
        fixture("model_bad_schema.json").to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--tol",
        "1e-9",
    ]);
    assert_eq!(broken.status.code(), Some(2));

    println!("criterion 10 (cli verify exit codes 0/1/2): PASS");
}
