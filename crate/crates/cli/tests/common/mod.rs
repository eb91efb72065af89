#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use octopus_cli::train::{train, TrainArgs};
use octopus_core::tasks::{synth_cipher_lengths, write_jsonl};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cipher")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares against a golden file; `UPDATE_GOLDEN=1` rewrites it instead.
pub fn assert_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("missing golden {}: {e}", path.display()));
    assert_eq!(actual, want, "output differs from {}", path.display());
}

pub fn bin(name: &str) -> Command {
    let path = match name {
        "octopus" => env!("CARGO_BIN_EXE_octopus"),
        "octopus_interactive" => env!("CARGO_BIN_EXE_octopus_interactive"),
        "octopus-translitrate-ar2en" => env!("CARGO_BIN_EXE_octopus-translitrate-ar2en"),
        "octopus-diacritize" => env!("CARGO_BIN_EXE_octopus-diacritize"),
        "octopus-train" => env!("CARGO_BIN_EXE_octopus-train"),
        other => panic!("no binary {other}"),
    };
    Command::new(path)
}

pub fn run(name: &str, args: &[&str]) -> Output {
    bin(name).args(args).output().unwrap()
}

pub fn run_with_stdin(name: &str, args: &[&str], stdin: &str) -> Output {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = bin(name)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Trains the checked-in cipher model: both transliteration directions over
/// words of 2–6 letters.
pub fn build_fixture(out: &Path) -> PathBuf {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("train.jsonl");
    write_jsonl(&data, &synth_cipher_lengths(1500, 17, 2, 6).unwrap()).unwrap();
    let args = TrainArgs {
        train: Some(data),
        dev: None,
        unlabeled: None,
        gold_m2: None,
        strategy: "multitask".into(),
        steps: Some(1500),
        epochs: None,
        batch_size: 32,
        lr: 2e-3,
        linear_decay: false,
        seed: 17,
        eval_every: 0,
        labeled_ratio: 0.5,
        preset: "desk".into(),
        d_model: Some(32),
        layers: Some(2),
        max_seq_len: Some(40),
        dropout: Some(0.0),
        max_vocab: 4096,
        init: None,
        resume: None,
        out: work.path().join("run"),
    };
    let best = train(&args).unwrap();
    std::fs::create_dir_all(out).unwrap();
    for f in ["model.octo", "config.json", "vocab.txt"] {
        std::fs::copy(best.join(f), out.join(f)).unwrap();
    }
    out.to_path_buf()
}
