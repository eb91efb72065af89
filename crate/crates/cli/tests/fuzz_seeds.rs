//! The checked-in fuzz seeds are valid inputs and survive a round trip.

use std::path::{Path, PathBuf};

use octopus_cli::{parse_args, Parsed};
use octopus_core::metrics::{parse_m2, write_m2};
use octopus_core::model::checkpoint;
use octopus_core::tasks::{parse_jsonl_line, to_jsonl};
use octopus_core::tokenizer::Vocabulary;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(p: &Path, b: &[u8]) -> String {
    String::from_utf8(b.to_vec()).unwrap_or_else(|_| panic!("{} is not UTF-8", p.display()))
}

#[test]
fn vocab_seeds() {
    for (p, b) in seeds("vocab_file") {
        let v = Vocabulary::from_file_str(&text(&p, &b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(Vocabulary::from_file_str(&v.to_file_string()).unwrap(), v);
    }
}

#[test]
fn checkpoint_seeds() {
    for (p, b) in seeds("checkpoint") {
        let arrays = checkpoint::decode(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(checkpoint::encode(&arrays).unwrap(), b);
    }
}

#[test]
fn m2_seeds() {
    for (p, b) in seeds("m2_file") {
        let s = parse_m2(&text(&p, &b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(parse_m2(&write_m2(&s)).unwrap(), s);
    }
}

#[test]
fn jsonl_seeds() {
    for (p, b) in seeds("jsonl_line") {
        let e = parse_jsonl_line(&text(&p, &b), 1).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(parse_jsonl_line(to_jsonl(std::slice::from_ref(&e)).trim_end(), 1).unwrap(), e);
    }
}

#[test]
fn argv_seeds() {
    for (p, b) in seeds("argv") {
        let argv: Vec<String> = text(&p, &b).split('\0').map(str::to_string).collect();
        let Ok(Parsed::Args(args)) = parse_args(&argv) else { panic!("{} rejected", p.display()) };
        args.decode_config(false).unwrap();
    }
}
