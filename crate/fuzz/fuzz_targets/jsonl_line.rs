#![no_main]

use libfuzzer_sys::fuzz_target;
use octopus_core::tasks::{parse_jsonl_line, to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(example) = parse_jsonl_line(line, 1) {
        let written = to_jsonl(std::slice::from_ref(&example));
        let again = parse_jsonl_line(written.trim_end(), 1).expect("re-parse of written example");
        assert_eq!(example, again);
    }
});
