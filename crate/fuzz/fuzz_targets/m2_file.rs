#![no_main]

use libfuzzer_sys::fuzz_target;
use octopus_core::metrics::{parse_m2, write_m2};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sentences) = parse_m2(text) {
        let again = parse_m2(&write_m2(&sentences)).expect("re-parse of written M2");
        assert_eq!(sentences.len(), again.len());
        for s in &sentences {
            let words = s.source.split_whitespace().collect::<Vec<_>>();
            let _ = s.edits.apply(&words);
        }
    }
});
