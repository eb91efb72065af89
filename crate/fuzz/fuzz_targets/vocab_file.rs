#![no_main]

use libfuzzer_sys::fuzz_target;
use octopus_core::tokenizer::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(vocab) = Vocabulary::from_file_str(text) {
        let again = Vocabulary::from_file_str(&vocab.to_file_string()).expect("re-parse of written vocabulary");
        assert_eq!(vocab, again);
        let ids = vocab.encode(text);
        assert!(ids.iter().all(|&i| (i as usize) < vocab.size()));
    }
});
