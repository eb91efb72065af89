#![no_main]

use libfuzzer_sys::fuzz_target;
use octopus_core::model::checkpoint;

// Compared as bytes, since NaN payloads make the arrays unequal to themselves.
fuzz_target!(|data: &[u8]| {
    if let Ok(arrays) = checkpoint::decode(data) {
        let bytes = checkpoint::encode(&arrays).expect("decoded arrays re-encode");
        let again = checkpoint::decode(&bytes).expect("round trip");
        assert_eq!(checkpoint::encode(&again).unwrap(), bytes);
    }
});
