#![no_main]

use libfuzzer_sys::fuzz_target;
use octopus_cli::parse_args;

// Arguments are NUL-separated.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let argv: Vec<String> = text.split('\0').map(str::to_string).collect();
    if let Ok(octopus_cli::Parsed::Args(args)) = parse_args(&argv) {
        let _ = args.decode_config(false);
        let _ = args.decode_config(true);
        let _ = args.batch_task();
    }
});
