#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Config parsing rejects unknown fields and bad JSON with an error,
    // never a panic.
    let _ = balans::cli::parse_file_config(data);
});
