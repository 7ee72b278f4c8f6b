#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Any byte stream must either parse into a valid dataset or return a
    // structured error; panics and invalid matrices are bugs.
    if let Ok(dataset) = balans::io::parse_dataset(data, "batch", Some("label")) {
        assert!(dataset.profiles.n() > 0);
        assert!(dataset.profiles.d() > 0);
        assert_eq!(dataset.batches.len(), dataset.profiles.n());
        assert!(dataset.profiles.data().iter().all(|v| v.is_finite()));
    }
    let _ = balans::io::parse_dataset(data, "batch", None);
});
