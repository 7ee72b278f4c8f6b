#![no_main]
use libfuzzer_sys::fuzz_target;

use balans::io::{decode_bala1, encode_bala1};

fuzz_target!(|data: &[u8]| {
    // Decoding must never panic, and anything that decodes successfully
    // must survive an encode/decode round trip unchanged.
    if let Ok((indices, rows, n)) = decode_bala1(data) {
        let bytes = encode_bala1(&indices, &rows, n);
        let (i2, r2, n2) = decode_bala1(&bytes).expect("re-encoded buffer must decode");
        assert_eq!(indices, i2);
        assert_eq!(rows, r2);
        assert_eq!(n, n2);
    }
});
