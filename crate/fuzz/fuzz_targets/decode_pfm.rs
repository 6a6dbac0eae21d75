#![no_main]

use libfuzzer_sys::fuzz_target;
use planescale::io::{decode_pfm, encode_pfm};

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = decode_pfm(data) {
        let again = decode_pfm(&encode_pfm(&d)).expect("re-encoded map decodes");
        assert_eq!(again.valid, d.valid);
    }
});
