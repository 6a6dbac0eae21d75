#![no_main]

use libfuzzer_sys::fuzz_target;
use planescale::io::{decode_flo, encode_flo};

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = decode_flo(data, 1 << 20) {
        // whatever decodes must re-encode to a file that decodes the same
        let again = decode_flo(&encode_flo(&flow), 1 << 20).expect("re-encoded flow decodes");
        assert_eq!(again.width, flow.width);
        assert_eq!(again.height, flow.height);
    }
});
