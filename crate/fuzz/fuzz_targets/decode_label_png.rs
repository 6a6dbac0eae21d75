#![no_main]

use libfuzzer_sys::fuzz_target;
use planescale::io::decode_label_png;

fuzz_target!(|data: &[u8]| {
    if let Ok((w, h, labels)) = decode_label_png(data) {
        assert_eq!(labels.len(), w * h);
    }
});
