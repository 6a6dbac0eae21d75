#![no_main]

use libfuzzer_sys::fuzz_target;
use planescale::io::decode_image_rgb;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_image_rgb(data) {
        assert_eq!(img.pixels.len(), img.width * img.height);
    }
});
