#![no_main]

use libfuzzer_sys::fuzz_target;
use planescale::synth::parse_scene_spec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_scene_spec(text);
});
