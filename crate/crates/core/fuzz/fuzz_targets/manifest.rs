#![no_main]

use libfuzzer_sys::fuzz_target;
use widecorrect::synth::dataset::decode_manifest;

fuzz_target!(|data: &[u8]| {
    let _ = decode_manifest(data);
});
