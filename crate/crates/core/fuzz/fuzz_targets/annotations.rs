#![no_main]

use libfuzzer_sys::fuzz_target;
use widecorrect::synth::dataset::{decode_annotations, encode_annotations};

fuzz_target!(|data: &[u8]| {
    if let Ok(anno) = decode_annotations(data) {
        let again = decode_annotations(&encode_annotations(&anno)).expect("re-encoded annotations decode");
        assert_eq!(anno, again);
    }
});
