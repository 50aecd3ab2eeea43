#![no_main]

use libfuzzer_sys::fuzz_target;
use widecorrect::io::png::decode_mask_png;

fuzz_target!(|data: &[u8]| {
    let _ = decode_mask_png(data);
});
