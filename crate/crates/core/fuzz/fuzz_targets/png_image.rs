#![no_main]

use libfuzzer_sys::fuzz_target;
use widecorrect::io::png::decode_image_png;

fuzz_target!(|data: &[u8]| {
    let _ = decode_image_png(data);
});
