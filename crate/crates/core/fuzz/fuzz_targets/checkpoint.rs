#![no_main]

use libfuzzer_sys::fuzz_target;
use widecorrect::msunet::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&ckpt);
        let again = decode_checkpoint(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again.checksum(), ckpt.checksum());
    }
});
