#![no_main]

use libfuzzer_sys::fuzz_target;
use widecorrect::io::flo::{decode_flo, encode_flo};

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = decode_flo(data) {
        let again = decode_flo(&encode_flo(&flow)).expect("re-encoded flow decodes");
        assert_eq!(flow, again);
    }
});
