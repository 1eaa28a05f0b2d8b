#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_split::pipeline::{decode_frame, encode_frame};

fuzz_target!(|data: &[u8]| {
    // Decoding is total: any input yields a frame or a structured error.
    if let Ok(frame) = decode_frame(data) {
        // Accepted frames survive a re-encode/re-decode round trip.
        let bytes = encode_frame(&frame);
        let again = decode_frame(&bytes).expect("re-encoded frame must decode");
        assert_eq!(frame, again);
    }
});
