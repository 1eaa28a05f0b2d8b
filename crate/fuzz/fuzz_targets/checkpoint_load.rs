#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_split::mlp::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    // Strict decoder: every length validated before allocation, edge lists
    // re-validated against claimed degrees, non-finite parameters rejected.
    if let Ok(ckpt) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&ckpt);
        let again = decode_checkpoint(&bytes).expect("re-encoded checkpoint must decode");
        assert_eq!(ckpt, again);
    }
});
