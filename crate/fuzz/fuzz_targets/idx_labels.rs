#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_split::data::parse_idx_labels;

fuzz_target!(|data: &[u8]| {
    let _ = parse_idx_labels(data);
});
