#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_split::topology::{parse_topologies, serialize_topologies};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(junctions) = parse_topologies(text) {
        // Anything accepted passed full validation and must round-trip.
        let text = serialize_topologies(&junctions);
        let again = parse_topologies(&text).expect("serialized topology must parse");
        assert_eq!(junctions, again);
    }
});
