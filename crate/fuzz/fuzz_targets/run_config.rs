#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_split::experiments::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        // Accepted configs always describe a buildable topology.
        cfg.neuronal().expect("accepted config must yield a valid topology");
    }
});
