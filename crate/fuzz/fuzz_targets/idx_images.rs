#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_split::data::parse_idx_images;

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = parse_idx_images(data) {
        // Claimed dimensions must be backed by actual pixel bytes.
        assert_eq!(images.pixels.len(), images.count * images.rows * images.cols);
    }
});
