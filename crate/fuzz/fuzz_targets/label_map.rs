#![no_main]

use libfuzzer_sys::fuzz_target;
use semsplat::harness::formats::{decode_label_map, encode_label_map};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_label_map(data) {
        assert_eq!(encode_label_map(&map), data);
    }
});
