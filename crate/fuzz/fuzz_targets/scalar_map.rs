#![no_main]

use libfuzzer_sys::fuzz_target;
use semsplat::harness::formats::{decode_scalar_map, encode_scalar_map, CONFIDENCE_MAGIC, DEPTH_MAGIC};

fuzz_target!(|data: &[u8]| {
    for magic in [CONFIDENCE_MAGIC, DEPTH_MAGIC] {
        if let Ok(map) = decode_scalar_map(magic, data) {
            let again = decode_scalar_map(magic, &encode_scalar_map(magic, &map)).unwrap();
            assert_eq!(again.dims(), map.dims());
        }
    }
});
