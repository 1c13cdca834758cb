#![no_main]

use libfuzzer_sys::fuzz_target;
use semsplat::harness::formats::{decode_gaussians, decode_scene, encode_scene};

fuzz_target!(|data: &[u8]| {
    if let Ok(gaussians) = decode_gaussians(data) {
        let again = encode_scene(&gaussians);
        assert_eq!(decode_gaussians(&again).unwrap().len(), gaussians.len());
    }
    if let Ok(scene) = decode_scene(data, 64) {
        scene.check_consistency().unwrap();
    }
});
