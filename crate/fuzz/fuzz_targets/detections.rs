#![no_main]

use libfuzzer_sys::fuzz_target;
use semsplat::harness::formats::{format_detections, parse_detections};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(dets) = parse_detections(text) {
        assert_eq!(parse_detections(&format_detections(&dets)).unwrap().len(), dets.len());
    }
});
