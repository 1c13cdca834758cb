#![no_main]

use libfuzzer_sys::fuzz_target;
use semsplat::harness::formats::{format_trajectory, parse_trajectory};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(poses) = parse_trajectory(text) {
        assert_eq!(parse_trajectory(&format_trajectory(&poses)).unwrap().len(), poses.len());
    }
});
