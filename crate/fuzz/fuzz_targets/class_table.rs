#![no_main]

use libfuzzer_sys::fuzz_target;
use semsplat::harness::formats::{format_class_table, parse_class_table};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = parse_class_table(text) {
        assert_eq!(parse_class_table(&format_class_table(&table)).unwrap().len(), table.len());
    }
});
