//! The fuzz corpus seeds double as decoder fixtures.

use std::path::PathBuf;

use semsplat::harness::formats::{
    decode_label_map, decode_ppm, decode_scalar_map, decode_scene, parse_class_table, parse_detections,
    parse_trajectory, CONFIDENCE_MAGIC, DEPTH_MAGIC,
};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn scene_seeds() {
    for (name, bytes) in seeds("scene") {
        let r = decode_scene(&bytes, 64);
        assert_eq!(r.is_ok(), !name.starts_with("bad"), "{name}: {r:?}");
    }
}

#[test]
fn raster_seeds() {
    for (name, bytes) in seeds("label_map") {
        decode_label_map(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, bytes) in seeds("scalar_map") {
        let magic = if name.starts_with("depth") { DEPTH_MAGIC } else { CONFIDENCE_MAGIC };
        decode_scalar_map(magic, &bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, bytes) in seeds("ppm") {
        decode_ppm(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn text_seeds() {
    for (name, bytes) in seeds("trajectory") {
        assert!(!parse_trajectory(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}")).is_empty());
    }
    for (name, bytes) in seeds("detections") {
        assert!(!parse_detections(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}")).is_empty());
    }
    for (name, bytes) in seeds("class_table") {
        assert!(!parse_class_table(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}")).is_empty());
    }
}
