//! Binary and text file formats. All multi-byte values are little-endian.
//!
//! Decoders take byte or string slices and reject truncated, oversized or
//! malformed input with [`Error::Format`]; they never panic.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::camera::Pose;
use crate::error::{Error, Result};
use crate::raster::{LabelMap, Raster, RgbImage, ScalarImage};
use crate::scene::{ClassEntry, GaussianScene, Label, LabelClassTable, LabeledGaussian};

pub const SCENE_MAGIC: &[u8; 4] = b"OGS1";
pub const LABEL_MAP_MAGIC: &[u8; 4] = b"OGLM";
pub const CONFIDENCE_MAGIC: &[u8; 4] = b"OGCM";
pub const DEPTH_MAGIC: &[u8; 4] = b"OGDM";

/// Bytes per Gaussian record in a scene file.
pub const GAUSSIAN_RECORD_BYTES: usize = 60;

/// Trajectory coordinates beyond this magnitude are rejected.
pub const MAX_COORDINATE: f64 = 1e9;

struct Reader<'a> {
    format: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(format: &'static str, buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(Error::format(format, "bad magic"));
        }
        Ok(Self { format, buf, pos: 4 })
    }

    fn take4(&mut self) -> Result<[u8; 4]> {
        let end = self.pos + 4;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::format(self.format, format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length 4"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take4().map(u32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f64> {
        self.take4().map(|b| f32::from_le_bytes(b) as f64)
    }

    fn vec3(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f32()?, self.f32()?, self.f32()?))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Checks that exactly `count` records of `size` bytes follow.
    fn expect_records(&self, count: usize, size: usize) -> Result<()> {
        let need = count
            .checked_mul(size)
            .ok_or_else(|| Error::format(self.format, "record count overflows"))?;
        if need != self.remaining() {
            return Err(Error::format(
                self.format,
                format!("expected {need} payload bytes, found {}", self.remaining()),
            ));
        }
        Ok(())
    }
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn encode_scene(gaussians: &[LabeledGaussian]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + gaussians.len() * GAUSSIAN_RECORD_BYTES);
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&(gaussians.len() as u32).to_le_bytes());
    for g in gaussians {
        for v in g.position.iter().chain(g.scale.iter()) {
            put_f32(&mut out, *v);
        }
        for v in [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k, g.opacity] {
            put_f32(&mut out, v);
        }
        for v in g.color.iter() {
            put_f32(&mut out, *v);
        }
        out.extend_from_slice(&g.label.to_le_bytes());
    }
    out
}

/// Parses Gaussian records without semantic validation.
pub fn decode_gaussians(bytes: &[u8]) -> Result<Vec<LabeledGaussian>> {
    let mut r = Reader::new("OGS1 scene", bytes, SCENE_MAGIC)?;
    let count = r.u32()? as usize;
    r.expect_records(count, GAUSSIAN_RECORD_BYTES)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let position = r.vec3()?;
        let scale = r.vec3()?;
        let (w, x, y, z) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?);
        let opacity = r.f32()?;
        let color = r.vec3()?;
        let label = r.u32()?;
        out.push(LabeledGaussian {
            position,
            scale,
            rotation: Quaternion::new(w, x, y, z),
            opacity,
            color,
            label,
        });
    }
    Ok(out)
}

/// Parses and validates a scene; labels found in the file are registered.
pub fn decode_scene(bytes: &[u8], max_labels: u32) -> Result<GaussianScene> {
    let mut gaussians = decode_gaussians(bytes)?;
    // rotations are stored unnormalized; f32 storage perturbs unit ones anyway
    for g in &mut gaussians {
        let n = g.rotation.norm();
        if n.is_finite() && n > 0.0 {
            g.rotation /= n;
        }
    }
    GaussianScene::from_gaussians(gaussians, max_labels)
}

fn encode_header(magic: &[u8; 4], width: usize, height: usize, cap: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + cap);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out
}

pub fn encode_label_map(map: &LabelMap) -> Vec<u8> {
    let mut out = encode_header(LABEL_MAP_MAGIC, map.width(), map.height(), map.len() * 4);
    for l in map.as_slice() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_label_map(bytes: &[u8]) -> Result<LabelMap> {
    let mut r = Reader::new("OGLM label map", bytes, LABEL_MAP_MAGIC)?;
    let (w, h) = (r.u32()? as usize, r.u32()? as usize);
    let n = w.checked_mul(h).ok_or_else(|| Error::format("OGLM label map", "dimensions overflow"))?;
    r.expect_records(n, 4)?;
    let data = (0..n).map(|_| r.u32()).collect::<Result<Vec<Label>>>()?;
    Raster::from_vec(w, h, data)
}

/// Writes an OGCM confidence or OGDM depth map.
pub fn encode_scalar_map(magic: &[u8; 4], map: &ScalarImage) -> Vec<u8> {
    let mut out = encode_header(magic, map.width(), map.height(), map.len() * 4);
    for &v in map.as_slice() {
        put_f32(&mut out, v);
    }
    out
}

pub fn decode_scalar_map(magic: &[u8; 4], bytes: &[u8]) -> Result<ScalarImage> {
    let name = if magic == DEPTH_MAGIC { "OGDM depth map" } else { "OGCM scalar map" };
    let mut r = Reader::new(name, bytes, magic)?;
    let (w, h) = (r.u32()? as usize, r.u32()? as usize);
    let n = w.checked_mul(h).ok_or_else(|| Error::format(name, "dimensions overflow"))?;
    r.expect_records(n, 4)?;
    let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<f64>>>()?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(name, "non-finite value"));
    }
    Raster::from_vec(w, h, data)
}

/// Binary P6 with maxval 255. Channels are clamped to [0, 1] and rounded.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(img.len() * 3);
    for px in img.as_slice() {
        out.extend(px.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    const F: &str = "PPM";
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(F, "truncated header"));
        }
        fields.push(&bytes[start..pos]);
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() {
        return Err(Error::format(F, "missing raster"));
    }
    pos += 1;
    if fields[0] != b"P6" {
        return Err(Error::format(F, "only binary P6 is supported"));
    }
    let num = |b: &[u8]| -> Result<usize> {
        std::str::from_utf8(b)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(F, "bad header number"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(Error::format(F, format!("maxval {maxval} unsupported")));
    }
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::format(F, "dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() != n {
        return Err(Error::format(F, format!("expected {n} raster bytes, found {}", raster.len())));
    }
    let data = raster
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    Raster::from_vec(w, h, data)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64(format: &'static str, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::format(format, format!("line {line}: bad number {tok:?}")))
}

/// One camera-to-world pose per line, `tx ty tz qx qy qz qw`; returned as
/// world-to-camera poses.
pub fn parse_trajectory(text: &str) -> Result<Vec<Pose>> {
    const F: &str = "trajectory";
    let mut poses = Vec::new();
    for (n, line) in content_lines(text) {
        let v = line
            .split_whitespace()
            .map(|t| parse_f64(F, n, t))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != 7 {
            return Err(Error::format(F, format!("line {n}: expected 7 values, found {}", v.len())));
        }
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        let norm = q.norm();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::format(F, format!("line {n}: quaternion norm {norm} is not 1")));
        }
        if v[..3].iter().any(|c| c.abs() > MAX_COORDINATE) {
            return Err(Error::format(F, format!("line {n}: camera position out of range")));
        }
        let orientation = UnitQuaternion::from_quaternion(q);
        poses.push(Pose::from_camera_to_world(Vector3::new(v[0], v[1], v[2]), orientation));
    }
    Ok(poses)
}

pub fn format_trajectory(poses: &[Pose]) -> String {
    let mut s = String::new();
    for p in poses {
        let c = p.camera_center();
        let q = p.orientation();
        let _ = writeln!(s, "{} {} {} {} {} {} {}", c.x, c.y, c.z, q.i, q.j, q.k, q.w);
    }
    s
}

/// A 2D detection box `[x0, y0, x1, y1)` in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub class_name: String,
    pub score: f64,
    pub bbox: [f64; 4],
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    const F: &str = "detections";
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 6 {
            return Err(Error::format(F, format!("line {n}: expected 6 fields, found {}", toks.len())));
        }
        let nums = toks[1..]
            .iter()
            .map(|t| parse_f64(F, n, t))
            .collect::<Result<Vec<_>>>()?;
        if nums[3] < nums[1] || nums[4] < nums[2] {
            return Err(Error::format(F, format!("line {n}: inverted box")));
        }
        out.push(Detection {
            class_name: toks[0].to_string(),
            score: nums[0],
            bbox: [nums[1], nums[2], nums[3], nums[4]],
        });
    }
    Ok(out)
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let [x0, y0, x1, y1] = d.bbox;
        let _ = writeln!(s, "{} {} {x0} {y0} {x1} {y1}", d.class_name, d.score);
    }
    s
}

pub fn parse_class_table(text: &str) -> Result<LabelClassTable> {
    const F: &str = "label-class table";
    let mut table = LabelClassTable::new();
    for (n, line) in content_lines(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::format(F, format!("line {n}: expected 3 fields, found {}", toks.len())));
        }
        let label: Label = toks[0]
            .parse()
            .map_err(|_| Error::format(F, format!("line {n}: bad label {:?}", toks[0])))?;
        let score = parse_f64(F, n, toks[2])?;
        table.insert(label, ClassEntry::new(toks[1], score));
    }
    Ok(table)
}

pub fn format_class_table(table: &LabelClassTable) -> String {
    let mut s = String::new();
    for (l, e) in &table.entries {
        let _ = writeln!(s, "{l} {} {}", e.class_name, e.score);
    }
    s
}

pub fn read_scene(path: &Path, max_labels: u32) -> Result<GaussianScene> {
    decode_scene(&std::fs::read(path)?, max_labels)
}

pub fn write_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    Ok(std::fs::write(path, encode_scene(scene.gaussians()))?)
}
