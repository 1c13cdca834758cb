//! On-disk frame sequences.
//!
//! A dataset directory holds `dataset.json` (intrinsics and frame count),
//! `trajectory.txt`, and per frame `NNNN.rgb.ppm`, `NNNN.depth.ogdm`,
//! `NNNN.seg.oglm`, `NNNN.conf.ogcm` and `NNNN.det.txt`. Ground-truth maps
//! `NNNN.gt.oglm` are optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::consensus::InputSegmentation;
use crate::error::{Error, Result};
use crate::raster::{LabelMap, ScalarImage};
use crate::scene::{LabelClassTable, BACKGROUND};

use super::formats::{
    decode_label_map, decode_ppm, decode_scalar_map, encode_label_map, encode_ppm, encode_scalar_map,
    format_detections, format_trajectory, parse_detections, parse_trajectory, CONFIDENCE_MAGIC, DEPTH_MAGIC,
};
use super::perturb::PerturbationSpec;
use super::pipeline::FrameInput;
use super::synth::SyntheticDataset;
use super::synthetic_frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

impl DatasetManifest {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

fn frame_path(dir: &Path, index: usize, suffix: &str) -> PathBuf {
    dir.join(format!("{index:04}.{suffix}"))
}

/// Per-pixel expansion of the segment confidences, as stored in OGCM files.
pub fn confidence_image(seg: &InputSegmentation) -> ScalarImage {
    seg.confidence_map()
}

/// Recovers per-label confidences from a label map and its confidence image
/// (mean over each label's pixels).
pub fn segmentation_from_maps(labels: LabelMap, confidence: &ScalarImage) -> Result<InputSegmentation> {
    labels.ensure_same_dims(confidence)?;
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&l, &c) in labels.as_slice().iter().zip(confidence.as_slice()) {
        if l != BACKGROUND {
            let e = sums.entry(l).or_default();
            e.0 += c;
            e.1 += 1;
        }
    }
    let conf = sums
        .into_iter()
        .map(|(l, (s, n))| (l, (s / n as f64).clamp(0.0, 1.0)))
        .collect();
    InputSegmentation::new(labels, conf, LabelClassTable::new())
}

pub fn write_synthetic_dataset(dir: &Path, data: &SyntheticDataset, perturbation: &PerturbationSpec) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let k = &data.intrinsics;
    let manifest = DatasetManifest {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width,
        height: k.height,
        frames: data.frames.len(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("dataset.json"), json)?;
    std::fs::write(dir.join("trajectory.txt"), format_trajectory(&data.poses()))?;
    for (i, gt) in data.frames.iter().enumerate() {
        let input = synthetic_frame(data, perturbation, i)?;
        std::fs::write(frame_path(dir, i, "rgb.ppm"), encode_ppm(&input.rgb))?;
        std::fs::write(frame_path(dir, i, "depth.ogdm"), encode_scalar_map(DEPTH_MAGIC, &input.depth))?;
        std::fs::write(frame_path(dir, i, "seg.oglm"), encode_label_map(&input.segmentation.label_map))?;
        std::fs::write(
            frame_path(dir, i, "conf.ogcm"),
            encode_scalar_map(CONFIDENCE_MAGIC, &confidence_image(&input.segmentation)),
        )?;
        std::fs::write(frame_path(dir, i, "det.txt"), format_detections(&input.detections))?;
        std::fs::write(frame_path(dir, i, "gt.oglm"), encode_label_map(&gt.labels))?;
    }
    Ok(())
}

pub struct DatasetReader {
    dir: PathBuf,
    pub manifest: DatasetManifest,
    poses: Vec<crate::camera::Pose>,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("dataset.json"))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format("dataset manifest", e.to_string()))?;
        let poses = parse_trajectory(&std::fs::read_to_string(dir.join("trajectory.txt"))?)?;
        if poses.len() < manifest.frames {
            return Err(Error::format(
                "dataset manifest",
                format!("{} frames declared but {} poses found", manifest.frames, poses.len()),
            ));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            poses,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames == 0
    }

    pub fn frame(&self, index: usize) -> Result<(FrameInput, Option<LabelMap>)> {
        let read = |suffix: &str| std::fs::read(frame_path(&self.dir, index, suffix));
        let labels = decode_label_map(&read("seg.oglm")?)?;
        let conf = decode_scalar_map(CONFIDENCE_MAGIC, &read("conf.ogcm")?)?;
        let detections = match std::fs::read_to_string(frame_path(&self.dir, index, "det.txt")) {
            Ok(text) => parse_detections(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let gt = match read("gt.oglm") {
            Ok(bytes) => Some(decode_label_map(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let input = FrameInput {
            rgb: decode_ppm(&read("rgb.ppm")?)?,
            depth: decode_scalar_map(DEPTH_MAGIC, &read("depth.ogdm")?)?,
            pose: self.poses[index],
            segmentation: segmentation_from_maps(labels, &conf)?,
            detections,
        };
        Ok((input, gt))
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<(FrameInput, Option<LabelMap>)>> + '_ {
        (0..self.len()).map(|i| self.frame(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_synthetic, CameraSpec, SyntheticSceneSpec};

    #[test]
    fn written_dataset_reads_back() {
        let mut spec = SyntheticSceneSpec::tabletop(3, 3, 2);
        spec.camera = CameraSpec {
            focal: 70.0,
            width: 80,
            height: 60,
        };
        spec.gaussians_per_object = 100;
        let data = generate_synthetic(&spec, 4).unwrap();
        let perturb = PerturbationSpec {
            permute_labels: true,
            seed: 9,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_dataset(dir.path(), &data, &perturb).unwrap();

        let reader = DatasetReader::open(dir.path()).unwrap();
        assert_eq!(reader.len(), 3);
        assert_eq!(reader.manifest.intrinsics().unwrap(), data.intrinsics);
        for (i, frame) in reader.frames().enumerate() {
            let (input, gt) = frame.unwrap();
            let expected = synthetic_frame(&data, &perturb, i).unwrap();
            assert_eq!(gt.as_ref(), Some(&data.frames[i].labels));
            assert_eq!(input.segmentation.label_map, expected.segmentation.label_map);
            for (l, c) in &expected.segmentation.confidences {
                assert!((input.segmentation.confidence(*l) - c).abs() < 1e-6);
            }
            assert!((input.pose.camera_center() - expected.pose.camera_center()).norm() < 1e-5);
        }
    }

    #[test]
    fn confidences_average_over_label_pixels() {
        let labels = LabelMap::from_fn(4, 1, |x, _| [0, 2, 2, 5][x]);
        let conf = ScalarImage::from_fn(4, 1, |x, _| [0.9, 0.5, 0.7, 1.0][x]);
        let seg = segmentation_from_maps(labels, &conf).unwrap();
        assert!((seg.confidence(2) - 0.6).abs() < 1e-12);
        assert_eq!(seg.confidence(5), 1.0);
        assert!(segmentation_from_maps(LabelMap::filled(2, 2, 1), &ScalarImage::filled(3, 2, 0.5)).is_err());
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(DatasetReader::open(dir.path()).is_err());
    }
}
