//! Pipeline orchestration, synthetic data, metrics and file formats.

pub mod associate;
pub mod bench;
pub mod dataset;
pub mod formats;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod synth;

use crate::error::Result;

use perturb::{perturb_segmentation, PerturbationSpec};
use pipeline::{run_pipeline, FrameInput, PipelineConfig, RunOutput};
use synth::SyntheticDataset;

/// Inputs for frame `index` of a synthetic dataset: ground-truth RGB, depth
/// and pose with a perturbed segmentation.
pub fn synthetic_frame(data: &SyntheticDataset, perturbation: &PerturbationSpec, index: usize) -> Result<FrameInput> {
    let gt = &data.frames[index];
    Ok(FrameInput {
        rgb: gt.rgb.clone(),
        depth: gt.depth.clone(),
        pose: gt.pose,
        segmentation: perturb_segmentation(&gt.labels, perturbation, index)?,
        detections: gt.detections.clone(),
    })
}

/// Runs the pipeline over a synthetic dataset, scoring against its ground truth.
pub fn run_synthetic(config: &PipelineConfig, data: &SyntheticDataset, perturbation: &PerturbationSpec) -> Result<RunOutput> {
    let frames = (0..data.frames.len())
        .map(|i| synthetic_frame(data, perturbation, i).map(|f| (f, Some(data.frames[i].labels.clone()))));
    run_pipeline(config, &data.intrinsics, frames)
}
