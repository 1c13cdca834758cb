//! The per-frame mapping loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Pose};
use crate::consensus::{
    apply_part_decay, background_claims, classify_matches, merge_tables, overlap_stats, resolve_consensus, update_input_confidence,
    ConsensusOutcome, ConsensusParams, InputSegmentation, MatchKind,
};
use crate::error::{Error, Result};
use crate::pruning::{counter_prune_pairs, symmetric_difference_pixels};
use crate::raster::{LabelMap, RgbImage, ScalarImage};
use crate::render::{FrameRender, RenderConfig};
use crate::scene::{GaussianScene, Label, LabeledGaussian, BACKGROUND, DEFAULT_MAX_LABELS};
use crate::voting::{
    compute_completeness, coverage_ratio_map, relabel_via_topk, render_label_map, LabelRender, DEFAULT_TOP_K,
    MIN_LABEL_COVERAGE,
};

use super::associate::associate_detections;
use super::bench::RenderTiming;
use super::formats::Detection;
use super::metrics::compute_miou_acc;

pub const DEFAULT_KEYFRAME_EVERY: usize = 5;
pub const DEFAULT_DENSIFY_STRIDE: usize = 4;
pub const DEFAULT_DEPTH_THRESH: f64 = 0.05;
pub const DENSIFY_OPACITY: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub delta: f64,
    /// Counter-pruning scale threshold, world units.
    pub theta: f64,
    pub top_k: usize,
    pub keyframe_every: usize,
    pub max_labels: u32,
    pub seed: u64,
    pub densify_stride: usize,
    pub depth_thresh: f64,
    /// Scale input confidences by rendered-label completeness.
    pub confidence_update: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let c = ConsensusParams::default();
        Self {
            tau1: c.tau1,
            tau2: c.tau2,
            tau3: c.tau3,
            delta: c.delta,
            theta: 0.10,
            top_k: DEFAULT_TOP_K,
            keyframe_every: DEFAULT_KEYFRAME_EVERY,
            max_labels: DEFAULT_MAX_LABELS,
            seed: 0,
            densify_stride: DEFAULT_DENSIFY_STRIDE,
            depth_thresh: DEFAULT_DEPTH_THRESH,
            confidence_update: true,
        }
    }
}

impl PipelineConfig {
    pub fn consensus(&self) -> ConsensusParams {
        ConsensusParams {
            tau1: self.tau1,
            tau2: self.tau2,
            tau3: self.tau3,
            delta: self.delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.consensus().validate()?;
        if !(self.theta > 0.0) {
            return Err(Error::Config(format!("theta {} must be positive", self.theta)));
        }
        if self.top_k == 0 || self.keyframe_every == 0 || self.densify_stride == 0 {
            return Err(Error::Config("topk, keyframe interval and densify stride must be positive".into()));
        }
        if !(self.depth_thresh >= 0.0) {
            return Err(Error::Config("depth threshold must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    pub rgb: RgbImage,
    /// World units; 0 marks invalid pixels.
    pub depth: ScalarImage,
    /// World-to-camera.
    pub pose: Pose,
    pub segmentation: InputSegmentation,
    pub detections: Vec<Detection>,
}

impl FrameInput {
    pub fn validate(&self, intrinsics: &CameraIntrinsics) -> Result<()> {
        let dims = (intrinsics.width, intrinsics.height);
        for actual in [self.rgb.dims(), self.depth.dims(), self.segmentation.label_map.dims()] {
            if actual != dims {
                return Err(Error::DimensionMismatch { expected: dims, actual });
            }
        }
        self.segmentation.validate()
    }
}

/// Adds Gaussians where the input depth is valid and the map is missing or
/// disagrees with it. Returns the number added.
pub fn densify_keyframe(
    scene: &mut GaussianScene,
    frame: &FrameInput,
    rendered: &FrameRender,
    consistent_map: &LabelMap,
    intrinsics: &CameraIntrinsics,
    stride: usize,
    depth_thresh: f64,
) -> Result<usize> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    if rendered.width() != w || rendered.height() != h || consistent_map.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: consistent_map.dims(),
        });
    }
    let mut batch = Vec::new();
    for y in (0..h).step_by(stride.max(1)) {
        for x in (0..w).step_by(stride.max(1)) {
            let p = y * w + x;
            let d = frame.depth.as_slice()[p];
            if !(d > 0.0 && d.is_finite()) {
                continue;
            }
            if let Some(rd) = rendered.surface_depth(p, MIN_LABEL_COVERAGE) {
                if (rd - d).abs() <= depth_thresh {
                    continue;
                }
            }
            let world = frame.pose.camera_to_world(&intrinsics.back_project(x as f64, y as f64, d));
            let [r, g, b] = frame.rgb.as_slice()[p];
            batch.push(LabeledGaussian::isotropic(
                world,
                stride as f64 * d / intrinsics.fx * 0.5,
                DENSIFY_OPACITY,
                nalgebra::Vector3::new(r, g, b).map(|c| c.clamp(0.0, 1.0)),
                consistent_map.as_slice()[p],
            ));
        }
    }
    let n = batch.len();
    scene.add_gaussians(batch)?;
    Ok(n)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub full: usize,
    pub part: usize,
    pub whole: usize,
    pub new: usize,
    pub background: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub matches: MatchCounts,
    pub relabeled: usize,
    pub new_labels: usize,
    pub decayed_labels: usize,
    pub pruned: usize,
    /// Smallest largest-axis scale among this frame's pruned Gaussians.
    pub min_pruned_scale: Option<f64>,
    pub added: usize,
    pub gaussians: usize,
    pub label_count: usize,
    /// Against ground truth, for the map rendered at the start of the frame.
    pub miou: Option<f64>,
    pub acc: Option<f64>,
    /// Against ground truth, for this frame's consistent input label map.
    pub consistent_miou: Option<f64>,
    /// Part labels carved out of a rendered label that ground truth says was
    /// already a single correct object.
    pub incorrect_overwrites: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub frames: Vec<FrameReport>,
    pub mean_miou: Option<f64>,
    pub mean_acc: Option<f64>,
    /// Rendered again at the last pose after the last frame.
    pub final_miou: Option<f64>,
    pub final_acc: Option<f64>,
    pub label_counts: Vec<usize>,
    pub prune_counts: Vec<usize>,
    pub final_label_count: usize,
    pub total_pruned: usize,
    pub incorrect_overwrites: usize,
    /// Wall-clock timings vary between runs and are kept out of the
    /// serialized metrics.
    #[serde(skip)]
    pub timing: Option<RenderTiming>,
}

/// Holds the evolving map and runs one frame at a time.
pub struct Mapper {
    scene: GaussianScene,
    config: PipelineConfig,
    intrinsics: CameraIntrinsics,
    render: RenderConfig,
    frame: usize,
}

fn phase<T>(frame: usize, name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Pipeline {
        frame,
        phase: name,
        source: Box::new(e),
    })
}

fn majority(labels: impl Iterator<Item = Label>) -> Option<Label> {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
}

/// Carves whose part and remaining whole fall on the same ground-truth object.
fn count_incorrect_overwrites(
    outcome: &ConsensusOutcome,
    input: &LabelMap,
    rendered: &LabelMap,
    gt: &LabelMap,
) -> usize {
    let gt = gt.as_slice();
    outcome
        .carves
        .iter()
        .filter(|c| {
            let part = majority(input.support(c.input).into_iter().map(|p| gt[p]));
            let rest: Vec<usize> = rendered
                .support(c.from)
                .into_iter()
                .filter(|&p| input.as_slice()[p] != c.input)
                .collect();
            let whole = if rest.is_empty() {
                majority(rendered.support(c.from).into_iter().map(|p| gt[p]))
            } else {
                majority(rest.into_iter().map(|p| gt[p]))
            };
            part.is_some() && part == whole && part != Some(BACKGROUND)
        })
        .count()
}

impl Mapper {
    pub fn new(config: PipelineConfig, intrinsics: CameraIntrinsics) -> Result<Self> {
        config.validate()?;
        intrinsics.validate()?;
        Ok(Self {
            scene: GaussianScene::new(config.max_labels),
            config,
            intrinsics,
            render: RenderConfig::default(),
            frame: 0,
        })
    }

    pub fn with_scene(mut self, scene: GaussianScene) -> Self {
        self.scene = scene;
        self
    }

    pub fn scene(&self) -> &GaussianScene {
        &self.scene
    }

    pub fn scene_mut(&mut self) -> &mut GaussianScene {
        &mut self.scene
    }

    pub fn into_scene(self) -> GaussianScene {
        self.scene
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn frames_processed(&self) -> usize {
        self.frame
    }

    pub fn render_labels(&self, pose: &Pose) -> Result<LabelRender> {
        render_label_map(&self.scene, pose, &self.intrinsics, &self.render, self.config.top_k)
    }

    pub fn process(&mut self, input: &FrameInput, gt: Option<&LabelMap>) -> Result<FrameReport> {
        let f = self.frame;
        let cfg = self.config.clone();
        phase(f, "input", input.validate(&self.intrinsics))?;
        let lr = phase(f, "render", self.render_labels(&input.pose))?;

        let completeness = compute_completeness(&self.scene, &lr.visible);
        let cov = phase(f, "coverage", coverage_ratio_map(&lr.labels, &completeness))?;
        let mut seg = input.segmentation.clone();
        if !input.detections.is_empty() {
            seg.table = associate_detections(&seg.label_map, &input.detections);
        }
        if cfg.confidence_update {
            seg = phase(f, "confidence update", update_input_confidence(&seg, &cov))?;
        }

        let params = cfg.consensus();
        let stats = phase(f, "overlap", overlap_stats(&seg.label_map, &lr.labels))?;
        let cls = classify_matches(&stats, &params);
        let outcome = phase(
            f,
            "consensus",
            resolve_consensus(&seg, &lr.labels, self.scene.registry_mut(), &cls, &lr.topk),
        )?;
        let mut commands = outcome.relabel_commands.clone();
        commands.extend(phase(f, "relabel", background_claims(&lr.labels, &outcome.consistent_map))?);
        let relabel = phase(f, "relabel", relabel_via_topk(&mut self.scene, &lr.topk, &commands))?;

        let registry = self.scene.registry_mut();
        for (&l, &c) in &outcome.confidence_updates {
            if registry.confidence(l).is_some_and(|cur| c > cur) {
                phase(f, "confidence", registry.set_confidence(l, c))?;
            }
        }
        phase(f, "decay", apply_part_decay(registry, &outcome.decayed_labels, params.delta))?;
        phase(f, "decay", apply_part_decay(&mut seg.confidences, &outcome.decayed_inputs, params.delta))?;
        merge_tables(&mut self.scene.global_table, &seg.table, &outcome.mapping);

        let pairs: Vec<(Vec<usize>, Label)> = outcome
            .full_matches
            .iter()
            .map(|&(s, r)| (symmetric_difference_pixels(&seg.label_map.support(s), &lr.labels.support(r)), r))
            .collect();
        let pruned = phase(f, "prune", counter_prune_pairs(&mut self.scene, &pairs, &lr.topk, cfg.theta))?;

        let added = if f.is_multiple_of(cfg.keyframe_every) {
            phase(
                f,
                "densify",
                densify_keyframe(
                    &mut self.scene,
                    input,
                    &lr.frame,
                    &outcome.consistent_map,
                    &self.intrinsics,
                    cfg.densify_stride,
                    cfg.depth_thresh,
                ),
            )?
        } else {
            0
        };
        for l in self.scene.drop_empty_records() {
            self.scene.global_table.remove(l);
        }

        let mut matches = MatchCounts::default();
        for k in cls.by_input.values() {
            match k {
                MatchKind::FullMatch(_) => matches.full += 1,
                MatchKind::PartOf(_) => matches.part += 1,
                MatchKind::WholeOf(_) => matches.whole += 1,
                MatchKind::New => matches.new += 1,
                MatchKind::Background => matches.background += 1,
            }
        }
        let (miou, acc, consistent_miou, incorrect_overwrites) = match gt {
            Some(gt) => {
                let (m, a) = phase(f, "metrics", compute_miou_acc(&lr.labels, gt))?;
                let (c, _) = phase(f, "metrics", compute_miou_acc(&outcome.consistent_map, gt))?;
                let bad = count_incorrect_overwrites(&outcome, &seg.label_map, &lr.labels, gt);
                (Some(m), Some(a), Some(c), bad)
            }
            None => (None, None, None, 0),
        };
        self.frame += 1;
        Ok(FrameReport {
            frame: f,
            matches,
            relabeled: relabel.relabeled.len(),
            new_labels: outcome.new_labels.len(),
            decayed_labels: outcome.decayed_labels.len(),
            pruned: pruned.pruned.len(),
            min_pruned_scale: pruned.pruned_max_scale.values().copied().reduce(f64::min),
            added,
            gaussians: self.scene.len(),
            label_count: self.scene.label_count(),
            miou,
            acc,
            consistent_miou,
            incorrect_overwrites,
        })
    }
}

pub struct RunOutput {
    pub scene: GaussianScene,
    pub metrics: RunMetrics,
    /// Label map rendered at the last pose after the last frame.
    pub final_labels: Option<LabelMap>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Runs the loop over `frames`, each paired with an optional ground-truth map.
pub fn run_pipeline<I>(config: &PipelineConfig, intrinsics: &CameraIntrinsics, frames: I) -> Result<RunOutput>
where
    I: IntoIterator<Item = Result<(FrameInput, Option<LabelMap>)>>,
{
    let mut mapper = Mapper::new(config.clone(), *intrinsics)?;
    let mut reports = Vec::new();
    let mut last: Option<(Pose, Option<LabelMap>)> = None;
    for (i, item) in frames.into_iter().enumerate() {
        let (input, gt) = phase(i, "load", item)?;
        reports.push(mapper.process(&input, gt.as_ref())?);
        last = Some((input.pose, gt));
    }
    let (final_labels, final_miou, final_acc) = match &last {
        Some((pose, gt)) => {
            let lr = mapper.render_labels(pose)?;
            let (m, a) = match gt {
                Some(gt) => {
                    let (m, a) = compute_miou_acc(&lr.labels, gt)?;
                    (Some(m), Some(a))
                }
                None => (None, None),
            };
            (Some(lr.labels), m, a)
        }
        None => (None, None, None),
    };
    let metrics = RunMetrics {
        mean_miou: mean(reports.iter().filter_map(|r| r.miou)),
        mean_acc: mean(reports.iter().filter_map(|r| r.acc)),
        final_miou,
        final_acc,
        label_counts: reports.iter().map(|r| r.label_count).collect(),
        prune_counts: reports.iter().map(|r| r.pruned).collect(),
        final_label_count: mapper.scene().label_count(),
        total_pruned: reports.iter().map(|r| r.pruned).sum(),
        incorrect_overwrites: reports.iter().map(|r| r.incorrect_overwrites).sum(),
        frames: reports,
        timing: None,
    };
    Ok(RunOutput {
        scene: mapper.into_scene(),
        metrics,
        final_labels,
    })
}
