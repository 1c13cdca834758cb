use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::render::{render_rgbd, RenderConfig};
use crate::scene::GaussianScene;
use crate::voting::render_label_map;

/// Median wall-clock times of the two render paths on one view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderTiming {
    pub rgb_ms: f64,
    pub rgb_label_ms: f64,
    /// `rgb_label_ms / rgb_ms`.
    pub ratio: f64,
    pub repetitions: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Times RGB-only against RGB+label rendering, interleaved so that both see
/// the same machine state. One warm-up pass of each is discarded.
pub fn bench_render(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
    top_k: usize,
    repetitions: usize,
) -> Result<RenderTiming> {
    if repetitions == 0 {
        return Err(Error::Config("benchmark needs at least one repetition".into()));
    }
    render_rgbd(scene, pose, intrinsics, config)?;
    render_label_map(scene, pose, intrinsics, config, top_k)?;
    let mut rgb = Vec::with_capacity(repetitions);
    let mut label = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        std::hint::black_box(render_rgbd(scene, pose, intrinsics, config)?);
        rgb.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        std::hint::black_box(render_label_map(scene, pose, intrinsics, config, top_k)?);
        label.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let (rgb_ms, rgb_label_ms) = (median(rgb), median(label));
    Ok(RenderTiming {
        rgb_ms,
        rgb_label_ms,
        ratio: rgb_label_ms / rgb_ms.max(f64::MIN_POSITIVE),
        repetitions,
    })
}
