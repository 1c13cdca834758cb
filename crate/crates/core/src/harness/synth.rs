//! Synthetic tabletop scenes with ground-truth renders.
//!
//! Objects are boxes, spheres and flat patches covered by
//! flattened Gaussians sampled on their surfaces. Ground-truth label maps,
//! RGB and depth come from rendering that scene with label voting.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::raster::{LabelMap, RgbImage, ScalarImage};
use crate::render::RenderConfig;
use crate::scene::{GaussianScene, Label, LabeledGaussian, BACKGROUND, DEFAULT_MAX_LABELS};
use crate::voting::{render_label_map, DEFAULT_TOP_K};

use super::associate::label_bboxes;
use super::formats::Detection;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    Box { half_extents: [f64; 3] },
    Sphere { radius: f64 },
    /// Flat rectangle lying in the object's xy plane, facing +z.
    Patch { half_extents: [f64; 2] },
}

impl Primitive {
    fn area(&self) -> f64 {
        match self {
            Primitive::Box { half_extents: [a, b, c] } => 8.0 * (a * b + b * c + a * c),
            Primitive::Sphere { radius } => 4.0 * PI * radius * radius,
            Primitive::Patch { half_extents: [a, b] } => 4.0 * a * b,
        }
    }

    fn class_name(&self) -> &'static str {
        match self {
            Primitive::Box { .. } => "box",
            Primitive::Sphere { .. } => "sphere",
            Primitive::Patch { .. } => "panel",
        }
    }

    /// Point and outward normal in the object frame.
    fn sample(&self, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
        match *self {
            Primitive::Box { half_extents: h } => {
                let faces = [h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]];
                let mut pick = rng.random::<f64>() * faces.iter().sum::<f64>();
                let mut face = 5;
                for (i, a) in faces.iter().enumerate() {
                    if pick < *a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = Vector3::new(
                    rng.random_range(-h[0]..h[0]),
                    rng.random_range(-h[1]..h[1]),
                    rng.random_range(-h[2]..h[2]),
                );
                p[axis] = sign * h[axis];
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (p, n)
            }
            Primitive::Sphere { radius } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).sqrt();
                let n = Vector3::new(r * phi.cos(), r * phi.sin(), z);
                (n * radius, n)
            }
            Primitive::Patch { half_extents: [a, b] } => {
                let p = Vector3::new(rng.random_range(-a..a), rng.random_range(-b..b), 0.0);
                (p, Vector3::z())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub primitive: Primitive,
    pub center: [f64; 3],
    /// Rotation about world z, radians.
    pub yaw: f64,
    pub color: [f64; 3],
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrajectorySpec {
    /// Cameras on a circle around `center` at `radius` (measured from the
    /// center), raised by `elevation` radians, all looking at the center.
    /// Frame i sits at azimuth `start + arc·i/frames`.
    Orbit {
        center: [f64; 3],
        radius: f64,
        elevation: f64,
        start: f64,
        arc: f64,
        frames: usize,
    },
    Waypoints(Vec<Waypoint>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

impl TrajectorySpec {
    pub fn poses(&self) -> Result<Vec<Pose>> {
        let up = Vector3::z();
        match self {
            TrajectorySpec::Orbit {
                center,
                radius,
                elevation,
                start,
                arc,
                frames,
            } => {
                if *frames == 0 {
                    return Err(Error::Config("trajectory has zero frames".into()));
                }
                let c = Vector3::from(*center);
                (0..*frames)
                    .map(|i| {
                        let a = start + arc * i as f64 / *frames as f64;
                        let dir = Vector3::new(elevation.cos() * a.cos(), elevation.cos() * a.sin(), elevation.sin());
                        Pose::look_at(c + dir * *radius, c, up)
                    })
                    .collect()
            }
            TrajectorySpec::Waypoints(w) => {
                if w.is_empty() {
                    return Err(Error::Config("trajectory has zero frames".into()));
                }
                w.iter()
                    .map(|p| Pose::look_at(Vector3::from(p.eye), Vector3::from(p.target), up))
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(self.focal, self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub objects: Vec<SceneObject>,
    pub gaussians_per_object: usize,
    /// Objects must lie within this half-width of the origin.
    pub room_extent: f64,
    pub camera: CameraSpec,
    pub trajectory: TrajectorySpec,
}

/// Default orbit camera used by [`SyntheticSceneSpec::tabletop`].
pub const TABLETOP_CAMERA: CameraSpec = CameraSpec {
    focal: 560.0,
    width: 640,
    height: 480,
};

const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.2, 0.2],
    [0.2, 0.7, 0.25],
    [0.2, 0.35, 0.85],
    [0.9, 0.75, 0.15],
    [0.7, 0.25, 0.75],
    [0.15, 0.75, 0.8],
    [0.95, 0.5, 0.15],
    [0.55, 0.55, 0.55],
];

/// Object `i` (label `i + 1`) resting on the ground plane at `xy`; the
/// primitive cycles box, sphere, patch.
fn random_object(i: usize, xy: [f64; 2], rng: &mut impl Rng) -> SceneObject {
    let size = rng.random_range(0.13..0.2);
    let primitive = match i % 3 {
        0 => Primitive::Box {
            half_extents: [size, size * rng.random_range(0.7..1.0), size * rng.random_range(0.8..1.3)],
        },
        1 => Primitive::Sphere { radius: size },
        _ => Primitive::Patch {
            half_extents: [size * 1.2, size * 1.1],
        },
    };
    let lift = match &primitive {
        Primitive::Box { half_extents } => half_extents[2],
        Primitive::Sphere { radius } => *radius,
        Primitive::Patch { .. } => 0.01,
    };
    let jitter: f64 = rng.random_range(0.85..1.0);
    SceneObject {
        primitive,
        center: [xy[0], xy[1], lift],
        yaw: rng.random_range(0.0..PI),
        color: PALETTE[i % PALETTE.len()].map(|c| c * jitter),
        label: i as Label + 1,
    }
}

impl SyntheticSceneSpec {
    /// `n` objects on a ring of radius 0.7 around the origin, orbited by a
    /// camera at radius 2.4 and 50° elevation over a full circle.
    pub fn tabletop(n: usize, frames: usize, layout_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        let objects = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n.max(1) as f64 + rng.random_range(-0.15..0.15);
                let ring = 0.7 + rng.random_range(-0.1..0.1);
                random_object(i, [ring * a.cos(), ring * a.sin()], &mut rng)
            })
            .collect();
        Self {
            objects,
            gaussians_per_object: 600,
            room_extent: 1.5,
            camera: TABLETOP_CAMERA,
            trajectory: TrajectorySpec::Orbit {
                center: [0.0, 0.0, 0.15],
                radius: 2.4,
                elevation: 50f64.to_radians(),
                start: 0.0,
                arc: 2.0 * PI,
                frames,
            },
        }
    }

    /// `n` objects in a row along x, 0.5 apart, passed by a camera that pans
    /// parallel to the row and then back to its middle, so objects enter the
    /// view across the image edge, the second time with the map already
    /// holding them.
    pub fn shelf(n: usize, frames: usize, layout_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        let half = 0.25 * n.saturating_sub(1) as f64;
        let objects = (0..n)
            .map(|i| random_object(i, [0.5 * i as f64 - half, rng.random_range(-0.05..0.05)], &mut rng))
            .collect();
        let (from, to) = (-half - 1.0, half + 1.0);
        let waypoints = (0..frames.max(1))
            .map(|i| {
                // out along the row, then halfway back
                let t = 1.5 * i as f64 / frames.saturating_sub(1).max(1) as f64;
                let x = from + (to - from) * if t <= 1.0 { t } else { 2.0 - t };
                Waypoint {
                    eye: [x, -1.3, 0.9],
                    target: [x, 0.0, 0.1],
                }
            })
            .collect();
        Self {
            objects,
            gaussians_per_object: 600,
            room_extent: half + 0.5,
            camera: TABLETOP_CAMERA,
            trajectory: TrajectorySpec::Waypoints(waypoints),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if o.label == 0 || !seen.insert(o.label) {
                return Err(Error::Config(format!("object label {} is zero or repeated", o.label)));
            }
            if o.center.iter().any(|c| c.abs() > self.room_extent) {
                return Err(Error::Config(format!("object {} lies outside the room", o.label)));
            }
        }
        if self.gaussians_per_object < 8 {
            return Err(Error::Config("at least 8 Gaussians per object are required".into()));
        }
        self.camera.intrinsics()?;
        Ok(())
    }

    pub fn class_names(&self) -> BTreeMap<Label, String> {
        self.objects
            .iter()
            .map(|o| (o.label, o.primitive.class_name().to_string()))
            .collect()
    }
}

/// Ground truth for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthFrame {
    pub pose: Pose,
    pub rgb: RgbImage,
    /// Surface depth; 0 where coverage is below one half.
    pub depth: ScalarImage,
    pub labels: LabelMap,
    pub detections: Vec<Detection>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub scene: GaussianScene,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<GroundTruthFrame>,
    pub class_names: BTreeMap<Label, String>,
}

impl SyntheticDataset {
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }
}

fn surface_gaussians(obj: &SceneObject, count: usize, rng: &mut impl Rng) -> Vec<LabeledGaussian> {
    let tangent = (obj.primitive.area() / count as f64).sqrt() * 0.75;
    let normal_scale = tangent * 0.15;
    let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), obj.yaw);
    let center = Vector3::from(obj.center);
    let base = Vector3::from(obj.color);
    (0..count)
        .map(|_| {
            let (p, n) = obj.primitive.sample(rng);
            let n_world = yaw * n;
            let align = UnitQuaternion::rotation_between(&Vector3::z(), &n_world)
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
            let shade: f64 = rng.random_range(0.9..1.1);
            LabeledGaussian {
                position: center + yaw * p,
                scale: Vector3::new(tangent, tangent, normal_scale),
                rotation: *align.quaternion(),
                opacity: 0.9,
                color: (base * shade).map(|c| c.clamp(0.0, 1.0)),
                label: obj.label,
            }
        })
        .collect()
}

/// Detections derived from a ground-truth label map: one tight box per
/// visible object with score 0.9.
pub fn ground_truth_detections(labels: &LabelMap, class_names: &BTreeMap<Label, String>) -> Vec<Detection> {
    label_bboxes(labels)
        .into_iter()
        .filter_map(|(l, bbox)| {
            class_names.get(&l).map(|name| Detection {
                class_name: name.clone(),
                score: 0.9,
                bbox,
            })
        })
        .collect()
}

/// Depth is reported only where the surface covers most of the pixel, the
/// way range sensors drop returns along silhouette edges.
pub const DEPTH_MIN_COVERAGE: f64 = 0.7;

pub fn render_ground_truth(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    class_names: &BTreeMap<Label, String>,
) -> Result<GroundTruthFrame> {
    let lr = render_label_map(scene, pose, intrinsics, &RenderConfig::default(), DEFAULT_TOP_K)?;
    // Depth of the winning object only, so occlusion edges do not blend two
    // surfaces into a point floating between them.
    let gaussians = scene.gaussians();
    let depth = ScalarImage::from_fn(intrinsics.width, intrinsics.height, |x, y| {
        let p = y * intrinsics.width + x;
        let winner = lr.labels.as_slice()[p];
        if winner == BACKGROUND || lr.frame.coverage(p) < DEPTH_MIN_COVERAGE {
            return 0.0;
        }
        let (zw, w) = lr
            .topk
            .at(p)
            .iter()
            .filter(|e| e.label == winner)
            .fold((0.0, 0.0), |(zw, w), e| {
                let z = pose.transform_point(&gaussians[e.gaussian_index].position).z;
                (zw + e.weight * z, w + e.weight)
            });
        if w > 0.0 {
            zw / w
        } else {
            0.0
        }
    });
    Ok(GroundTruthFrame {
        pose: *pose,
        rgb: lr.frame.rgb,
        depth,
        detections: ground_truth_detections(&lr.labels, class_names),
        labels: lr.labels,
    })
}

pub fn generate_synthetic(spec: &SyntheticSceneSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let intrinsics = spec.camera.intrinsics()?;
    let poses = spec.trajectory.poses()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians: Vec<LabeledGaussian> = spec
        .objects
        .iter()
        .flat_map(|o| surface_gaussians(o, spec.gaussians_per_object, &mut rng))
        .collect();
    let scene = GaussianScene::from_gaussians(gaussians, DEFAULT_MAX_LABELS)?;
    let class_names = spec.class_names();
    let frames = poses
        .iter()
        .map(|p| render_ground_truth(&scene, p, &intrinsics, &class_names))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        scene,
        intrinsics,
        frames,
        class_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_object() -> SyntheticSceneSpec {
        let mut spec = SyntheticSceneSpec::tabletop(1, 1, 3);
        spec.objects[0].center = [0.0, 0.0, 0.15];
        spec.gaussians_per_object = 200;
        spec
    }

    #[test]
    fn single_object_single_frame() {
        let data = generate_synthetic(&one_object(), 1).unwrap();
        assert_eq!(data.frames.len(), 1);
        let labels = &data.frames[0].labels;
        assert_eq!(labels.labels(), vec![1]);
        assert!(labels.as_slice().contains(&0));
        assert_eq!(data.frames[0].detections.len(), 1);
        assert_eq!(data.frames[0].detections[0].class_name, "box");
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&one_object(), 5).unwrap();
        let b = generate_synthetic(&one_object(), 5).unwrap();
        assert_eq!(a.scene.gaussians(), b.scene.gaussians());
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn orbit_radius() {
        let t = TrajectorySpec::Orbit {
            center: [0.1, -0.2, 0.3],
            radius: 2.0,
            elevation: 0.5,
            start: 0.2,
            arc: 2.0 * PI,
            frames: 12,
        };
        let poses = t.poses().unwrap();
        assert_eq!(poses.len(), 12);
        for p in poses {
            assert!(((p.camera_center() - Vector3::new(0.1, -0.2, 0.3)).norm() - 2.0).abs() < 1e-6);
        }
        let zero = TrajectorySpec::Waypoints(vec![]);
        assert!(zero.poses().is_err());
    }

    #[test]
    fn depth_belongs_to_the_winning_object() {
        let data = generate_synthetic(&SyntheticSceneSpec::tabletop(8, 2, 1), 2).unwrap();
        let f = &data.frames[1];
        let mut range: BTreeMap<Label, (f64, f64)> = BTreeMap::new();
        for g in data.scene.gaussians() {
            let z = f.pose.transform_point(&g.position).z;
            let e = range.entry(g.label).or_insert((f64::INFINITY, f64::NEG_INFINITY));
            *e = (e.0.min(z), e.1.max(z));
        }
        let mut with_depth = 0;
        for (&d, &l) in f.depth.as_slice().iter().zip(f.labels.as_slice()) {
            if d > 0.0 {
                with_depth += 1;
                assert_ne!(l, BACKGROUND);
                let (lo, hi) = range[&l];
                assert!(d >= lo - 1e-9 && d <= hi + 1e-9, "depth {d} outside object {l} [{lo}, {hi}]");
            }
        }
        let labelled = f.labels.as_slice().iter().filter(|&&l| l != BACKGROUND).count();
        assert!(with_depth > labelled * 4 / 5 && with_depth <= labelled);
    }

    #[test]
    fn shelf_objects_cross_the_image_edge() {
        let data = generate_synthetic(&SyntheticSceneSpec::shelf(8, 24, 1), 1).unwrap();
        let counts: Vec<usize> = data.frames.iter().map(|f| f.labels.labels().len()).collect();
        assert!(counts[0] < 8 && counts.iter().all(|&c| c < 8), "{counts:?}");
        let (w, h) = data.frames[0].labels.dims();
        let clipped = data.frames.iter().any(|f| {
            (0..h).any(|y| *f.labels.get(w - 1, y) != BACKGROUND || *f.labels.get(0, y) != BACKGROUND)
        });
        assert!(clipped);
        let seen: std::collections::BTreeSet<Label> = data.frames.iter().flat_map(|f| f.labels.labels()).collect();
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn spec_validation() {
        let mut spec = one_object();
        spec.gaussians_per_object = 4;
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSceneSpec::tabletop(2, 1, 0);
        spec.objects[1].label = 1;
        assert!(spec.validate().is_err());
    }
}
