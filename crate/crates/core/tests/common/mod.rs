#![allow(dead_code)]

//! Brute-force reference renderer and voter, written against plain arrays.
//! Every Gaussian is evaluated at every pixel; no tiling, no bounding boxes.

use semsplat::{CameraIntrinsics, Label, LabeledGaussian, Pose};

pub const NEAR: f64 = 0.01;
pub const REGULARIZER: f64 = 0.3;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const ALPHA_MAX: f64 = 0.999;
pub const CUTOFF_SQ: f64 = 9.0;
pub const T_STOP: f64 = 1e-4;
pub const MIN_COVERAGE: f64 = 0.5;

type M3 = [[f64; 3]; 3];

fn mul3(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose3(a: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn quat_matrix(w: f64, x: f64, y: f64, z: f64) -> M3 {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn view_matrix(pose: &Pose) -> (M3, [f64; 3]) {
    let q = pose.rotation.quaternion();
    let r = quat_matrix(q.w, q.i, q.j, q.k);
    (r, [pose.translation.x, pose.translation.y, pose.translation.z])
}

/// A Gaussian on the image plane: mean, inverse 2D covariance and depth.
#[derive(Clone, Copy, Debug)]
pub struct RefSplat {
    pub index: usize,
    pub mean: [f64; 2],
    pub inv: [f64; 3],
    pub depth: f64,
}

impl RefSplat {
    pub fn mahalanobis_sq(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        self.inv[0] * dx * dx + 2.0 * self.inv[1] * dx * dy + self.inv[2] * dy * dy
    }
}

pub fn project(index: usize, g: &LabeledGaussian, pose: &Pose, k: &CameraIntrinsics) -> Option<RefSplat> {
    let (w, t) = view_matrix(pose);
    let p = [g.position.x, g.position.y, g.position.z];
    let c: Vec<f64> = (0..3).map(|i| (0..3).map(|j| w[i][j] * p[j]).sum::<f64>() + t[i]).collect();
    if c[2] <= NEAR {
        return None;
    }
    let q = g.rotation;
    let n = (q.w * q.w + q.i * q.i + q.j * q.j + q.k * q.k).sqrt();
    let r = quat_matrix(q.w / n, q.i / n, q.j / n, q.k / n);
    let s = [
        [g.scale.x * g.scale.x, 0.0, 0.0],
        [0.0, g.scale.y * g.scale.y, 0.0],
        [0.0, 0.0, g.scale.z * g.scale.z],
    ];
    let cov3 = mul3(&mul3(&r, &s), &transpose3(&r));
    let cam_cov = mul3(&mul3(&w, &cov3), &transpose3(&w));
    let (x, y, z) = (c[0], c[1], c[2]);
    let jac = [
        [k.fx / z, 0.0, -k.fx * x / (z * z)],
        [0.0, k.fy / z, -k.fy * y / (z * z)],
    ];
    let mut cov2 = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cov2[i][j] = (0..3)
                .map(|a| (0..3).map(|b| jac[i][a] * cam_cov[a][b] * jac[j][b]).sum::<f64>())
                .sum();
        }
    }
    let a = cov2[0][0] + REGULARIZER;
    let b = 0.5 * (cov2[0][1] + cov2[1][0]);
    let d = cov2[1][1] + REGULARIZER;
    let det = a * d - b * b;
    Some(RefSplat {
        index,
        mean: [k.fx * x / z + k.cx, k.fy * y / z + k.cy],
        inv: [d / det, -b / det, a / det],
        depth: z,
    })
}

pub fn alpha(splat: &RefSplat, opacity: f64, x: f64, y: f64) -> f64 {
    let m = splat.mahalanobis_sq(x, y);
    if m > CUTOFF_SQ {
        return 0.0;
    }
    let a = (opacity * (-0.5 * m).exp()).min(ALPHA_MAX);
    if a < ALPHA_MIN {
        0.0
    } else {
        a
    }
}

pub struct RefFrame {
    pub width: usize,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub labels: Vec<Label>,
    /// Per pixel: (gaussian index, label, weight), front to back.
    pub contributions: Vec<Vec<(usize, Label, f64)>>,
}

/// Front-to-back compositing of every Gaussian at every pixel.
pub fn render(gaussians: &[LabeledGaussian], pose: &Pose, k: &CameraIntrinsics) -> RefFrame {
    let mut splats: Vec<RefSplat> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(i, g, pose, k))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let n = k.width * k.height;
    let mut out = RefFrame {
        width: k.width,
        rgb: vec![[0.0; 3]; n],
        depth: vec![0.0; n],
        transmittance: vec![1.0; n],
        labels: vec![0; n],
        contributions: vec![Vec::new(); n],
    };
    for py in 0..k.height {
        for px in 0..k.width {
            let p = py * k.width + px;
            let mut t = 1.0;
            for s in &splats {
                let g = &gaussians[s.index];
                let a = alpha(s, g.opacity, px as f64, py as f64);
                if a == 0.0 {
                    continue;
                }
                let w = a * t;
                for c in 0..3 {
                    out.rgb[p][c] += g.color[c] * w;
                }
                out.depth[p] += s.depth * w;
                out.contributions[p].push((s.index, g.label, w));
                t *= 1.0 - a;
                if t < T_STOP {
                    break;
                }
            }
            out.transmittance[p] = t;
            out.labels[p] = elect(&out.contributions[p], t);
        }
    }
    out
}

/// Largest summed weight wins, ties to the smaller label; background when
/// less than half the pixel is covered.
pub fn elect(contributions: &[(usize, Label, f64)], transmittance: f64) -> Label {
    if 1.0 - transmittance < MIN_COVERAGE {
        return 0;
    }
    let mut sums: std::collections::BTreeMap<Label, f64> = Default::default();
    for &(_, l, w) in contributions {
        *sums.entry(l).or_default() += w;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (l, w) in sums {
        if w > best.1 {
            best = (l, w);
        }
    }
    best.0
}

/// Pixels within the 3σ ellipse of any of `gaussians`.
pub fn footprint(gaussians: &[LabeledGaussian], pose: &Pose, k: &CameraIntrinsics) -> Vec<bool> {
    let mut mask = vec![false; k.width * k.height];
    for (i, g) in gaussians.iter().enumerate() {
        if let Some(s) = project(i, g, pose, k) {
            for py in 0..k.height {
                for px in 0..k.width {
                    if s.mahalanobis_sq(px as f64, py as f64) <= CUTOFF_SQ {
                        mask[py * k.width + px] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Small deterministic generator so the oracle does not share the crate's RNG plumbing.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

/// Random Gaussians in front of an identity camera, labels in `0..=max_label`.
pub fn random_gaussians(rng: &mut SplitMix, n: usize, max_label: Label) -> Vec<LabeledGaussian> {
    use nalgebra::{Quaternion, Vector3};
    (0..n)
        .map(|_| {
            let z = rng.range(0.5, 4.0);
            let q = Quaternion::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0))
                .normalize();
            LabeledGaussian {
                position: Vector3::new(rng.range(-0.6, 0.6) * z, rng.range(-0.6, 0.6) * z, z),
                scale: Vector3::new(rng.range(0.005, 0.3), rng.range(0.005, 0.3), rng.range(0.005, 0.3)),
                rotation: q,
                opacity: rng.range(0.05, 1.0),
                color: Vector3::new(rng.unit(), rng.unit(), rng.unit()),
                label: (rng.next_u64() % (max_label as u64 + 1)) as Label,
            }
        })
        .collect()
}
