//! Projection of labeled Gaussians and depth-sorted front-to-back compositing.
//!
//! Rendering runs in three stages: every Gaussian is projected to a 2D splat,
//! the splats are sorted once per frame by camera depth (ties by Gaussian
//! index) and binned into screen tiles, and each pixel then composites the
//! depth-ordered splats of its tile. Pixels are independent, so tiles can be
//! processed in any order or in parallel with identical results.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::raster::{RgbImage, ScalarImage};
use crate::scene::{GaussianScene, Label, LabeledGaussian};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    /// Contributions with α below this are skipped.
    pub alpha_cutoff: f64,
    pub max_alpha: f64,
    /// Compositing stops once transmittance drops below this.
    pub transmittance_stop: f64,
    /// Camera-space depth below which Gaussians are culled.
    pub near: f64,
    /// Added to the diagonal of every projected covariance (pixels²).
    pub cov_regularizer: f64,
    /// Splat support radius in standard deviations of the 2D covariance.
    pub extent_sigma: f64,
    /// Per-pixel cap on recorded contributors.
    pub contributor_bound: usize,
    pub tile_size: usize,
    pub parallel: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            alpha_cutoff: 1.0 / 255.0,
            max_alpha: 0.999,
            transmittance_stop: 1e-4,
            near: 0.01,
            cov_regularizer: 0.3,
            extent_sigma: 3.0,
            contributor_bound: 4 * crate::voting::DEFAULT_TOP_K,
            tile_size: 16,
            parallel: true,
        }
    }
}

/// A Gaussian projected to the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    cov2d: Matrix2<f64>,
    conic: Matrix2<f64>,
    /// Camera-frame z of the center.
    pub depth: f64,
    pub source_index: usize,
}

impl Splat2D {
    /// Fails when `cov2d` is not symmetric positive definite.
    pub fn new(
        mean2d: Vector2<f64>,
        cov2d: Matrix2<f64>,
        depth: f64,
        source_index: usize,
    ) -> Result<Self> {
        let cov2d = (cov2d + cov2d.transpose()) * 0.5;
        let det = cov2d.determinant();
        if !(det > 0.0 && cov2d[(0, 0)] > 0.0) || !det.is_finite() {
            return Err(Error::SingularCovariance(det));
        }
        let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
        Ok(Self {
            mean2d,
            cov2d,
            conic,
            depth,
            source_index,
        })
    }

    pub fn cov2d(&self) -> &Matrix2<f64> {
        &self.cov2d
    }

    /// Inverse of the 2D covariance.
    pub fn conic(&self) -> &Matrix2<f64> {
        &self.conic
    }

    pub fn mahalanobis_sq(&self, pixel: &Vector2<f64>) -> f64 {
        let d = pixel - self.mean2d;
        (d.transpose() * self.conic * d)[(0, 0)]
    }

    /// Half extents of the axis-aligned box around the `sigma` ellipse.
    pub fn extent(&self, sigma: f64) -> (f64, f64) {
        (
            sigma * self.cov2d[(0, 0)].sqrt(),
            sigma * self.cov2d[(1, 1)].sqrt(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Projected {
    Visible(Splat2D),
    /// Center at or behind the near plane.
    Culled,
}

/// Jacobian of the pinhole projection evaluated at camera-frame point `p`.
pub fn perspective_jacobian(p: &Vector3<f64>, fx: f64, fy: f64) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(fx * iz, 0.0, -fx * p.x * iz2, 0.0, fy * iz, -fy * p.y * iz2)
}

/// Σ' = J·W·Σ·Wᵀ·Jᵀ, without regularization.
pub fn project_cov(
    cov: &Matrix3<f64>,
    view_rotation: &Matrix3<f64>,
    jacobian: &Matrix2x3<f64>,
) -> Matrix2<f64> {
    let t = jacobian * view_rotation;
    t * cov * t.transpose()
}

pub fn project_covariance(
    index: usize,
    gaussian: &LabeledGaussian,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
) -> Result<Projected> {
    let p_cam = pose.transform_point(&gaussian.position);
    if !(p_cam.z > config.near) {
        if p_cam.iter().all(|v| v.is_finite()) {
            return Ok(Projected::Culled);
        }
        return Err(Error::NonFiniteProjection(index));
    }
    let w = pose.rotation_matrix();
    let j = perspective_jacobian(&p_cam, intrinsics.fx, intrinsics.fy);
    let cov2d = project_cov(&gaussian.covariance(), &w, &j)
        + Matrix2::identity() * config.cov_regularizer;
    let (u, v) = intrinsics.project(&p_cam);
    if !(u.is_finite() && v.is_finite() && cov2d.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFiniteProjection(index));
    }
    let splat = Splat2D::new(Vector2::new(u, v), cov2d, p_cam.z, index)
        .map_err(|_| Error::NonFiniteProjection(index))?;
    Ok(Projected::Visible(splat))
}

/// α = opacity·exp(−½·dᵀΣ'⁻¹d), capped at `max_alpha`. Zero outside the
/// splat support or below the cutoff.
pub fn evaluate_alpha(
    splat: &Splat2D,
    opacity: f64,
    pixel: &Vector2<f64>,
    config: &RenderConfig,
) -> f64 {
    let c = &splat.conic;
    alpha_from_conic(
        [splat.mean2d.x, splat.mean2d.y],
        [c[(0, 0)], c[(0, 1)], c[(1, 1)]],
        opacity,
        pixel.x,
        pixel.y,
        config,
    )
}

#[inline]
fn alpha_from_conic(
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    x: f64,
    y: f64,
    config: &RenderConfig,
) -> f64 {
    let dx = x - mean[0];
    let dy = y - mean[1];
    let m = conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy;
    if !(m <= config.extent_sigma * config.extent_sigma) {
        return 0.0;
    }
    let alpha = (opacity * (-0.5 * m).exp()).min(config.max_alpha);
    if alpha < config.alpha_cutoff {
        0.0
    } else {
        alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelContributor {
    pub gaussian_index: usize,
    pub alpha: f64,
    /// Blending weight α·Π(1−α_j) over the contributors in front.
    pub weight: f64,
    pub depth: f64,
    pub color: [f64; 3],
    pub label: Label,
}

/// Per-pixel contributor sequences, depth-ascending within a pixel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContributorTable {
    spans: Vec<(usize, usize)>,
    entries: Vec<PixelContributor>,
}

impl ContributorTable {
    pub fn at(&self, pixel: usize) -> &[PixelContributor] {
        match self.spans.get(pixel) {
            Some(&(start, len)) => &self.entries[start..start + len],
            None => &[],
        }
    }

    pub fn is_recorded(&self) -> bool {
        !self.spans.is_empty()
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRender {
    /// C(p).
    pub rgb: RgbImage,
    /// D(p), weighted by the blending weights; 0 where nothing contributes.
    pub depth: ScalarImage,
    /// Final transmittance Π(1−α_j) per pixel.
    pub transmittance: ScalarImage,
    pub contributors: ContributorTable,
}

impl FrameRender {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn coverage(&self, pixel: usize) -> f64 {
        1.0 - self.transmittance.as_slice()[pixel]
    }

    /// Depth normalized by coverage, `None` when coverage is below `min_coverage`.
    pub fn surface_depth(&self, pixel: usize, min_coverage: f64) -> Option<f64> {
        let cov = self.coverage(pixel);
        if cov >= min_coverage && cov > 0.0 {
            Some(self.depth.as_slice()[pixel] / cov)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PreparedSplat {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    depth: f64,
    color: [f64; 3],
    label: Label,
    index: usize,
}

/// Depth-sorted splats binned into tiles.
pub(crate) struct Prepared {
    splats: Vec<PreparedSplat>,
    tile_offsets: Vec<usize>,
    tile_items: Vec<u32>,
    tiles_x: usize,
    tiles_y: usize,
    tile_size: usize,
    width: usize,
    height: usize,
}

impl Prepared {
    pub(crate) fn new(
        scene: &GaussianScene,
        pose: &Pose,
        intrinsics: &CameraIntrinsics,
        config: &RenderConfig,
    ) -> Result<Self> {
        intrinsics.validate()?;
        if config.tile_size == 0 {
            return Err(Error::Config("tile size must be positive".into()));
        }
        let gaussians = scene.gaussians();
        let project = |i: usize| -> Result<Option<(Splat2D, (f64, f64))>> {
            match project_covariance(i, &gaussians[i], pose, intrinsics, config)? {
                Projected::Culled => Ok(None),
                Projected::Visible(s) => {
                    let ext = s.extent(config.extent_sigma);
                    let (w, h) = (intrinsics.width as f64, intrinsics.height as f64);
                    let off = s.mean2d.x + ext.0 < 0.0
                        || s.mean2d.x - ext.0 > w - 1.0
                        || s.mean2d.y + ext.1 < 0.0
                        || s.mean2d.y - ext.1 > h - 1.0;
                    Ok((!off).then_some((s, ext)))
                }
            }
        };
        let projected: Vec<Option<(Splat2D, (f64, f64))>> = if config.parallel {
            (0..gaussians.len()).into_par_iter().map(project).collect::<Result<_>>()?
        } else {
            (0..gaussians.len()).map(project).collect::<Result<_>>()?
        };
        let mut visible: Vec<(Splat2D, (f64, f64))> = projected.into_iter().flatten().collect();
        visible.sort_by(|a, b| {
            a.0.depth
                .total_cmp(&b.0.depth)
                .then(a.0.source_index.cmp(&b.0.source_index))
        });

        let ts = config.tile_size;
        let tiles_x = intrinsics.width.div_ceil(ts);
        let tiles_y = intrinsics.height.div_ceil(ts);
        let mut ranges = Vec::with_capacity(visible.len());
        let mut counts = vec![0usize; tiles_x * tiles_y];
        for (s, (rx, ry)) in &visible {
            let x0 = (s.mean2d.x - rx).ceil().max(0.0) as usize;
            let x1 = ((s.mean2d.x + rx).floor().min(intrinsics.width as f64 - 1.0)) as usize;
            let y0 = (s.mean2d.y - ry).ceil().max(0.0) as usize;
            let y1 = ((s.mean2d.y + ry).floor().min(intrinsics.height as f64 - 1.0)) as usize;
            let r = if x0 <= x1 && y0 <= y1 {
                Some((x0 / ts, x1 / ts, y0 / ts, y1 / ts))
            } else {
                None
            };
            if let Some((tx0, tx1, ty0, ty1)) = r {
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        counts[ty * tiles_x + tx] += 1;
                    }
                }
            }
            ranges.push(r);
        }
        let mut tile_offsets = Vec::with_capacity(counts.len() + 1);
        tile_offsets.push(0);
        for c in &counts {
            tile_offsets.push(tile_offsets.last().unwrap() + c);
        }
        let mut cursor = tile_offsets[..counts.len()].to_vec();
        let mut tile_items = vec![0u32; *tile_offsets.last().unwrap()];
        for (k, r) in ranges.iter().enumerate() {
            if let Some((tx0, tx1, ty0, ty1)) = *r {
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        let t = ty * tiles_x + tx;
                        tile_items[cursor[t]] = k as u32;
                        cursor[t] += 1;
                    }
                }
            }
        }
        let splats = visible
            .iter()
            .map(|(s, _)| {
                let g = &gaussians[s.source_index];
                PreparedSplat {
                    mean: [s.mean2d.x, s.mean2d.y],
                    conic: [s.conic[(0, 0)], s.conic[(0, 1)], s.conic[(1, 1)]],
                    opacity: g.opacity,
                    depth: s.depth,
                    color: [g.color.x, g.color.y, g.color.z],
                    label: g.label,
                    index: s.source_index,
                }
            })
            .collect();
        Ok(Self {
            splats,
            tile_offsets,
            tile_items,
            tiles_x,
            tiles_y,
            tile_size: ts,
            width: intrinsics.width,
            height: intrinsics.height,
        })
    }

    pub(crate) fn num_tiles(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Runs the compositing loop for every pixel and hands each result to
    /// `sink`, one accumulator per tile, returned in tile order.
    pub(crate) fn composite<O, F>(&self, config: &RenderConfig, record: bool, sink: F) -> Vec<O>
    where
        O: Default + Send,
        F: Fn(&mut O, usize, &PixelOut, &[PixelContributor]) + Sync,
    {
        let run_tile = |tile: usize| -> O {
            let mut out = O::default();
            let mut scratch = Vec::new();
            let tx = tile % self.tiles_x;
            let ty = tile / self.tiles_x;
            let items = &self.tile_items[self.tile_offsets[tile]..self.tile_offsets[tile + 1]];
            let x_end = ((tx + 1) * self.tile_size).min(self.width);
            let y_end = ((ty + 1) * self.tile_size).min(self.height);
            for y in ty * self.tile_size..y_end {
                for x in tx * self.tile_size..x_end {
                    scratch.clear();
                    let px = self.composite_pixel(items, x as f64, y as f64, config, record, &mut scratch);
                    sink(&mut out, y * self.width + x, &px, &scratch);
                }
            }
            out
        };
        if config.parallel {
            (0..self.num_tiles()).into_par_iter().map(run_tile).collect()
        } else {
            (0..self.num_tiles()).map(run_tile).collect()
        }
    }

    #[inline]
    fn composite_pixel(
        &self,
        items: &[u32],
        x: f64,
        y: f64,
        config: &RenderConfig,
        record: bool,
        scratch: &mut Vec<PixelContributor>,
    ) -> PixelOut {
        let mut t = 1.0;
        let mut rgb = [0.0; 3];
        let mut depth = 0.0;
        for &k in items {
            let s = &self.splats[k as usize];
            let alpha = alpha_from_conic(s.mean, s.conic, s.opacity, x, y, config);
            if alpha == 0.0 {
                continue;
            }
            let w = alpha * t;
            rgb[0] += s.color[0] * w;
            rgb[1] += s.color[1] * w;
            rgb[2] += s.color[2] * w;
            depth += s.depth * w;
            if record {
                scratch.push(PixelContributor {
                    gaussian_index: s.index,
                    alpha,
                    weight: w,
                    depth: s.depth,
                    color: s.color,
                    label: s.label,
                });
            }
            t *= 1.0 - alpha;
            if t < config.transmittance_stop {
                break;
            }
        }
        PixelOut {
            rgb,
            depth,
            transmittance: t,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PixelOut {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub transmittance: f64,
}

/// Keeps the `bound` highest-weight contributors, preserving depth order.
pub(crate) fn bounded(contributors: &[PixelContributor], bound: usize) -> Vec<PixelContributor> {
    if contributors.len() <= bound {
        return contributors.to_vec();
    }
    let mut order: Vec<usize> = (0..contributors.len()).collect();
    order.sort_by(|&a, &b| contributors[b].weight.total_cmp(&contributors[a].weight).then(a.cmp(&b)));
    order.truncate(bound);
    order.sort_unstable();
    order.into_iter().map(|i| contributors[i]).collect()
}

#[derive(Default)]
struct RasterTile {
    pixels: Vec<(usize, PixelOut)>,
    spans: Vec<(usize, usize, usize)>,
    entries: Vec<PixelContributor>,
}

pub(crate) fn assemble_frame(
    width: usize,
    height: usize,
    tiles: Vec<Vec<(usize, PixelOut)>>,
) -> FrameRender {
    let mut rgb = RgbImage::filled(width, height, [0.0; 3]);
    let mut depth = ScalarImage::filled(width, height, 0.0);
    let mut trans = ScalarImage::filled(width, height, 1.0);
    for (p, px) in tiles.into_iter().flatten() {
        rgb.as_mut_slice()[p] = px.rgb;
        depth.as_mut_slice()[p] = px.depth;
        trans.as_mut_slice()[p] = px.transmittance;
    }
    FrameRender {
        rgb,
        depth,
        transmittance: trans,
        contributors: ContributorTable::default(),
    }
}

fn assemble(prep: &Prepared, tiles: Vec<RasterTile>, record: bool) -> FrameRender {
    let (w, h) = (prep.width, prep.height);
    let mut spans = if record { vec![(0, 0); w * h] } else { Vec::new() };
    let mut entries = Vec::new();
    let mut pixels = Vec::with_capacity(tiles.len());
    for tile in tiles {
        let base = entries.len();
        for (p, start, len) in tile.spans {
            spans[p] = (base + start, len);
        }
        entries.extend(tile.entries);
        pixels.push(tile.pixels);
    }
    let mut frame = assemble_frame(w, h, pixels);
    frame.contributors = ContributorTable { spans, entries };
    frame
}

fn render_impl(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
    record: bool,
) -> Result<FrameRender> {
    let prep = Prepared::new(scene, pose, intrinsics, config)?;
    let bound = config.contributor_bound;
    let tiles = prep.composite(config, record, |out: &mut RasterTile, p, px, contributors| {
        out.pixels.push((p, *px));
        if record {
            let kept = bounded(contributors, bound);
            out.spans.push((p, out.entries.len(), kept.len()));
            out.entries.extend(kept);
        }
    });
    Ok(assemble(&prep, tiles, record))
}

/// Full render: RGB, depth and the bounded per-pixel contributor sequences.
pub fn rasterize(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
) -> Result<FrameRender> {
    render_impl(scene, pose, intrinsics, config, true)
}

/// RGB and depth only; no contributor bookkeeping.
pub fn render_rgbd(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
) -> Result<FrameRender> {
    render_impl(scene, pose, intrinsics, config, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DEFAULT_MAX_LABELS;
    use nalgebra::{Quaternion, UnitQuaternion};

    fn cfg() -> RenderConfig {
        RenderConfig::default()
    }

    #[test]
    fn on_axis_isotropic_projection() {
        // J = diag(f, f) at z = 1, so Σ' = diag((f·s)², (f·s)²) + 0.3·I.
        let f = 50.0;
        let s = 0.02;
        let g = LabeledGaussian::isotropic(Vector3::new(0.0, 0.0, 1.0), s, 1.0, Vector3::zeros(), 1);
        let k = CameraIntrinsics::new(f, f, 32.0, 32.0, 64, 64).unwrap();
        let Projected::Visible(sp) = project_covariance(0, &g, &Pose::identity(), &k, &cfg()).unwrap()
        else {
            panic!("culled")
        };
        let expect = (f * s).powi(2) + 0.3;
        assert!((sp.cov2d()[(0, 0)] - expect).abs() < 1e-12);
        assert!((sp.cov2d()[(1, 1)] - expect).abs() < 1e-12);
        assert!(sp.cov2d()[(0, 1)].abs() < 1e-12);
        assert_eq!(sp.mean2d, Vector2::new(32.0, 32.0));
        assert_eq!(sp.depth, 1.0);
    }

    #[test]
    fn identity_jacobian_keeps_leading_block() {
        let mut g = LabeledGaussian::isotropic(Vector3::zeros(), 1.0, 1.0, Vector3::zeros(), 1);
        g.scale = Vector3::new(0.5, 0.2, 0.9);
        g.rotation = *UnitQuaternion::from_euler_angles(0.4, 0.1, -0.8).quaternion();
        let sigma = g.covariance();
        let j = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let out = project_cov(&sigma, &Matrix3::identity(), &j);
        assert!((out - sigma.fixed_view::<2, 2>(0, 0)).norm() < 1e-15);
    }

    #[test]
    fn behind_camera_is_culled() {
        let g = LabeledGaussian::isotropic(Vector3::new(0.0, 0.0, -1.0), 0.1, 1.0, Vector3::zeros(), 1);
        let k = CameraIntrinsics::centered(50.0, 64, 64).unwrap();
        assert_eq!(
            project_covariance(0, &g, &Pose::identity(), &k, &cfg()).unwrap(),
            Projected::Culled
        );
    }

    #[test]
    fn non_finite_projection_names_index() {
        let g = LabeledGaussian {
            position: Vector3::new(0.0, 0.0, f64::INFINITY),
            scale: Vector3::repeat(0.1),
            rotation: Quaternion::identity(),
            opacity: 1.0,
            color: Vector3::zeros(),
            label: 1,
        };
        let k = CameraIntrinsics::centered(50.0, 64, 64).unwrap();
        let err = project_covariance(7, &g, &Pose::identity(), &k, &cfg()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteProjection(7)));
    }

    #[test]
    fn alpha_at_center_and_falloff() {
        let sp = Splat2D::new(Vector2::new(10.0, 10.0), Matrix2::new(4.0, 0.0, 0.0, 1.0), 1.0, 0).unwrap();
        assert_eq!(evaluate_alpha(&sp, 0.8, &Vector2::new(10.0, 10.0), &cfg()), 0.8);
        // dᵀΣ⁻¹d = 2 with d = (2, 1): 4/4 + 1/1.
        let a = evaluate_alpha(&sp, 1.0, &Vector2::new(12.0, 11.0), &cfg());
        assert!((a - (-1.0f64).exp()).abs() < 1e-12);
        assert!((a - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn alpha_cutoff_and_cap() {
        let sp = Splat2D::new(Vector2::new(0.0, 0.0), Matrix2::identity(), 1.0, 0).unwrap();
        assert_eq!(evaluate_alpha(&sp, 1.0, &Vector2::zeros(), &cfg()), 0.999);
        // 0.003 < 1/255
        assert_eq!(evaluate_alpha(&sp, 0.003, &Vector2::zeros(), &cfg()), 0.0);
        // beyond 3σ
        assert_eq!(evaluate_alpha(&sp, 1.0, &Vector2::new(3.01, 0.0), &cfg()), 0.0);
    }

    #[test]
    fn singular_covariance_rejected() {
        let err = Splat2D::new(Vector2::zeros(), Matrix2::new(1.0, 1.0, 1.0, 1.0), 1.0, 0).unwrap_err();
        assert!(matches!(err, Error::SingularCovariance(_)));
    }

    fn one_pixel_scene(layers: &[(f64, f64, [f64; 3])]) -> (GaussianScene, CameraIntrinsics) {
        // Tiny splats centered on pixel (2, 2); opacity gives α exactly at the center.
        let k = CameraIntrinsics::new(100.0, 100.0, 2.0, 2.0, 5, 5).unwrap();
        let gs = layers
            .iter()
            .enumerate()
            .map(|(i, &(op, z, c))| {
                LabeledGaussian::isotropic(Vector3::new(0.0, 0.0, z), 1e-4, op, Vector3::from(c), i as u32 + 1)
            })
            .collect();
        (GaussianScene::from_gaussians(gs, DEFAULT_MAX_LABELS).unwrap(), k)
    }

    #[test]
    fn single_layer_blend() {
        let (scene, k) = one_pixel_scene(&[(1.0, 1.5, [0.2, 0.4, 0.6])]);
        let fr = rasterize(&scene, &Pose::identity(), &k, &cfg()).unwrap();
        let p = fr.rgb.index_of(2, 2);
        // α is capped at 0.999
        let rgb = fr.rgb.as_slice()[p];
        for (c, e) in rgb.iter().zip([0.2, 0.4, 0.6]) {
            assert!((c - 0.999 * e).abs() < 1e-12);
        }
        assert!((fr.depth.as_slice()[p] - 0.999 * 1.5).abs() < 1e-12);
        assert!((fr.surface_depth(p, 0.5).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn two_layer_blend() {
        let f1 = [1.0, 0.0, 0.0];
        let f2 = [0.0, 1.0, 0.0];
        // back layer stored first to exercise the depth sort
        let (scene, k) = one_pixel_scene(&[(0.5, 2.0, f2), (0.5, 1.0, f1)]);
        let fr = rasterize(&scene, &Pose::identity(), &k, &cfg()).unwrap();
        let p = fr.rgb.index_of(2, 2);
        let rgb = fr.rgb.as_slice()[p];
        assert!((rgb[0] - 0.5).abs() < 1e-12);
        assert!((rgb[1] - 0.25).abs() < 1e-12);
        assert!((fr.depth.as_slice()[p] - 1.0).abs() < 1e-12);
        let c = fr.contributors.at(p);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].gaussian_index, 1);
        assert_eq!(c[1].gaussian_index, 0);
    }

    #[test]
    fn empty_scene_is_background() {
        let k = CameraIntrinsics::centered(50.0, 8, 8).unwrap();
        let fr = rasterize(&GaussianScene::default(), &Pose::identity(), &k, &cfg()).unwrap();
        assert!(fr.rgb.as_slice().iter().all(|c| *c == [0.0; 3]));
        assert!(fr.depth.as_slice().iter().all(|&d| d == 0.0));
        assert!(fr.transmittance.as_slice().iter().all(|&t| t == 1.0));
    }

    #[test]
    fn bounded_drops_lowest_weight() {
        let mk = |i: usize, w: f64| PixelContributor {
            gaussian_index: i,
            alpha: w,
            weight: w,
            depth: i as f64,
            color: [0.0; 3],
            label: 1,
        };
        let cs = vec![mk(0, 0.5), mk(1, 0.1), mk(2, 0.3), mk(3, 0.05)];
        let kept = bounded(&cs, 2);
        assert_eq!(kept.iter().map(|c| c.gaussian_index).collect::<Vec<_>>(), vec![0, 2]);
    }
}
