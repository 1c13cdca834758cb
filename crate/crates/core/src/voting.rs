//! Label election by blending weight and the top-K contributor matrix.
//!
//! Every Gaussian that contributes to a pixel votes for its label with its
//! blending weight `w_i = α_i·Π_{k<i}(1−α_k)`; the label with the largest
//! cumulative weight wins. The K highest-weight contributors of each pixel
//! are kept so that a later change of the pixel's label can be pushed back
//! onto exactly the Gaussians responsible for it.

use std::collections::{BTreeMap, BTreeSet};

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::raster::{LabelMap, ScalarImage};
use crate::render::{assemble_frame, FrameRender, PixelContributor, Prepared, RenderConfig};
use crate::scene::{GaussianScene, Label, BACKGROUND};

pub const DEFAULT_TOP_K: usize = 50;

/// Pixels whose total coverage falls below this render as background.
pub const MIN_LABEL_COVERAGE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct PixelVote {
    pub winner: Label,
    /// Cumulative weight per label, ascending by label.
    pub tally: Vec<(Label, f64)>,
    pub transmittance: f64,
}

/// Elects a label from a depth-ascending sequence of `(label, alpha)`.
/// Ties go to the smaller label; an empty sequence elects background.
pub fn vote_pixel<I>(contributors: I) -> PixelVote
where
    I: IntoIterator<Item = (Label, f64)>,
{
    let mut tally: Vec<(Label, f64)> = Vec::new();
    let mut t = 1.0;
    for (label, alpha) in contributors {
        let w = alpha * t;
        match tally.iter_mut().find(|(l, _)| *l == label) {
            Some(entry) => entry.1 += w,
            None => tally.push((label, w)),
        }
        t *= 1.0 - alpha;
    }
    tally.sort_unstable_by_key(|&(l, _)| l);
    let winner = tally
        .iter()
        .fold(None::<(Label, f64)>, |best, &(l, w)| match best {
            Some((_, bw)) if bw >= w => best,
            _ => Some((l, w)),
        })
        .map_or(BACKGROUND, |(l, _)| l);
    PixelVote {
        winner,
        tally,
        transmittance: t,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopKEntry {
    pub gaussian_index: usize,
    pub label: Label,
    pub weight: f64,
}

/// Per-pixel top-K contributors, weight-descending.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKContributorMatrix {
    width: usize,
    height: usize,
    k: usize,
    spans: Vec<(usize, usize)>,
    entries: Vec<TopKEntry>,
}

impl TopKContributorMatrix {
    /// Builds the matrix from explicit per-pixel records (row-major).
    /// Each pixel's records are sorted by weight and truncated to `k`.
    pub fn from_pixels(width: usize, height: usize, k: usize, pixels: Vec<Vec<TopKEntry>>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: (pixels.len(), 1),
            });
        }
        let mut spans = Vec::with_capacity(pixels.len());
        let mut entries = Vec::new();
        for mut px in pixels {
            px.sort_by(|a, b| b.weight.total_cmp(&a.weight));
            px.truncate(k);
            spans.push((entries.len(), px.len()));
            entries.extend(px);
        }
        Ok(Self {
            width,
            height,
            k,
            spans,
            entries,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn at(&self, pixel: usize) -> &[TopKEntry] {
        match self.spans.get(pixel) {
            Some(&(start, len)) => &self.entries[start..start + len],
            None => &[],
        }
    }

    pub fn at_xy(&self, x: usize, y: usize) -> &[TopKEntry] {
        self.at(y * self.width + x)
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }
}

/// Per-pixel cumulative label weights W_j.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelWeightTally {
    width: usize,
    spans: Vec<(usize, usize)>,
    entries: Vec<(Label, f64)>,
}

impl LabelWeightTally {
    pub fn at(&self, pixel: usize) -> &[(Label, f64)] {
        match self.spans.get(pixel) {
            Some(&(start, len)) => &self.entries[start..start + len],
            None => &[],
        }
    }

    pub fn at_xy(&self, x: usize, y: usize) -> &[(Label, f64)] {
        self.at(y * self.width + x)
    }
}

/// Set of Gaussian indices that contributed to at least one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibleSet {
    flags: Vec<bool>,
}

impl VisibleSet {
    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut flags = vec![false; len];
        for i in indices {
            if i < len {
                flags[i] = true;
            }
        }
        Self { flags }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.flags.get(index).copied().unwrap_or(false)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i)
    }

    pub fn len(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|&f| f)
    }
}

pub struct LabelRender {
    /// RGB, depth and transmittance. Contributor sequences are not retained.
    pub frame: FrameRender,
    pub labels: LabelMap,
    pub topk: TopKContributorMatrix,
    pub tally: LabelWeightTally,
    pub visible: VisibleSet,
}

#[derive(Default)]
struct VoteTile {
    pixels: Vec<(usize, crate::render::PixelOut)>,
    winners: Vec<Label>,
    topk_spans: Vec<(usize, usize)>,
    topk: Vec<TopKEntry>,
    tally_spans: Vec<(usize, usize)>,
    tally: Vec<(Label, f64)>,
    visible: Vec<usize>,
}

fn top_k_of(contributors: &[PixelContributor], k: usize, out: &mut Vec<TopKEntry>) {
    let start = out.len();
    out.extend(contributors.iter().map(|c| TopKEntry {
        gaussian_index: c.gaussian_index,
        label: c.label,
        weight: c.weight,
    }));
    // stable: equal weights keep depth order
    out[start..].sort_by(|a, b| b.weight.total_cmp(&a.weight));
    out.truncate(start + k.min(contributors.len()));
}

/// Renders the frame and elects a label per pixel.
pub fn render_label_map(
    scene: &GaussianScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
    k: usize,
) -> Result<LabelRender> {
    if k == 0 {
        return Err(Error::Config("top-K must be at least 1".into()));
    }
    let prep = Prepared::new(scene, pose, intrinsics, config)?;
    let tiles = prep.composite(config, true, |out: &mut VoteTile, p, px, contributors| {
        out.pixels.push((p, *px));
        let vote = vote_pixel(contributors.iter().map(|c| (c.label, c.alpha)));
        let winner = if 1.0 - vote.transmittance < MIN_LABEL_COVERAGE {
            BACKGROUND
        } else {
            vote.winner
        };
        out.winners.push(winner);
        let t0 = out.topk.len();
        top_k_of(contributors, k, &mut out.topk);
        out.topk_spans.push((t0, out.topk.len() - t0));
        out.tally_spans.push((out.tally.len(), vote.tally.len()));
        out.tally.extend(vote.tally);
        out.visible.extend(contributors.iter().map(|c| c.gaussian_index));
    });

    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut labels = LabelMap::filled(w, h, BACKGROUND);
    let mut topk_spans = vec![(0, 0); w * h];
    let mut topk_entries = Vec::new();
    let mut tally_spans = vec![(0, 0); w * h];
    let mut tally_entries = Vec::new();
    let mut visible = vec![false; scene.len()];
    let mut pixel_outs = Vec::with_capacity(tiles.len());
    for tile in tiles {
        let tk_base = topk_entries.len();
        let ty_base = tally_entries.len();
        for (i, &(p, _)) in tile.pixels.iter().enumerate() {
            labels.as_mut_slice()[p] = tile.winners[i];
            let (s, n) = tile.topk_spans[i];
            topk_spans[p] = (tk_base + s, n);
            let (s, n) = tile.tally_spans[i];
            tally_spans[p] = (ty_base + s, n);
        }
        topk_entries.extend(tile.topk);
        tally_entries.extend(tile.tally);
        for g in tile.visible {
            visible[g] = true;
        }
        pixel_outs.push(tile.pixels);
    }
    let frame = assemble_frame(w, h, pixel_outs);
    Ok(LabelRender {
        frame,
        labels,
        topk: TopKContributorMatrix {
            width: w,
            height: h,
            k,
            spans: topk_spans,
            entries: topk_entries,
        },
        tally: LabelWeightTally {
            width: w,
            spans: tally_spans,
            entries: tally_entries,
        },
        visible: VisibleSet { flags: visible },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RelabelCommand {
    pub pixel: usize,
    pub from: Label,
    pub to: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelabelReport {
    pub relabeled: BTreeSet<usize>,
    /// Commands for which no matching Gaussian was found.
    pub skipped: usize,
}

/// Relabels, for each command, the Gaussians recorded in `topk` at the
/// command's pixel that currently carry `from`.
pub fn relabel_via_topk(
    scene: &mut GaussianScene,
    topk: &TopKContributorMatrix,
    commands: &[RelabelCommand],
) -> Result<RelabelReport> {
    let npx = topk.width * topk.height;
    if let Some(bad) = commands.iter().find(|c| c.pixel >= npx) {
        return Err(Error::PixelOutOfBounds {
            x: bad.pixel % topk.width.max(1),
            y: bad.pixel / topk.width.max(1),
            width: topk.width,
            height: topk.height,
        });
    }
    // Targets resolved against the labels as they stand before this batch.
    let mut targets: BTreeMap<Label, BTreeSet<usize>> = BTreeMap::new();
    let mut assigned: BTreeMap<usize, Label> = BTreeMap::new();
    let mut skipped = 0;
    for cmd in commands {
        if cmd.from == cmd.to {
            continue;
        }
        let mut hit = false;
        for e in topk.at(cmd.pixel) {
            let Some(g) = scene.gaussians().get(e.gaussian_index) else {
                return Err(Error::IndexOutOfRange {
                    index: e.gaussian_index,
                    len: scene.len(),
                });
            };
            if g.label == cmd.from && !assigned.contains_key(&e.gaussian_index) {
                assigned.insert(e.gaussian_index, cmd.to);
                targets.entry(cmd.to).or_default().insert(e.gaussian_index);
                hit = true;
            } else if g.label == cmd.from {
                hit = true;
            }
        }
        if !hit {
            skipped += 1;
        }
    }
    for (target, ids) in &targets {
        scene.relabel(ids, *target)?;
    }
    Ok(RelabelReport {
        relabeled: assigned.into_keys().collect(),
        skipped,
    })
}

/// Fraction of each label's Gaussians that are visible in this view.
pub fn compute_completeness(scene: &GaussianScene, visible: &VisibleSet) -> BTreeMap<Label, f64> {
    let mut totals: BTreeMap<Label, (usize, usize)> = BTreeMap::new();
    for (i, g) in scene.gaussians().iter().enumerate() {
        let e = totals.entry(g.label).or_default();
        e.1 += 1;
        if visible.contains(i) {
            e.0 += 1;
        }
    }
    totals
        .into_iter()
        .map(|(l, (v, n))| (l, v as f64 / n as f64))
        .collect()
}

/// Cov_r: each pixel takes the completeness of its rendered label.
/// Background pixels read 1.0.
pub fn coverage_ratio_map(
    rendered: &LabelMap,
    completeness: &BTreeMap<Label, f64>,
) -> Result<ScalarImage> {
    let mut out = ScalarImage::filled(rendered.width(), rendered.height(), 1.0);
    for (dst, &l) in out.as_mut_slice().iter_mut().zip(rendered.as_slice()) {
        if l != BACKGROUND {
            *dst = *completeness.get(&l).ok_or(Error::MissingCompleteness(l))?;
        }
    }
    Ok(out)
}
