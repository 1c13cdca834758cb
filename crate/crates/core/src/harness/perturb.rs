//! Simulated class-agnostic segmenter: turns a ground-truth label map into
//! the kind of view-inconsistent segmentation a real model produces.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::InputSegmentation;
use crate::error::{Error, Result};
use crate::raster::LabelMap;
use crate::scene::{Label, LabelClassTable, BACKGROUND};

/// Per-segment confidence: `base + part_bias·[segment is a part] + U(−noise, noise)`,
/// clamped to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub base: f64,
    pub noise: f64,
    pub part_bias: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self {
            base: 0.8,
            noise: 0.0,
            part_bias: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub permute_labels: bool,
    pub oversegment_prob: f64,
    /// Inclusive range of the number of parts an over-segmented object splits into.
    pub split_parts: (usize, usize),
    pub merge_prob: f64,
    pub confidence: ConfidenceModel,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            permute_labels: false,
            oversegment_prob: 0.0,
            split_parts: (2, 4),
            merge_prob: 0.0,
            confidence: ConfidenceModel::default(),
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("oversegment_prob", self.oversegment_prob), ("merge_prob", self.merge_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.split_parts;
        if lo < 2 || hi < lo {
            return Err(Error::Config(format!("split_parts ({lo}, {hi}) must satisfy 2 ≤ lo ≤ hi")));
        }
        let c = &self.confidence;
        if !(0.0..=1.0).contains(&c.base) || !(0.0..=1.0).contains(&c.noise) || !c.part_bias.is_finite() {
            return Err(Error::Config("confidence model out of range".into()));
        }
        Ok(())
    }
}

/// Ground-truth objects sharing at least one 4-neighbour pixel edge.
fn adjacency(map: &LabelMap) -> BTreeSet<(Label, Label)> {
    let mut adj = BTreeSet::new();
    let (w, h) = map.dims();
    for y in 0..h {
        for x in 0..w {
            let a = *map.get(x, y);
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx < w && ny < h {
                    let b = *map.get(nx, ny);
                    if a != b && a != BACKGROUND && b != BACKGROUND {
                        adj.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    }
    adj
}

/// Splits `pixels` into `parts` equal-area bands along a random direction.
fn split_pixels(map: &LabelMap, pixels: &[usize], parts: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut keyed: Vec<(f64, usize)> = pixels
        .iter()
        .map(|&p| {
            let (x, y) = map.coords_of(p);
            (x as f64 * dx + y as f64 * dy, p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = keyed.len();
    (0..parts)
        .map(|k| keyed[k * n / parts..(k + 1) * n / parts].iter().map(|&(_, p)| p).collect())
        .filter(|v: &Vec<usize>| !v.is_empty())
        .collect()
}

/// Deterministic per `(spec.seed, frame_index)`. The returned table is empty.
pub fn perturb_segmentation(gt_map: &LabelMap, spec: &PerturbationSpec, frame_index: usize) -> Result<InputSegmentation> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(frame_index as u64);

    let objects = gt_map.labels();
    let mut support: BTreeMap<Label, Vec<usize>> = objects.iter().map(|&l| (l, Vec::new())).collect();
    for (i, &l) in gt_map.as_slice().iter().enumerate() {
        if l != BACKGROUND {
            support.get_mut(&l).expect("label listed").push(i);
        }
    }

    // Merge: each object may absorb its smallest adjacent, still unmerged neighbour.
    let adj = adjacency(gt_map);
    let mut merged_into: BTreeMap<Label, Label> = BTreeMap::new();
    let mut groups: Vec<Vec<Label>> = Vec::new();
    for &o in &objects {
        if merged_into.contains_key(&o) {
            continue;
        }
        let mut group = vec![o];
        if spec.merge_prob > 0.0 && rng.random_bool(spec.merge_prob) {
            let partner = objects
                .iter()
                .copied()
                .find(|&b| b != o && !merged_into.contains_key(&b) && adj.contains(&(o.min(b), o.max(b))));
            if let Some(b) = partner {
                merged_into.insert(b, o);
                group.push(b);
            }
        }
        merged_into.insert(o, o);
        groups.push(group);
    }

    // Segments as (pixels, is_part).
    let mut segments: Vec<(Vec<usize>, bool)> = Vec::new();
    for group in groups {
        let mut pixels: Vec<usize> = group.iter().flat_map(|l| support[l].iter().copied()).collect();
        pixels.sort_unstable();
        let split = group.len() == 1 && spec.oversegment_prob > 0.0 && rng.random_bool(spec.oversegment_prob);
        if split {
            let parts = rng.random_range(spec.split_parts.0..=spec.split_parts.1);
            let pieces = split_pixels(gt_map, &pixels, parts, &mut rng);
            let is_part = pieces.len() > 1;
            segments.extend(pieces.into_iter().map(|p| (p, is_part)));
        } else {
            segments.push((pixels, false));
        }
    }

    let mut ids: Vec<Label> = (1..=segments.len() as Label).collect();
    if spec.permute_labels {
        ids.shuffle(&mut rng);
    }
    let c = spec.confidence;
    let mut map = LabelMap::filled(gt_map.width(), gt_map.height(), BACKGROUND);
    let mut confidences = BTreeMap::new();
    for ((pixels, is_part), &id) in segments.iter().zip(&ids) {
        for &p in pixels {
            map.as_mut_slice()[p] = id;
        }
        let noise = if c.noise > 0.0 { rng.random_range(-c.noise..=c.noise) } else { 0.0 };
        let bias = if *is_part { c.part_bias } else { 0.0 };
        confidences.insert(id, (c.base + bias + noise).clamp(0.0, 1.0));
    }
    InputSegmentation::new(map, confidences, LabelClassTable::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::compute_miou_acc;

    fn gt() -> LabelMap {
        LabelMap::from_fn(24, 12, |x, y| match (x, y) {
            (1..=7, 1..=9) => 3,
            (8..=14, 2..=8) => 5,
            (17..=22, 3..=10) => 9,
            _ => 0,
        })
    }

    #[test]
    fn identity_up_to_rename() {
        let spec = PerturbationSpec {
            permute_labels: true,
            seed: 4,
            ..Default::default()
        };
        let seg = perturb_segmentation(&gt(), &spec, 2).unwrap();
        assert_eq!(compute_miou_acc(&seg.label_map, &gt()).unwrap(), (1.0, 1.0));
        assert!(seg.confidences.values().all(|&c| c == 0.8));
    }

    #[test]
    fn forced_split_in_two() {
        let spec = PerturbationSpec {
            oversegment_prob: 1.0,
            split_parts: (2, 2),
            ..Default::default()
        };
        let seg = perturb_segmentation(&gt(), &spec, 0).unwrap();
        assert_eq!(seg.label_map.labels().len(), 6);
        for obj in [3, 5, 9] {
            let parts: BTreeSet<Label> = gt()
                .support(obj)
                .into_iter()
                .map(|p| seg.label_map.as_slice()[p])
                .collect();
            assert_eq!(parts.len(), 2);
        }
    }

    #[test]
    fn forced_merge_joins_neighbours() {
        let spec = PerturbationSpec {
            merge_prob: 1.0,
            ..Default::default()
        };
        let seg = perturb_segmentation(&gt(), &spec, 0).unwrap();
        // 3 and 5 touch; 9 is isolated
        assert_eq!(seg.label_map.labels().len(), 2);
    }

    #[test]
    fn deterministic_per_frame() {
        let spec = PerturbationSpec {
            permute_labels: true,
            oversegment_prob: 0.5,
            merge_prob: 0.3,
            confidence: ConfidenceModel {
                base: 0.7,
                noise: 0.1,
                part_bias: 0.1,
            },
            seed: 11,
            ..Default::default()
        };
        for f in 0..5 {
            assert_eq!(
                perturb_segmentation(&gt(), &spec, f).unwrap(),
                perturb_segmentation(&gt(), &spec, f).unwrap()
            );
        }
        let bad = PerturbationSpec {
            merge_prob: 1.5,
            ..Default::default()
        };
        assert!(perturb_segmentation(&gt(), &bad, 0).is_err());
    }
}
