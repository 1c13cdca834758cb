//! Removal of oversized Gaussians that bleed a label across the boundary of
//! a fully matched segment.
//!
//! For a matched pair the pixels where exactly one of the two masks is set
//! are suspect. Gaussians recorded in the top-K contributors at those pixels
//! with the rendered label are counter candidates; candidates whose largest
//! scale axis exceeds the threshold are deleted.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::scene::{GaussianScene, Label};
use crate::voting::TopKContributorMatrix;

/// Indices refer to the scene as it was before removal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneReport {
    pub counter_candidates: BTreeSet<usize>,
    pub pruned: BTreeSet<usize>,
    /// Max scale of each pruned Gaussian at prune time.
    pub pruned_max_scale: BTreeMap<usize, f64>,
}

impl PruneReport {
    fn absorb(&mut self, other: PruneReport) {
        self.counter_candidates.extend(other.counter_candidates);
        self.pruned.extend(other.pruned);
        self.pruned_max_scale.extend(other.pruned_max_scale);
    }
}

/// `(a ∪ b) \ (a ∩ b)` for two ascending pixel-index lists.
pub fn symmetric_difference_pixels(mask_s: &[usize], mask_r: &[usize]) -> Vec<usize> {
    let a: BTreeSet<usize> = mask_s.iter().copied().collect();
    let b: BTreeSet<usize> = mask_r.iter().copied().collect();
    a.symmetric_difference(&b).copied().collect()
}

fn check_inputs(pixels: &[usize], topk: &TopKContributorMatrix, theta: f64) -> Result<()> {
    if !(theta > 0.0) {
        return Err(Error::Config(format!("prune threshold {theta} must be positive")));
    }
    let npx = topk.width() * topk.height();
    if let Some(&p) = pixels.iter().find(|&&p| p >= npx) {
        return Err(Error::PixelOutOfBounds {
            x: p % topk.width().max(1),
            y: p / topk.width().max(1),
            width: topk.width(),
            height: topk.height(),
        });
    }
    Ok(())
}

/// Finds counter Gaussians for one pair without modifying the scene.
pub fn find_counter_gaussians(
    scene: &GaussianScene,
    pixels: &[usize],
    rendered_label: Label,
    topk: &TopKContributorMatrix,
    theta: f64,
) -> Result<PruneReport> {
    check_inputs(pixels, topk, theta)?;
    let gaussians = scene.gaussians();
    let mut report = PruneReport::default();
    for &p in pixels {
        for e in topk.at(p) {
            let g = gaussians.get(e.gaussian_index).ok_or(Error::IndexOutOfRange {
                index: e.gaussian_index,
                len: gaussians.len(),
            })?;
            if g.label != rendered_label || !report.counter_candidates.insert(e.gaussian_index) {
                continue;
            }
            let s = g.max_scale();
            if s > theta {
                report.pruned.insert(e.gaussian_index);
                report.pruned_max_scale.insert(e.gaussian_index, s);
            }
        }
    }
    Ok(report)
}

/// Prunes counter Gaussians of one pair and removes them from the scene.
pub fn counter_prune(
    scene: &mut GaussianScene,
    pixels: &[usize],
    rendered_label: Label,
    topk: &TopKContributorMatrix,
    theta: f64,
) -> Result<PruneReport> {
    let report = find_counter_gaussians(scene, pixels, rendered_label, topk, theta)?;
    scene.remove_gaussians(&report.pruned)?;
    Ok(report)
}

/// Prunes for several pairs at once. Candidates are collected against the
/// unmodified scene so that indices in `topk` stay valid, then removed once.
pub fn counter_prune_pairs(
    scene: &mut GaussianScene,
    pairs: &[(Vec<usize>, Label)],
    topk: &TopKContributorMatrix,
    theta: f64,
) -> Result<PruneReport> {
    let mut report = PruneReport::default();
    for (pixels, label) in pairs {
        report.absorb(find_counter_gaussians(scene, pixels, *label, topk, theta)?);
    }
    scene.remove_gaussians(&report.pruned)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{LabeledGaussian, DEFAULT_MAX_LABELS};
    use crate::voting::TopKEntry;
    use nalgebra::{Quaternion, Vector3};

    fn gaussian(scale: [f64; 3], label: Label) -> LabeledGaussian {
        LabeledGaussian {
            position: Vector3::zeros(),
            scale: Vector3::from(scale),
            rotation: Quaternion::identity(),
            opacity: 0.9,
            color: Vector3::new(0.5, 0.5, 0.5),
            label,
        }
    }

    /// 2×1 image; every pixel lists every Gaussian.
    fn topk_all(n: usize, scene: &GaussianScene) -> TopKContributorMatrix {
        let px: Vec<TopKEntry> = (0..n)
            .map(|i| TopKEntry {
                gaussian_index: i,
                label: scene.gaussians()[i].label,
                weight: 0.1,
            })
            .collect();
        TopKContributorMatrix::from_pixels(2, 1, 50, vec![px.clone(), px]).unwrap()
    }

    #[test]
    fn symmetric_difference_cases() {
        assert!(symmetric_difference_pixels(&[1, 2, 3], &[1, 2, 3]).is_empty());
        assert_eq!(symmetric_difference_pixels(&[1, 2], &[5, 6]), vec![1, 2, 5, 6]);
        let s = symmetric_difference_pixels(&[2, 3], &[1, 2, 3, 4]);
        assert_eq!(s, vec![1, 4]);
    }

    #[test]
    fn threshold_test() {
        let mut scene = GaussianScene::from_gaussians(
            vec![gaussian([0.5, 0.01, 0.01], 1), gaussian([0.2, 0.2, 0.2], 1)],
            DEFAULT_MAX_LABELS,
        )
        .unwrap();
        let topk = topk_all(2, &scene);
        let r = find_counter_gaussians(&scene, &[0], 1, &topk, 0.25).unwrap();
        assert_eq!(r.pruned, BTreeSet::from([0]));
        assert_eq!(r.counter_candidates, BTreeSet::from([0, 1]));

        let r = counter_prune(&mut scene, &[0, 1], 1, &topk, 0.10).unwrap();
        assert_eq!(r.pruned, BTreeSet::from([0, 1]));
        assert_eq!(r.pruned_max_scale[&0], 0.5);
        assert!(scene.is_empty());
    }

    #[test]
    fn other_labels_are_not_candidates() {
        let mut scene =
            GaussianScene::from_gaussians(vec![gaussian([0.5, 0.5, 0.5], 2)], DEFAULT_MAX_LABELS).unwrap();
        let topk = topk_all(1, &scene);
        let r = counter_prune(&mut scene, &[0, 1], 1, &topk, 0.1).unwrap();
        assert!(r.counter_candidates.is_empty());
        assert_eq!(scene.len(), 1);
    }

    #[test]
    fn empty_set_and_bad_input() {
        let mut scene =
            GaussianScene::from_gaussians(vec![gaussian([0.5, 0.5, 0.5], 1)], DEFAULT_MAX_LABELS).unwrap();
        let topk = topk_all(1, &scene);
        assert_eq!(counter_prune(&mut scene, &[], 1, &topk, 0.1).unwrap(), PruneReport::default());
        assert!(counter_prune(&mut scene, &[2], 1, &topk, 0.1).is_err());
        assert!(counter_prune(&mut scene, &[0], 1, &topk, 0.0).is_err());
        assert_eq!(scene.len(), 1);
    }

    #[test]
    fn multi_pair_removes_once() {
        let mut scene = GaussianScene::from_gaussians(
            vec![gaussian([0.5, 0.1, 0.1], 1), gaussian([0.05; 3], 1), gaussian([0.4, 0.1, 0.1], 2)],
            DEFAULT_MAX_LABELS,
        )
        .unwrap();
        let topk = topk_all(3, &scene);
        let r = counter_prune_pairs(&mut scene, &[(vec![0], 1), (vec![1], 2), (vec![0], 1)], &topk, 0.1).unwrap();
        assert_eq!(r.pruned, BTreeSet::from([0, 2]));
        assert_eq!(scene.len(), 1);
        assert_eq!(scene.gaussians()[0].max_scale(), 0.05);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn small_gaussians_survive(scales in prop::collection::vec((0.001f64..0.3, 0.001f64..0.3, 0.001f64..0.3), 1..20), theta in 0.05f64..0.3) {
                let gs: Vec<_> = scales.iter().map(|&(a, b, c)| gaussian([a, b, c], 1)).collect();
                let scene = GaussianScene::from_gaussians(gs.clone(), DEFAULT_MAX_LABELS).unwrap();
                let topk = topk_all(gs.len(), &scene);
                let r = find_counter_gaussians(&scene, &[0, 1], 1, &topk, theta).unwrap();
                prop_assert!(r.pruned.is_subset(&r.counter_candidates));
                for (i, g) in gs.iter().enumerate() {
                    prop_assert_eq!(r.pruned.contains(&i), g.max_scale() > theta);
                }
            }
        }
    }
}
