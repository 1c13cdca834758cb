use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::raster::LabelMap;
use crate::scene::{Label, BACKGROUND};

/// Greedy one-to-one matching of predicted to ground-truth labels by
/// descending intersection. Background is never matched.
pub fn match_labels(pred: &LabelMap, gt: &LabelMap) -> Result<BTreeMap<Label, Label>> {
    pred.ensure_same_dims(gt)?;
    let mut inter: BTreeMap<(Label, Label), usize> = BTreeMap::new();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if p != BACKGROUND && g != BACKGROUND {
            *inter.entry((p, g)).or_default() += 1;
        }
    }
    let mut pairs: Vec<((Label, Label), usize)> = inter.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut matched = BTreeMap::new();
    let mut used_gt = BTreeSet::new();
    for ((p, g), _) in pairs {
        if !matched.contains_key(&p) && used_gt.insert(g) {
            matched.insert(p, g);
        }
    }
    Ok(matched)
}

/// `(mIoU, Acc)`. mIoU averages over nonzero ground-truth labels; with none
/// present it is 1 if the prediction is also empty, else 0. Acc counts all
/// pixels whose matched prediction equals the ground truth.
pub fn compute_miou_acc(pred: &LabelMap, gt: &LabelMap) -> Result<(f64, f64)> {
    let matched = match_labels(pred, gt)?;
    let translate = |p: Label| -> Option<Label> {
        if p == BACKGROUND {
            Some(BACKGROUND)
        } else {
            matched.get(&p).copied()
        }
    };
    let mut inter: BTreeMap<Label, usize> = BTreeMap::new();
    let mut gt_area: BTreeMap<Label, usize> = BTreeMap::new();
    let mut pred_area: BTreeMap<Label, usize> = BTreeMap::new();
    let mut correct = 0usize;
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let t = translate(p);
        if t == Some(g) {
            correct += 1;
        }
        if g != BACKGROUND {
            *gt_area.entry(g).or_default() += 1;
            if t == Some(g) {
                *inter.entry(g).or_default() += 1;
            }
        }
        if let Some(t) = t.filter(|&t| t != BACKGROUND) {
            *pred_area.entry(t).or_default() += 1;
        }
    }
    let acc = if pred.is_empty() { 1.0 } else { correct as f64 / pred.len() as f64 };
    if gt_area.is_empty() {
        let empty = pred.as_slice().iter().all(|&p| p == BACKGROUND);
        return Ok((if empty { 1.0 } else { 0.0 }, acc));
    }
    let miou = gt_area
        .iter()
        .map(|(g, &a)| {
            let i = inter.get(g).copied().unwrap_or(0);
            let u = a + pred_area.get(g).copied().unwrap_or(0) - i;
            i as f64 / u as f64
        })
        .sum::<f64>()
        / gt_area.len() as f64;
    Ok((miou, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt() -> LabelMap {
        LabelMap::from_fn(8, 4, |x, _| match x {
            0..=2 => 1,
            3..=5 => 2,
            _ => 0,
        })
    }

    #[test]
    fn identity_and_permutation() {
        assert_eq!(compute_miou_acc(&gt(), &gt()).unwrap(), (1.0, 1.0));
        let renamed = gt().map(|&l| [0, 40, 17][l as usize]);
        assert_eq!(compute_miou_acc(&renamed, &gt()).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn empty_prediction() {
        let (miou, acc) = compute_miou_acc(&LabelMap::filled(8, 4, 0), &gt()).unwrap();
        assert_eq!(miou, 0.0);
        assert_eq!(acc, 0.25);
        assert!(compute_miou_acc(&LabelMap::filled(8, 3, 0), &gt()).is_err());
    }

    #[test]
    fn split_object() {
        // object 1 split into two predicted labels of 2 and 1 columns
        let pred = gt().map(|&l| l).clone();
        let pred = LabelMap::from_fn(8, 4, |x, y| if x == 2 { 9 } else { *pred.get(x, y) });
        let (miou, _) = compute_miou_acc(&pred, &gt()).unwrap();
        assert!((miou - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bounded(p in prop::collection::vec(0u32..4, 32), g in prop::collection::vec(0u32..4, 32)) {
            let p = LabelMap::from_vec(8, 4, p).unwrap();
            let g = LabelMap::from_vec(8, 4, g).unwrap();
            let (m, a) = compute_miou_acc(&p, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&a));
        }
    }
}
