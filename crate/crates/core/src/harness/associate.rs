use std::collections::BTreeMap;

use crate::raster::LabelMap;
use crate::scene::{ClassEntry, Label, LabelClassTable, BACKGROUND};

use super::formats::Detection;

/// Detections must overlap a label's box by more than this IoU to name it.
pub const MIN_DETECTION_IOU: f64 = 0.5;

/// Tight `[x0, y0, x1, y1)` box of every nonzero label.
pub fn label_bboxes(map: &LabelMap) -> BTreeMap<Label, [f64; 4]> {
    let mut boxes: BTreeMap<Label, [usize; 4]> = BTreeMap::new();
    for (i, &l) in map.as_slice().iter().enumerate() {
        if l == BACKGROUND {
            continue;
        }
        let (x, y) = map.coords_of(i);
        let b = boxes.entry(l).or_insert([x, y, x, y]);
        b[0] = b[0].min(x);
        b[1] = b[1].min(y);
        b[2] = b[2].max(x);
        b[3] = b[3].max(y);
    }
    boxes
        .into_iter()
        .map(|(l, [x0, y0, x1, y1])| (l, [x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64]))
        .collect()
}

pub fn bbox_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Names each input label after the detection whose box best overlaps the
/// label's tight box, or `None`/0.0 when no detection clears the IoU bar.
pub fn associate_detections(map: &LabelMap, detections: &[Detection]) -> LabelClassTable {
    let mut table = LabelClassTable::new();
    for (label, bbox) in label_bboxes(map) {
        let best = detections
            .iter()
            .map(|d| (bbox_iou(&bbox, &d.bbox), d))
            .fold(None::<(f64, &Detection)>, |acc, cur| match acc {
                Some((iou, _)) if iou >= cur.0 => acc,
                _ => Some(cur),
            });
        let entry = match best {
            Some((iou, d)) if iou > MIN_DETECTION_IOU => ClassEntry::new(d.class_name.clone(), d.score),
            _ => ClassEntry::none(),
        };
        table.insert(label, entry);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(name: &str, bbox: [f64; 4]) -> Detection {
        Detection {
            class_name: name.into(),
            score: 0.9,
            bbox,
        }
    }

    /// Label 1 occupies x∈[0,10), y∈[0,10) of a 20×20 map.
    fn map() -> LabelMap {
        LabelMap::from_fn(20, 20, |x, y| if x < 10 && y < 10 { 1 } else { 0 })
    }

    #[test]
    fn perfect_box_is_named() {
        let t = associate_detections(&map(), &[det("chair", [0.0, 0.0, 10.0, 10.0])]);
        assert_eq!(t.get(1), ClassEntry::new("chair", 0.9));
    }

    #[test]
    fn weak_overlap_gives_none() {
        // 40 / 100 overlap, union 100 → IoU 0.4
        let t = associate_detections(&map(), &[det("chair", [0.0, 0.0, 10.0, 4.0])]);
        assert!(t.get(1).is_none());
        assert_eq!(t.get(1).score, 0.0);
    }

    #[test]
    fn best_iou_wins() {
        let d06 = det("table", [0.0, 0.0, 10.0, 6.0]);
        let d08 = det("lamp", [0.0, 0.0, 10.0, 8.0]);
        assert!((bbox_iou(&[0.0, 0.0, 10.0, 10.0], &d06.bbox) - 0.6).abs() < 1e-12);
        let t = associate_detections(&map(), &[d06, d08]);
        assert_eq!(t.get(1).class_name, "lamp");
    }
}
