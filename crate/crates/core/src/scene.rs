//! Labeled Gaussian scene, the label registry and the label-class table.
//!
//! Every Gaussian carries a single instance label. Label `0` is background.
//! The registry keeps one [`SegmentRecord`] per nonzero label holding the
//! map-side confidence used during consensus; ids are handed out by a
//! monotone counter and are never reused within a run.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Label = u32;

pub const BACKGROUND: Label = 0;

/// Upper bound on labels assigned during one run.
pub const DEFAULT_MAX_LABELS: u32 = 2000;

pub const NONE_CLASS: &str = "None";

const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledGaussian {
    pub position: Vector3<f64>,
    /// Per-axis standard deviations in world units.
    pub scale: Vector3<f64>,
    /// Unit quaternion, stored as (w, i, j, k).
    pub rotation: Quaternion<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub label: Label,
}

impl LabeledGaussian {
    /// Axis-aligned isotropic Gaussian.
    pub fn isotropic(
        position: Vector3<f64>,
        sigma: f64,
        opacity: f64,
        color: Vector3<f64>,
        label: Label,
    ) -> Self {
        Self {
            position,
            scale: Vector3::repeat(sigma),
            rotation: Quaternion::identity(),
            opacity,
            color,
            label,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let finite = self.position.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.opacity.is_finite();
        if !finite {
            return Err("non-finite parameter".into());
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(format!("scale {:?} must be strictly positive", self.scale.as_slice()));
        }
        let norm = self.rotation.norm();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(format!("rotation quaternion norm {norm} is not 1"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(format!("color {:?} outside [0, 1]", self.color.as_slice()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        UnitQuaternion::from_quaternion(self.rotation)
            .to_rotation_matrix()
            .into_inner()
    }

    /// Σ = R·diag(scale²)·Rᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRecord {
    /// Map-side confidence of the label, in [0, 1].
    pub confidence: f64,
    pub gaussian_count: usize,
    pub part_decay_applied: u32,
    /// Confidence at the last explicit assignment; decays count from here.
    anchor: f64,
    decays_since_anchor: u32,
}

impl SegmentRecord {
    fn new(confidence: f64) -> Self {
        let c = confidence.clamp(0.0, 1.0);
        Self {
            confidence: c,
            gaussian_count: 0,
            part_decay_applied: 0,
            anchor: c,
            decays_since_anchor: 0,
        }
    }

    fn assign(&mut self, confidence: f64) {
        self.confidence = confidence.clamp(0.0, 1.0);
        self.anchor = self.confidence;
        self.decays_since_anchor = 0;
    }

    /// After n decays since the last assignment the confidence is
    /// `max(0, c0 - n·delta)`, evaluated directly rather than accumulated.
    fn decay(&mut self, delta: f64) {
        self.decays_since_anchor += 1;
        self.part_decay_applied += 1;
        self.confidence = (self.anchor - self.decays_since_anchor as f64 * delta).max(0.0);
    }
}

/// Per-label records plus the id allocator.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRegistry {
    records: BTreeMap<Label, SegmentRecord>,
    next_label: Label,
    assigned: u32,
    max_labels: u32,
}

impl LabelRegistry {
    pub fn new(max_labels: u32) -> Self {
        Self {
            records: BTreeMap::new(),
            next_label: 1,
            assigned: 0,
            max_labels,
        }
    }

    pub fn max_labels(&self) -> u32 {
        self.max_labels
    }

    pub fn next_label(&self) -> Label {
        self.next_label
    }

    /// Number of distinct labels ever assigned in this run.
    pub fn assigned(&self) -> u32 {
        self.assigned
    }

    pub fn get(&self, label: Label) -> Option<&SegmentRecord> {
        self.records.get(&label)
    }

    pub fn contains(&self, label: Label) -> bool {
        self.records.contains_key(&label)
    }

    pub fn confidence(&self, label: Label) -> Option<f64> {
        self.records.get(&label).map(|r| r.confidence)
    }

    pub fn records(&self) -> impl Iterator<Item = (Label, &SegmentRecord)> {
        self.records.iter().map(|(&l, r)| (l, r))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Hands out a fresh label seeded with `confidence`.
    pub fn allocate(&mut self, confidence: f64) -> Result<Label> {
        let label = self.next_label;
        self.register(label, confidence)?;
        Ok(label)
    }

    fn register(&mut self, label: Label, confidence: f64) -> Result<()> {
        debug_assert_ne!(label, BACKGROUND);
        if self.records.contains_key(&label) {
            return Ok(());
        }
        if self.assigned >= self.max_labels {
            return Err(Error::LabelBudget {
                max: self.max_labels,
            });
        }
        let next = label.checked_add(1).ok_or(Error::LabelBudget {
            max: self.max_labels,
        })?;
        self.records.insert(label, SegmentRecord::new(confidence));
        self.next_label = self.next_label.max(next);
        self.assigned += 1;
        Ok(())
    }

    pub fn set_confidence(&mut self, label: Label, confidence: f64) -> Result<()> {
        let rec = self
            .records
            .get_mut(&label)
            .ok_or(Error::UnknownLabel(label))?;
        rec.assign(confidence);
        Ok(())
    }

    /// Part decay of one label; false when the label is unknown.
    pub fn apply_decay(&mut self, label: Label, delta: f64) -> bool {
        match self.records.get_mut(&label) {
            Some(rec) => {
                rec.decay(delta);
                true
            }
            None => false,
        }
    }

    fn adjust_count(&mut self, label: Label, delta: isize) {
        if label == BACKGROUND {
            return;
        }
        if let Some(rec) = self.records.get_mut(&label) {
            rec.gaussian_count = rec.gaussian_count.checked_add_signed(delta).unwrap_or(0);
        }
    }

    fn forget(&mut self, label: Label) -> Option<SegmentRecord> {
        self.records.remove(&label)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassEntry {
    pub class_name: String,
    pub score: f64,
}

impl ClassEntry {
    pub fn new(class_name: impl Into<String>, score: f64) -> Self {
        Self {
            class_name: class_name.into(),
            score,
        }
    }

    pub fn none() -> Self {
        Self::new(NONE_CLASS, 0.0)
    }

    pub fn is_none(&self) -> bool {
        self.class_name == NONE_CLASS
    }
}

/// Association from instance label to an open-set class name and detection score.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelClassTable {
    pub entries: BTreeMap<Label, ClassEntry>,
}

impl LabelClassTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Labels without an entry read as the `None` class with score 0.
    pub fn get(&self, label: Label) -> ClassEntry {
        self.entries.get(&label).cloned().unwrap_or_else(ClassEntry::none)
    }

    pub fn insert(&mut self, label: Label, entry: ClassEntry) {
        self.entries.insert(label, entry);
    }

    pub fn remove(&mut self, label: Label) -> Option<ClassEntry> {
        self.entries.remove(&label)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemoveOutcome {
    Removed(usize),
    /// Nothing carried the label; the scene is unchanged.
    UnknownLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    gaussians: Vec<LabeledGaussian>,
    registry: LabelRegistry,
    pub global_table: LabelClassTable,
}

impl Default for GaussianScene {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_LABELS)
    }
}

impl GaussianScene {
    pub fn new(max_labels: u32) -> Self {
        Self {
            gaussians: Vec::new(),
            registry: LabelRegistry::new(max_labels),
            global_table: LabelClassTable::new(),
        }
    }

    pub fn from_gaussians(gaussians: Vec<LabeledGaussian>, max_labels: u32) -> Result<Self> {
        let mut scene = Self::new(max_labels);
        scene.add_gaussians(gaussians)?;
        Ok(scene)
    }

    pub fn gaussians(&self) -> &[LabeledGaussian] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut LabelRegistry {
        &mut self.registry
    }

    /// Appends a batch. Any invalid element rejects the whole batch.
    pub fn add_gaussians(&mut self, batch: Vec<LabeledGaussian>) -> Result<()> {
        for (index, g) in batch.iter().enumerate() {
            g.validate()
                .map_err(|reason| Error::InvalidGaussian { index, reason })?;
        }
        let fresh: BTreeSet<Label> = batch
            .iter()
            .map(|g| g.label)
            .filter(|&l| l != BACKGROUND && !self.registry.contains(l))
            .collect();
        let budget = self.registry.max_labels - self.registry.assigned;
        if fresh.len() > budget as usize {
            return Err(Error::LabelBudget {
                max: self.registry.max_labels,
            });
        }
        if let Some(&top) = fresh.last() {
            if top == Label::MAX {
                return Err(Error::LabelBudget {
                    max: self.registry.max_labels,
                });
            }
        }
        for label in fresh {
            self.registry.register(label, 0.0)?;
        }
        for g in &batch {
            self.registry.adjust_count(g.label, 1);
        }
        self.gaussians.extend(batch);
        Ok(())
    }

    /// Sets the label of every listed Gaussian to `target`.
    /// Returns how many Gaussians actually changed label.
    pub fn relabel(&mut self, ids: &BTreeSet<usize>, target: Label) -> Result<usize> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.gaussians.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.gaussians.len(),
            });
        }
        if target != BACKGROUND && !self.registry.contains(target) {
            return Err(Error::UnknownLabel(target));
        }
        let mut changed = 0;
        for &i in ids {
            let old = self.gaussians[i].label;
            if old != target {
                self.registry.adjust_count(old, -1);
                self.registry.adjust_count(target, 1);
                self.gaussians[i].label = target;
                changed += 1;
            }
        }
        Ok(changed)
    }

    pub fn remove_label(&mut self, target: Label) -> Result<RemoveOutcome> {
        if target == BACKGROUND {
            return Err(Error::BackgroundRemoval);
        }
        let known = self.registry.contains(target);
        let before = self.gaussians.len();
        self.gaussians.retain(|g| g.label != target);
        let removed = before - self.gaussians.len();
        if !known && removed == 0 {
            warn!("remove_label: label {target} is not present in the scene");
            return Ok(RemoveOutcome::UnknownLabel);
        }
        self.registry.forget(target);
        self.global_table.remove(target);
        Ok(RemoveOutcome::Removed(removed))
    }

    /// Removes the Gaussians at `ids` and returns them in index order.
    /// Indices of the remaining Gaussians shift down.
    pub fn remove_gaussians(&mut self, ids: &BTreeSet<usize>) -> Result<Vec<LabeledGaussian>> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.gaussians.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.gaussians.len(),
            });
        }
        let mut removed = Vec::with_capacity(ids.len());
        let mut kept = Vec::with_capacity(self.gaussians.len() - ids.len());
        for (i, g) in std::mem::take(&mut self.gaussians).into_iter().enumerate() {
            if ids.contains(&i) {
                self.registry.adjust_count(g.label, -1);
                removed.push(g);
            } else {
                kept.push(g);
            }
        }
        self.gaussians = kept;
        Ok(removed)
    }

    /// Exact per-label Gaussian counts, background included.
    pub fn label_census(&self) -> BTreeMap<Label, usize> {
        let mut census = BTreeMap::new();
        for g in &self.gaussians {
            *census.entry(g.label).or_insert(0) += 1;
        }
        census
    }

    /// Distinct nonzero labels carried by at least one Gaussian.
    pub fn label_count(&self) -> usize {
        self.registry
            .records
            .values()
            .filter(|r| r.gaussian_count > 0)
            .count()
    }

    /// Drops registry and table entries whose labels no Gaussian carries.
    pub fn drop_empty_records(&mut self) -> Vec<Label> {
        let empty: Vec<Label> = self
            .registry
            .records
            .iter()
            .filter(|(_, r)| r.gaussian_count == 0)
            .map(|(&l, _)| l)
            .collect();
        for &l in &empty {
            self.registry.forget(l);
            self.global_table.remove(l);
        }
        empty
    }

    /// Checks the cached counts and label bookkeeping against the Gaussians.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        let census = self.label_census();
        for (&label, &count) in &census {
            if label == BACKGROUND {
                continue;
            }
            let rec = self
                .registry
                .get(label)
                .ok_or_else(|| format!("label {label} carried by Gaussians but unregistered"))?;
            if rec.gaussian_count != count {
                return Err(format!(
                    "label {label}: cached count {} but census {count}",
                    rec.gaussian_count
                ));
            }
            if label >= self.registry.next_label {
                return Err(format!("label {label} not below next_label"));
            }
        }
        for (label, rec) in self.registry.records() {
            if !census.contains_key(&label) && rec.gaussian_count != 0 {
                return Err(format!("label {label} has stale count {}", rec.gaussian_count));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(label: Label) -> LabeledGaussian {
        LabeledGaussian::isotropic(Vector3::zeros(), 0.1, 0.5, Vector3::repeat(0.5), label)
    }

    fn scene_with(labels: &[Label]) -> GaussianScene {
        GaussianScene::from_gaussians(labels.iter().map(|&l| g(l)).collect(), DEFAULT_MAX_LABELS)
            .unwrap()
    }

    #[test]
    fn add_counts_labels() {
        let scene = scene_with(&[1, 1, 2]);
        assert_eq!(scene.label_census(), BTreeMap::from([(1, 2), (2, 1)]));
        assert_eq!(scene.registry().confidence(1), Some(0.0));
        assert_eq!(scene.registry().next_label(), 3);
        scene.check_consistency().unwrap();
    }

    #[test]
    fn add_empty_batch_is_identity() {
        let mut scene = scene_with(&[1, 1, 2]);
        let before = scene.clone();
        scene.add_gaussians(vec![]).unwrap();
        assert_eq!(scene, before);
    }

    #[test]
    fn add_rejects_whole_batch_on_invalid_element() {
        let mut scene = scene_with(&[1, 1, 2]);
        let before = scene.clone();
        let mut bad = g(3);
        bad.opacity = 1.2;
        let err = scene.add_gaussians(vec![g(3), bad]).unwrap_err();
        assert!(matches!(err, Error::InvalidGaussian { index: 1, .. }));
        assert_eq!(scene, before);
    }

    #[test]
    fn invariants_checked() {
        let mut bad = g(1);
        bad.scale.x = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = g(1);
        bad.rotation = Quaternion::new(1.0, 0.01, 0.0, 0.0);
        assert!(bad.validate().is_err());
        let mut bad = g(1);
        bad.color.y = -0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relabel_moves_counts() {
        let mut scene = scene_with(&[5, 5, 5]);
        scene.registry_mut().register(9, 0.0).unwrap();
        scene.relabel(&BTreeSet::from([0, 1]), 9).unwrap();
        assert_eq!(scene.label_census(), BTreeMap::from([(5, 1), (9, 2)]));
        scene.check_consistency().unwrap();
    }

    #[test]
    fn relabel_identity_cases() {
        let mut scene = scene_with(&[5, 5, 5]);
        let before = scene.clone();
        assert_eq!(scene.relabel(&BTreeSet::new(), 5).unwrap(), 0);
        assert_eq!(scene.relabel(&BTreeSet::from([0, 2]), 5).unwrap(), 0);
        assert_eq!(scene, before);
    }

    #[test]
    fn relabel_out_of_range_is_atomic() {
        let mut scene = scene_with(&[5, 5, 5]);
        let before = scene.clone();
        let err = scene.relabel(&BTreeSet::from([0, 7]), 0).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 7, .. }));
        assert_eq!(scene, before);
    }

    #[test]
    fn relabel_round_trip_restores() {
        let mut scene = scene_with(&[1, 1, 2, 2, 2]);
        let before = scene.label_census();
        let moved = BTreeSet::from([0, 3]);
        let original: Vec<Label> = moved.iter().map(|&i| scene.gaussians()[i].label).collect();
        scene.relabel(&moved, 2).unwrap();
        for (&i, &l) in moved.iter().zip(&original) {
            scene.relabel(&BTreeSet::from([i]), l).unwrap();
        }
        assert_eq!(scene.label_census(), before);
    }

    #[test]
    fn remove_label_cases() {
        let mut scene = scene_with(&[1, 1, 2]);
        scene.global_table.insert(2, ClassEntry::new("mug", 0.7));
        assert_eq!(scene.remove_label(2).unwrap(), RemoveOutcome::Removed(1));
        assert_eq!(scene.label_census(), BTreeMap::from([(1, 2)]));
        assert!(!scene.registry().contains(2));
        assert!(scene.global_table.get(2).is_none());

        let before = scene.clone();
        assert_eq!(scene.remove_label(77).unwrap(), RemoveOutcome::UnknownLabel);
        assert_eq!(scene, before);

        assert!(matches!(scene.remove_label(0), Err(Error::BackgroundRemoval)));
    }

    #[test]
    fn census_of_empty_scene() {
        assert!(GaussianScene::default().label_census().is_empty());
    }

    #[test]
    fn budget_is_enforced() {
        let mut reg = LabelRegistry::new(2);
        reg.allocate(0.5).unwrap();
        reg.allocate(0.5).unwrap();
        assert!(matches!(reg.allocate(0.5), Err(Error::LabelBudget { max: 2 })));

        let mut scene = GaussianScene::new(2);
        assert!(scene.add_gaussians(vec![g(1), g(2), g(3)]).is_err());
        assert!(scene.is_empty());
    }

    #[test]
    fn labels_never_recycled() {
        let mut scene = scene_with(&[1, 2]);
        scene.remove_label(2).unwrap();
        let fresh = scene.registry_mut().allocate(0.3).unwrap();
        assert_eq!(fresh, 3);
    }

    #[test]
    fn covariance_is_spd() {
        let mut gauss = g(1);
        gauss.scale = Vector3::new(0.3, 0.1, 0.02);
        gauss.rotation = *UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1).quaternion();
        let cov = gauss.covariance();
        assert!((cov - cov.transpose()).norm() < 1e-12);
        let eig = cov.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Edit {
            Add(Vec<Label>),
            Relabel(Vec<usize>, Label),
            Remove(Label),
            RemoveIdx(Vec<usize>),
        }

        fn edit() -> impl Strategy<Value = Edit> {
            prop_oneof![
                prop::collection::vec(0u32..6, 0..6).prop_map(Edit::Add),
                (prop::collection::vec(0usize..40, 0..5), 0u32..6)
                    .prop_map(|(ids, l)| Edit::Relabel(ids, l)),
                (1u32..6).prop_map(Edit::Remove),
                prop::collection::vec(0usize..40, 0..4).prop_map(Edit::RemoveIdx),
            ]
        }

        proptest! {
            #[test]
            fn census_partitions_scene(edits in prop::collection::vec(edit(), 1..20)) {
                let mut scene = GaussianScene::default();
                for e in edits {
                    match e {
                        Edit::Add(ls) => scene.add_gaussians(ls.into_iter().map(g).collect()).unwrap(),
                        Edit::Relabel(ids, l) => {
                            let ids: BTreeSet<usize> = ids.into_iter().filter(|&i| i < scene.len()).collect();
                            if l == 0 || scene.registry().contains(l) {
                                scene.relabel(&ids, l).unwrap();
                            }
                        }
                        Edit::Remove(l) => {
                            scene.remove_label(l).unwrap();
                            prop_assert!(!scene.label_census().contains_key(&l));
                        }
                        Edit::RemoveIdx(ids) => {
                            let ids: BTreeSet<usize> = ids.into_iter().filter(|&i| i < scene.len()).collect();
                            scene.remove_gaussians(&ids).unwrap();
                        }
                    }
                    let total: usize = scene.label_census().values().sum();
                    prop_assert_eq!(total, scene.len());
                    prop_assert!(scene.check_consistency().is_ok());
                }
            }
        }
    }
}
