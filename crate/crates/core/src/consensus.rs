//! Confidence-based reconciliation of an incoming segmentation with the
//! labels rendered from the map.
//!
//! Every input label is classified against the rendered labels by pixel
//! overlap as a full match, a part of one rendered label, a whole made of
//! several rendered labels, a new object, or background. Part/whole
//! conflicts are arbitrated by comparing the confidence of one side with the
//! area-weighted confidence of the other. The result is a label mapping for
//! the input map, relabel commands for the scene, and confidence updates.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use crate::error::{Error, Result};
use crate::raster::{LabelMap, ScalarImage};
use crate::scene::{Label, LabelClassTable, LabelRegistry, BACKGROUND};
use crate::voting::{RelabelCommand, TopKContributorMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsensusParams {
    /// Mutual overlap ratio required for a full match.
    pub tau1: f64,
    /// Containment ratio for part/whole relations.
    pub tau2: f64,
    /// Overlap below which an input label is new.
    pub tau3: f64,
    /// Confidence decay applied to part labels.
    pub delta: f64,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        Self {
            tau1: 0.85,
            tau2: 0.9,
            tau3: 0.1,
            delta: 0.06,
        }
    }
}

impl ConsensusParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau1", self.tau1), ("tau2", self.tau2), ("tau3", self.tau3), ("delta", self.delta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One frame of 2D segmentation: label map, per-label confidence and the
/// label-class table produced for it.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSegmentation {
    pub label_map: LabelMap,
    pub confidences: BTreeMap<Label, f64>,
    pub table: LabelClassTable,
}

impl InputSegmentation {
    pub fn new(label_map: LabelMap, confidences: BTreeMap<Label, f64>, table: LabelClassTable) -> Result<Self> {
        let seg = Self {
            label_map,
            confidences,
            table,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        for l in self.label_map.labels() {
            match self.confidences.get(&l) {
                None => return Err(Error::Config(format!("input label {l} has no confidence"))),
                Some(c) if !(0.0..=1.0).contains(c) => {
                    return Err(Error::Config(format!("input label {l} confidence {c} outside [0, 1]")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn confidence(&self, label: Label) -> f64 {
        self.confidences.get(&label).copied().unwrap_or(0.0)
    }

    /// Per-pixel expansion of the label confidences; background reads 0.
    pub fn confidence_map(&self) -> ScalarImage {
        self.label_map.map(|&l| if l == BACKGROUND { 0.0 } else { self.confidence(l) })
    }
}

/// Scales each input confidence by the mean coverage ratio over its pixels.
pub fn update_input_confidence(input: &InputSegmentation, cov_r: &ScalarImage) -> Result<InputSegmentation> {
    input.label_map.ensure_same_dims(cov_r)?;
    let mut sums: BTreeMap<Label, (f64, usize)> = BTreeMap::new();
    for (&l, &cov) in input.label_map.as_slice().iter().zip(cov_r.as_slice()) {
        if l == BACKGROUND {
            continue;
        }
        let e = sums.entry(l).or_default();
        e.0 += cov;
        e.1 += 1;
    }
    // mean(Cov·C) = C·mean(Cov) since C is constant over the label
    let mut out = input.clone();
    for (l, (sum, n)) in sums {
        out.confidences.insert(l, (input.confidence(l) * (sum / n as f64)).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Pixel co-occurrence between an input and a rendered label map.
/// Background is excluded on both sides.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OverlapStats {
    pub input_area: BTreeMap<Label, usize>,
    pub rendered_area: BTreeMap<Label, usize>,
    /// Keyed by (input label, rendered label).
    pub intersections: BTreeMap<(Label, Label), usize>,
}

impl OverlapStats {
    pub fn intersection(&self, input: Label, rendered: Label) -> usize {
        self.intersections.get(&(input, rendered)).copied().unwrap_or(0)
    }

    /// Rendered labels overlapping `input`, with their intersection size.
    pub fn overlaps_of(&self, input: Label) -> impl Iterator<Item = (Label, usize)> + '_ {
        self.intersections
            .range((input, Label::MIN)..=(input, Label::MAX))
            .map(|(&(_, r), &n)| (r, n))
    }
}

pub fn overlap_stats(input_map: &LabelMap, rendered_map: &LabelMap) -> Result<OverlapStats> {
    input_map.ensure_same_dims(rendered_map)?;
    let mut stats = OverlapStats::default();
    for (&s, &r) in input_map.as_slice().iter().zip(rendered_map.as_slice()) {
        if s != BACKGROUND {
            *stats.input_area.entry(s).or_default() += 1;
        }
        if r != BACKGROUND {
            *stats.rendered_area.entry(r).or_default() += 1;
        }
        if s != BACKGROUND && r != BACKGROUND {
            *stats.intersections.entry((s, r)).or_default() += 1;
        }
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatchKind {
    FullMatch(Label),
    /// The input label is a part of this rendered label.
    PartOf(Label),
    /// The input label covers these rendered labels (ascending).
    WholeOf(Vec<Label>),
    New,
    Background,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchClassification {
    pub by_input: BTreeMap<Label, MatchKind>,
    /// Other rendered labels contained (by the `tau2` ratio) in a fully matched
    /// input; parts of the same object, keyed by input label.
    pub fragments: BTreeMap<Label, Vec<Label>>,
}

impl MatchClassification {
    pub fn get(&self, input: Label) -> Option<&MatchKind> {
        self.by_input.get(&input)
    }

    pub fn full_matches(&self) -> impl Iterator<Item = (Label, Label)> + '_ {
        self.by_input.iter().filter_map(|(&s, k)| match k {
            MatchKind::FullMatch(r) => Some((s, *r)),
            _ => None,
        })
    }
}

pub fn classify_matches(stats: &OverlapStats, params: &ConsensusParams) -> MatchClassification {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let area_s = |s: Label| stats.input_area.get(&s).copied().unwrap_or(0);
    let area_r = |r: Label| stats.rendered_area.get(&r).copied().unwrap_or(0);
    // Containment on the input side counts only pixels the map renders;
    // unrendered pixels are new surface and carry no evidence either way.
    let observed: BTreeMap<Label, usize> = stats
        .input_area
        .keys()
        .map(|&s| (s, stats.overlaps_of(s).map(|(_, n)| n).sum()))
        .collect();
    let observed_s = |s: Label| observed.get(&s).copied().unwrap_or(0);

    // Full matches first, greedily by intersection size, one-to-one.
    let mut candidates: Vec<(usize, Label, Label)> = stats
        .intersections
        .iter()
        .filter(|(&(s, r), &n)| {
            ratio(n, area_s(s)) >= params.tau3
                && ratio(n, observed_s(s)) >= params.tau1
                && ratio(n, area_r(r)) >= params.tau1
        })
        .map(|(&(s, r), &n)| (n, s, r))
        .collect();
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut by_input = BTreeMap::new();
    let mut taken = BTreeSet::new();
    for (_, s, r) in candidates {
        if by_input.contains_key(&s) || taken.contains(&r) {
            continue;
        }
        taken.insert(r);
        by_input.insert(s, MatchKind::FullMatch(r));
    }

    for (&s, &a_s) in &stats.input_area {
        if by_input.contains_key(&s) {
            continue;
        }
        let best = stats
            .overlaps_of(s)
            .fold(None::<(Label, usize)>, |acc, (r, n)| match acc {
                Some((_, bn)) if bn >= n => acc,
                _ => Some((r, n)),
            });
        let kind = match best {
            Some((r, n)) if ratio(n, a_s) >= params.tau3 => {
                let seen = observed_s(s);
                let rs = ratio(n, seen);
                let rr = ratio(n, area_r(r));
                let inside: Vec<(Label, usize)> = stats
                    .overlaps_of(s)
                    .filter(|&(r, n)| ratio(n, area_r(r)) >= params.tau2)
                    .collect();
                let covered: usize = inside.iter().map(|&(_, n)| n).sum();
                if rs >= params.tau2 && rr < params.tau1 {
                    MatchKind::PartOf(r)
                } else if !inside.is_empty() && ratio(covered, seen) >= params.tau2 {
                    MatchKind::WholeOf(inside.into_iter().map(|(r, _)| r).collect())
                } else {
                    MatchKind::Background
                }
            }
            _ => MatchKind::New,
        };
        by_input.insert(s, kind);
    }
    let mut fragments: BTreeMap<Label, Vec<Label>> = BTreeMap::new();
    for (&s, kind) in &by_input {
        if let MatchKind::FullMatch(r) = kind {
            let inside: Vec<Label> = stats
                .overlaps_of(s)
                .filter(|&(o, n)| o != *r && !taken.contains(&o) && ratio(n, area_r(o)) >= params.tau2)
                .map(|(o, _)| o)
                .collect();
            if !inside.is_empty() {
                fragments.insert(s, inside);
            }
        }
    }
    MatchClassification { by_input, fragments }
}

/// Σ cᵢ·aᵢ / Σ aᵢ over `(confidence, area)` pairs.
pub fn area_weighted_confidence(parts: &[(f64, usize)]) -> Result<f64> {
    if parts.is_empty() {
        return Err(Error::Empty("area-weighted confidence needs at least one part"));
    }
    let total: usize = parts.iter().map(|&(_, a)| a).sum();
    if total == 0 {
        return Err(Error::Empty("area-weighted confidence needs positive area"));
    }
    let weighted: f64 = parts.iter().map(|&(c, a)| c * a as f64).sum();
    Ok(weighted / total as f64)
}

/// A rendered label that lost part of its pixels to a new label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Carve {
    pub input: Label,
    pub from: Label,
    pub to: Label,
}

/// Rendered part labels merged into one target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Merge {
    pub input: Label,
    pub parts: Vec<Label>,
    pub target: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusOutcome {
    /// ℓ_s → ℓ_t for every nonzero input label.
    pub mapping: BTreeMap<Label, Label>,
    pub consistent_map: LabelMap,
    pub relabel_commands: Vec<RelabelCommand>,
    pub confidence_updates: BTreeMap<Label, f64>,
    pub new_labels: BTreeSet<Label>,
    /// Registry labels to decay.
    pub decayed_labels: BTreeSet<Label>,
    /// Input labels to decay.
    pub decayed_inputs: BTreeSet<Label>,
    pub full_matches: Vec<(Label, Label)>,
    pub carves: Vec<Carve>,
    pub merges: Vec<Merge>,
}

pub fn resolve_consensus(
    input: &InputSegmentation,
    rendered: &LabelMap,
    registry: &mut LabelRegistry,
    classification: &MatchClassification,
    topk: &TopKContributorMatrix,
) -> Result<ConsensusOutcome> {
    let map = &input.label_map;
    map.ensure_same_dims(rendered)?;
    if (topk.width(), topk.height()) != map.dims() {
        return Err(Error::DimensionMismatch {
            expected: map.dims(),
            actual: (topk.width(), topk.height()),
        });
    }
    let area_of = |m: &LabelMap| -> BTreeMap<Label, usize> {
        let mut a = BTreeMap::new();
        for &l in m.as_slice() {
            if l != BACKGROUND {
                *a.entry(l).or_default() += 1;
            }
        }
        a
    };
    let input_area = area_of(map);
    let rendered_area = area_of(rendered);
    let c_r = |reg: &LabelRegistry, l: Label| reg.confidence(l).unwrap_or(0.0);
    let support = |l: Label| map.support(l);

    let mut out = ConsensusOutcome {
        mapping: BTreeMap::new(),
        consistent_map: map.clone(),
        relabel_commands: Vec::new(),
        confidence_updates: BTreeMap::new(),
        new_labels: BTreeSet::new(),
        decayed_labels: BTreeSet::new(),
        decayed_inputs: BTreeSet::new(),
        full_matches: Vec::new(),
        carves: Vec::new(),
        merges: Vec::new(),
    };
    let raise = |updates: &mut BTreeMap<Label, f64>, l: Label, c: f64| {
        let e = updates.entry(l).or_insert(c);
        *e = e.max(c).clamp(0.0, 1.0);
    };

    let mut parts_of: BTreeMap<Label, Vec<Label>> = BTreeMap::new();
    for (&s, kind) in &classification.by_input {
        let c_s = input.confidence(s);
        match kind {
            MatchKind::FullMatch(r) => {
                out.mapping.insert(s, *r);
                out.full_matches.push((s, *r));
                raise(&mut out.confidence_updates, *r, c_r(registry, *r).max(c_s));
                // fragments are arbitrated like the parts of a whole, with the
                // matched label as target
                if let Some(frags) = classification.fragments.get(&s) {
                    let weighted: Vec<(f64, usize)> = frags
                        .iter()
                        .map(|&f| (c_r(registry, f), rendered_area.get(&f).copied().unwrap_or(0)))
                        .collect();
                    if c_s > area_weighted_confidence(&weighted)? {
                        let region = support(s);
                        for &f in frags {
                            out.relabel_commands
                                .extend(region.iter().map(|&p| RelabelCommand { pixel: p, from: f, to: *r }));
                        }
                        out.merges.push(Merge {
                            input: s,
                            parts: std::iter::once(*r).chain(frags.iter().copied()).collect(),
                            target: *r,
                        });
                    } else {
                        out.decayed_labels.extend(frags.iter().copied());
                    }
                }
            }
            MatchKind::PartOf(r) => parts_of.entry(*r).or_default().push(s),
            MatchKind::WholeOf(parts) => {
                let weighted: Vec<(f64, usize)> = parts
                    .iter()
                    .map(|&r| (c_r(registry, r), rendered_area.get(&r).copied().unwrap_or(0)))
                    .collect();
                let c_bar = area_weighted_confidence(&weighted)?;
                let target = parts
                    .iter()
                    .copied()
                    .max_by(|a, b| {
                        let (aa, ab) = (rendered_area.get(a).unwrap_or(&0), rendered_area.get(b).unwrap_or(&0));
                        aa.cmp(ab).then(b.cmp(a))
                    })
                    .expect("whole relation has parts");
                out.mapping.insert(s, target);
                if c_s > c_bar {
                    let region = support(s);
                    for &r in parts.iter().filter(|&&r| r != target) {
                        out.relabel_commands
                            .extend(region.iter().map(|&p| RelabelCommand { pixel: p, from: r, to: target }));
                    }
                    raise(&mut out.confidence_updates, target, c_r(registry, target).max(c_s));
                    out.merges.push(Merge {
                        input: s,
                        parts: parts.clone(),
                        target,
                    });
                } else {
                    out.decayed_labels.extend(parts.iter().copied());
                    out.decayed_inputs.insert(s);
                }
            }
            MatchKind::New => {
                let t = registry.allocate(c_s)?;
                out.mapping.insert(s, t);
                out.new_labels.insert(t);
            }
            MatchKind::Background => {
                out.mapping.insert(s, BACKGROUND);
            }
        }
    }

    for (r, parts) in parts_of {
        let weighted: Vec<(f64, usize)> = parts
            .iter()
            .map(|&s| (input.confidence(s), input_area.get(&s).copied().unwrap_or(0)))
            .collect();
        let c_bar = area_weighted_confidence(&weighted)?;
        let c_rj = c_r(registry, r);
        if c_rj > c_bar {
            for &s in &parts {
                out.mapping.insert(s, r);
            }
            out.decayed_inputs.extend(parts.iter().copied());
            continue;
        }
        for &s in &parts {
            let c_s = input.confidence(s);
            if c_s > c_rj {
                let t = registry.allocate(c_s)?;
                out.mapping.insert(s, t);
                out.new_labels.insert(t);
                // the freshly split label is itself a part label in the scene
                out.decayed_labels.insert(t);
                out.relabel_commands
                    .extend(support(s).into_iter().map(|p| RelabelCommand { pixel: p, from: r, to: t }));
                out.carves.push(Carve { input: s, from: r, to: t });
            } else {
                out.mapping.insert(s, r);
            }
        }
    }

    for px in out.consistent_map.as_mut_slice() {
        if *px != BACKGROUND {
            *px = out.mapping.get(px).copied().unwrap_or(BACKGROUND);
        }
    }
    Ok(out)
}

/// Relabel commands that hand background-labelled contributors at pixels
/// rendered as background to the consistent label there.
pub fn background_claims(rendered: &LabelMap, consistent: &LabelMap) -> Result<Vec<RelabelCommand>> {
    rendered.ensure_same_dims(consistent)?;
    Ok(rendered
        .as_slice()
        .iter()
        .zip(consistent.as_slice())
        .enumerate()
        .filter(|&(_, (&r, &t))| r == BACKGROUND && t != BACKGROUND)
        .map(|(pixel, (_, &to))| RelabelCommand {
            pixel,
            from: BACKGROUND,
            to,
        })
        .collect())
}

/// Something that holds per-label confidences subject to part decay.
pub trait DecayTarget {
    /// Lowers the confidence of `label` by `delta`, floored at 0.
    /// Returns false when the label is unknown.
    fn decay(&mut self, label: Label, delta: f64) -> bool;
}

impl DecayTarget for LabelRegistry {
    fn decay(&mut self, label: Label, delta: f64) -> bool {
        self.apply_decay(label, delta)
    }
}

impl DecayTarget for BTreeMap<Label, f64> {
    fn decay(&mut self, label: Label, delta: f64) -> bool {
        match self.get_mut(&label) {
            Some(c) => {
                *c = (*c - delta).max(0.0);
                true
            }
            None => false,
        }
    }
}

/// Returns the number of labels decayed.
pub fn apply_part_decay<T: DecayTarget>(store: &mut T, labels: &BTreeSet<Label>, delta: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Config(format!("decay {delta} outside [0, 1]")));
    }
    let mut applied = 0;
    for &l in labels {
        if store.decay(l, delta) {
            applied += 1;
        } else {
            warn!("part decay: label {l} unknown, skipped");
        }
    }
    Ok(applied)
}

/// Folds the input label-class table into the global one through `mapping`.
/// Per target the higher detection score wins; `None` never replaces a named class.
pub fn merge_tables(global: &mut LabelClassTable, input: &LabelClassTable, mapping: &BTreeMap<Label, Label>) {
    for (s, entry) in &input.entries {
        let Some(&t) = mapping.get(s) else {
            continue;
        };
        if t == BACKGROUND || entry.is_none() {
            continue;
        }
        let replace = match global.entries.get(&t) {
            None => true,
            Some(existing) => existing.is_none() || entry.score > existing.score,
        };
        if replace {
            global.insert(t, entry.clone());
        }
    }
}
