//! Prediction/ground-truth matching and the full evaluation suite: precision,
//! recall, F1, interpolated average precision, mAP50 / mAP50-95, and
//! background-aware confusion matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{ClassMap, Geometry, GroundTruthInstance};
use crate::geometry::{box_iou, mask_iou_windowed, BoundingBox, PolygonMask};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("iou threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("inputs span images {a:?} and {b:?}; match one image at a time")]
    MixedImages { a: String, b: String },
    #[error("mask IoU requested but an instance in image {image_id:?} has no mask")]
    MissingMask { image_id: String },
    #[error("thresholds must be strictly increasing, each in (0, 1)")]
    BadThresholdList,
    #[error("no class has a defined AP (no ground truth present)")]
    NoDefinedAp,
}

/// One model output: a box, an optional instance mask, and a confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_id: u32,
    pub bbox: BoundingBox,
    pub mask: Option<PolygonMask>,
    pub confidence: f64,
    pub image_id: String,
}

impl Detection {
    pub fn new(
        class_id: u32,
        bbox: BoundingBox,
        mask: Option<PolygonMask>,
        confidence: f64,
        image_id: impl Into<String>,
    ) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::BadConfidence(confidence));
        }
        Ok(Self {
            class_id,
            bbox,
            mask: mask.map(Into::into),
            confidence,
            image_id: image_id.into(),
        })
    }
}

/// Which overlap measure drives matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouKind {
    Box,
    Mask,
}

fn pair_iou(pred: &Detection, gt: &GroundTruthInstance, kind: IouKind) -> Result<f64, MetricsError> {
    match kind {
        IouKind::Box => Ok(box_iou(&pred.bbox, &gt.geometry.bounding_box())),
        IouKind::Mask => {
            let pm = pred.mask.as_ref().ok_or_else(|| MetricsError::MissingMask {
                image_id: pred.image_id.clone(),
            })?;
            let gm = match &gt.geometry {
                Geometry::Polygon(p) => p,
                Geometry::Box(_) => {
                    return Err(MetricsError::MissingMask {
                        image_id: gt.image_id.clone(),
                    })
                }
            };
            Ok(mask_iou_windowed(pm, gm))
        }
    }
}

/// A matched prediction: its confidence and the overlap it matched at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePositive {
    pub confidence: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupOutcome {
    pub true_positives: Vec<TruePositive>,
    pub false_positive_confs: Vec<f64>,
    pub false_negatives: usize,
}

/// Matching outcome, grouped by (class, image). Per class and image, every
/// prediction lands in exactly one of TP/FP and every ground truth in TP/FN,
/// so `tp + fp = |predictions|` and `tp + fn = |ground truth|`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub iou_threshold: f64,
    groups: BTreeMap<(u32, String), GroupOutcome>,
}

/// One ranked prediction for AP: did it match, at what confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    pub confidence: f64,
    pub is_tp: bool,
}

impl MatchResult {
    fn empty(iou_threshold: f64) -> Self {
        Self {
            iou_threshold,
            groups: BTreeMap::new(),
        }
    }

    pub fn class_ids(&self) -> BTreeSet<u32> {
        self.groups.keys().map(|(c, _)| *c).collect()
    }

    /// (TP, FP, FN) for one class, summed over images.
    pub fn counts(&self, class_id: u32) -> (usize, usize, usize) {
        let mut t = (0, 0, 0);
        for ((c, _), g) in &self.groups {
            if *c == class_id {
                t.0 += g.true_positives.len();
                t.1 += g.false_positive_confs.len();
                t.2 += g.false_negatives;
            }
        }
        t
    }

    pub fn totals(&self) -> (usize, usize, usize) {
        let mut t = (0, 0, 0);
        for g in self.groups.values() {
            t.0 += g.true_positives.len();
            t.1 += g.false_positive_confs.len();
            t.2 += g.false_negatives;
        }
        t
    }

    pub fn gt_count(&self, class_id: u32) -> usize {
        let (tp, _, fns) = self.counts(class_id);
        tp + fns
    }

    /// All of one class's predictions ranked for AP: descending confidence,
    /// ties broken by image id then per-image order, so the ranking does not
    /// depend on how per-image results were merged.
    pub fn ranked_records(&self, class_id: u32) -> Vec<ScoreRecord> {
        let mut records: Vec<ScoreRecord> = Vec::new();
        for ((c, _), g) in &self.groups {
            if *c != class_id {
                continue;
            }
            records.extend(g.true_positives.iter().map(|tp| ScoreRecord {
                confidence: tp.confidence,
                is_tp: true,
            }));
            records.extend(g.false_positive_confs.iter().map(|&confidence| ScoreRecord {
                confidence,
                is_tp: false,
            }));
        }
        records.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        records
    }

    /// Fold another (disjoint set of images) result into this one.
    pub fn merge(&mut self, other: MatchResult) {
        assert_eq!(
            self.iou_threshold, other.iou_threshold,
            "cannot merge results matched at different thresholds"
        );
        for (key, outcome) in other.groups {
            let entry = self.groups.entry(key).or_default();
            entry.true_positives.extend(outcome.true_positives);
            entry
                .false_positive_confs
                .extend(outcome.false_positive_confs);
            entry.false_negatives += outcome.false_negatives;
        }
    }
}

fn check_threshold(t: f64) -> Result<(), MetricsError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(MetricsError::BadThreshold(t))
    }
}

/// Greedily match one image's predictions to its ground truth. Predictions
/// are taken in descending confidence (ties: input order); each claims the
/// unmatched same-class ground truth of highest IoU at or above the
/// threshold. Whatever remains is FP / FN.
pub fn match_predictions(
    predictions: &[Detection],
    ground_truth: &[GroundTruthInstance],
    iou_threshold: f64,
    iou_kind: IouKind,
) -> Result<MatchResult, MetricsError> {
    check_threshold(iou_threshold)?;
    let mut image_id: Option<&str> = None;
    for id in predictions
        .iter()
        .map(|p| p.image_id.as_str())
        .chain(ground_truth.iter().map(|g| g.image_id.as_str()))
    {
        match image_id {
            None => image_id = Some(id),
            Some(seen) if seen != id => {
                return Err(MetricsError::MixedImages {
                    a: seen.to_string(),
                    b: id.to_string(),
                })
            }
            Some(_) => {}
        }
    }

    let mut result = MatchResult::empty(iou_threshold);
    let Some(image_id) = image_id else {
        return Ok(result); // nothing on either side
    };

    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].confidence.total_cmp(&predictions[a].confidence));

    let mut gt_taken = vec![false; ground_truth.len()];
    for &pi in &order {
        let pred = &predictions[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if gt_taken[gi] || gt.class_id != pred.class_id {
                continue;
            }
            let iou = pair_iou(pred, gt, iou_kind)?;
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        let group = result
            .groups
            .entry((pred.class_id, image_id.to_string()))
            .or_default();
        match best {
            Some((gi, iou)) => {
                gt_taken[gi] = true;
                group.true_positives.push(TruePositive {
                    confidence: pred.confidence,
                    iou,
                });
            }
            None => group.false_positive_confs.push(pred.confidence),
        }
    }
    for (gi, gt) in ground_truth.iter().enumerate() {
        let group = result
            .groups
            .entry((gt.class_id, image_id.to_string()))
            .or_default();
        if !gt_taken[gi] {
            group.false_negatives += 1;
        }
    }
    Ok(result)
}

/// [`match_predictions`] over a whole dataset: groups both sides by image id
/// and merges the per-image results.
pub fn match_dataset(
    predictions: &[Detection],
    ground_truth: &[GroundTruthInstance],
    iou_threshold: f64,
    iou_kind: IouKind,
) -> Result<MatchResult, MetricsError> {
    check_threshold(iou_threshold)?;
    let mut preds_by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for p in predictions {
        preds_by_image.entry(&p.image_id).or_default().push(p.clone());
    }
    let mut gts_by_image: BTreeMap<&str, Vec<GroundTruthInstance>> = BTreeMap::new();
    for g in ground_truth {
        gts_by_image.entry(&g.image_id).or_default().push(g.clone());
    }

    let empty_preds = Vec::new();
    let empty_gts = Vec::new();
    let images: BTreeSet<&str> = preds_by_image
        .keys()
        .chain(gts_by_image.keys())
        .copied()
        .collect();
    let mut result = MatchResult::empty(iou_threshold);
    for image in images {
        let preds = preds_by_image.get(image).unwrap_or(&empty_preds);
        let gts = gts_by_image.get(image).unwrap_or(&empty_gts);
        result.merge(match_predictions(preds, gts, iou_threshold, iou_kind)?);
    }
    Ok(result)
}

/// Precision, recall, and F1 for one set of counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// P = TP/(TP+FP), R = TP/(TP+FN), F1 their harmonic mean. Empty
/// denominators: a class with nothing predicted and nothing to find is
/// vacuously perfect (P = R = 1); otherwise an empty denominator scores 0.
pub fn compute_prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// 101-point interpolated average precision over records ranked by
/// descending confidence. At each recall level r = 0.00, 0.01, ..., 1.00 the
/// envelope takes the best precision achieved at recall >= r; AP is the mean
/// of the 101 envelope values. `None` when there is no ground truth to
/// recall (AP is undefined, not zero).
pub fn average_precision(ranked: &[ScoreRecord], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    debug_assert!(
        ranked.windows(2).all(|w| w[0].confidence >= w[1].confidence),
        "records must be ranked by descending confidence"
    );
    let mut precisions = Vec::with_capacity(ranked.len());
    let mut recalls = Vec::with_capacity(ranked.len());
    let mut tp_cum = 0usize;
    for (i, r) in ranked.iter().enumerate() {
        if r.is_tp {
            tp_cum += 1;
        }
        precisions.push(tp_cum as f64 / (i + 1) as f64);
        recalls.push(tp_cum as f64 / gt_count as f64);
    }
    // Right-to-left max turns the precision sequence into its envelope.
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }

    let mut sum = 0.0;
    let mut idx = 0;
    for j in 0..=100u32 {
        let r = j as f64 / 100.0;
        while idx < recalls.len() && recalls[idx] < r {
            idx += 1;
        }
        if idx < recalls.len() {
            sum += precisions[idx];
        }
    }
    Some(sum / 101.0)
}

/// Arithmetic mean over classes whose AP is defined.
pub fn mean_ap<I>(per_class: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let defined: Vec<f64> = per_class.into_iter().flatten().collect();
    if defined.is_empty() {
        return Err(MetricsError::NoDefinedAp);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// The ten-threshold ladder behind mAP50-95: 0.50, 0.55, ..., 0.95.
/// Generated from integer ratios so 0.70 is exactly 0.7.
pub fn map50_95_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// mAP evaluated at each threshold of a sweep, plus the mean over the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    /// (iou_threshold, mAP) in ascending threshold order.
    pub per_threshold: Vec<(f64, f64)>,
    pub mean: f64,
}

/// Pred-to-GT IoUs of one (image, class) group, computed once and replayed
/// against each threshold of a sweep.
struct GroupCache {
    class_id: u32,
    confs: Vec<f64>,      // sorted descending (ties keep input order)
    iou: Vec<f64>,        // pred-major matrix, confs.len() x gt_count rows
    gt_count: usize,
}

impl GroupCache {
    fn build(
        preds: &[&Detection],
        gts: &[&GroundTruthInstance],
        class_id: u32,
        kind: IouKind,
    ) -> Result<Self, MetricsError> {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
        let mut confs = Vec::with_capacity(preds.len());
        let mut iou = Vec::with_capacity(preds.len() * gts.len());
        for &pi in &order {
            confs.push(preds[pi].confidence);
            for gt in gts {
                iou.push(pair_iou(preds[pi], gt, kind)?);
            }
        }
        Ok(Self {
            class_id,
            confs,
            iou,
            gt_count: gts.len(),
        })
    }

    /// Greedy matching against the cached IoUs at one threshold.
    fn records_at(&self, threshold: f64, out: &mut Vec<ScoreRecord>) {
        let mut gt_taken = vec![false; self.gt_count];
        for (pi, &confidence) in self.confs.iter().enumerate() {
            let row = &self.iou[pi * self.gt_count..(pi + 1) * self.gt_count];
            let mut best: Option<(usize, f64)> = None;
            for (gi, &iou) in row.iter().enumerate() {
                if !gt_taken[gi] && iou >= threshold && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            match best {
                Some((gi, _)) => {
                    gt_taken[gi] = true;
                    out.push(ScoreRecord {
                        confidence,
                        is_tp: true,
                    });
                }
                None => out.push(ScoreRecord {
                    confidence,
                    is_tp: false,
                }),
            }
        }
    }
}

fn build_group_caches(
    predictions: &[Detection],
    ground_truth: &[GroundTruthInstance],
    kind: IouKind,
) -> Result<(Vec<GroupCache>, BTreeMap<u32, usize>), MetricsError> {
    let mut pred_groups: BTreeMap<(&str, u32), Vec<&Detection>> = BTreeMap::new();
    for p in predictions {
        pred_groups
            .entry((p.image_id.as_str(), p.class_id))
            .or_default()
            .push(p);
    }
    let mut gt_groups: BTreeMap<(&str, u32), Vec<&GroundTruthInstance>> = BTreeMap::new();
    let mut gt_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for g in ground_truth {
        gt_groups
            .entry((g.image_id.as_str(), g.class_id))
            .or_default()
            .push(g);
        *gt_counts.entry(g.class_id).or_default() += 1;
    }

    let keys: BTreeSet<(&str, u32)> = pred_groups.keys().chain(gt_groups.keys()).copied().collect();
    let mut caches = Vec::with_capacity(keys.len());
    for key in keys {
        let preds = pred_groups.get(&key).map_or(&[][..], Vec::as_slice);
        let gts = gt_groups.get(&key).map_or(&[][..], Vec::as_slice);
        caches.push(GroupCache::build(preds, gts, key.1, kind)?);
    }
    Ok((caches, gt_counts))
}

/// Per-class AP at each threshold: `result[class][k]` is the class's AP at
/// `thresholds[k]`, `None` throughout for classes with no ground truth.
pub fn ap_per_class_over_thresholds(
    predictions: &[Detection],
    ground_truth: &[GroundTruthInstance],
    thresholds: &[f64],
    kind: IouKind,
) -> Result<BTreeMap<u32, Vec<Option<f64>>>, MetricsError> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::BadThresholdList);
    }
    for &t in thresholds {
        check_threshold(t).map_err(|_| MetricsError::BadThresholdList)?;
    }

    let (caches, gt_counts) = build_group_caches(predictions, ground_truth, kind)?;
    let classes: BTreeSet<u32> = caches.iter().map(|c| c.class_id).collect();

    let mut result: BTreeMap<u32, Vec<Option<f64>>> = BTreeMap::new();
    let mut records: Vec<ScoreRecord> = Vec::new();
    for &class_id in &classes {
        let gt_count = gt_counts.get(&class_id).copied().unwrap_or(0);
        let mut aps = Vec::with_capacity(thresholds.len());
        for &threshold in thresholds {
            records.clear();
            // Caches iterate in (image, class) key order, so equal-confidence
            // ranking ties resolve the same way on every run.
            for cache in caches.iter().filter(|c| c.class_id == class_id) {
                cache.records_at(threshold, &mut records);
            }
            records.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            aps.push(average_precision(&records, gt_count));
        }
        result.insert(class_id, aps);
    }
    Ok(result)
}

/// mAP at each threshold (mean over classes with ground truth) and the mean
/// across thresholds — the mAP50-95 aggregation when given the standard
/// ten-threshold ladder.
pub fn map_over_thresholds(
    predictions: &[Detection],
    ground_truth: &[GroundTruthInstance],
    thresholds: &[f64],
    kind: IouKind,
) -> Result<ThresholdSweep, MetricsError> {
    let per_class = ap_per_class_over_thresholds(predictions, ground_truth, thresholds, kind)?;
    let mut per_threshold = Vec::with_capacity(thresholds.len());
    for (k, &threshold) in thresholds.iter().enumerate() {
        let map = mean_ap(per_class.values().map(|aps| aps[k]))?;
        per_threshold.push((threshold, map));
    }
    let mean = per_threshold.iter().map(|(_, m)| m).sum::<f64>() / per_threshold.len() as f64;
    Ok(ThresholdSweep {
        per_threshold,
        mean,
    })
}

/// Which row/column of a confusion matrix: a real class or the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Class(u32),
    Background,
}

/// Counts of (true row, predicted column) over classes plus a background
/// row/column: unmatched ground truth falls into (class, background),
/// unmatched predictions into (background, class).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>, // (n+1) x (n+1), row-major, index n = background
    class_names: Vec<String>,
    pub confidence_threshold: f64,
    pub iou_threshold: f64,
}

impl ConfusionMatrix {
    fn index(&self, cell: Cell) -> usize {
        match cell {
            Cell::Class(c) => c as usize,
            Cell::Background => self.class_names.len(),
        }
    }

    pub fn count(&self, true_cell: Cell, predicted_cell: Cell) -> u64 {
        let n = self.class_names.len() + 1;
        self.counts[self.index(true_cell) * n + self.index(predicted_cell)]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Ground-truth instances of a class (its row total, background column
    /// included).
    pub fn row_total(&self, class_id: u32) -> u64 {
        let n = self.class_names.len() + 1;
        let r = class_id as usize;
        (0..n).map(|c| self.counts[r * n + c]).sum()
    }

    pub fn column_total(&self, class_id: u32) -> u64 {
        let n = self.class_names.len() + 1;
        let c = class_id as usize;
        (0..n).map(|r| self.counts[r * n + c]).sum()
    }

    /// Diagonal over row total, the recall the matrix implies for a class.
    pub fn recall(&self, class_id: u32) -> Option<f64> {
        let total = self.row_total(class_id);
        if total == 0 {
            return None;
        }
        Some(self.count(Cell::Class(class_id), Cell::Class(class_id)) as f64 / total as f64)
    }

    pub fn precision(&self, class_id: u32) -> Option<f64> {
        let total = self.column_total(class_id);
        if total == 0 {
            return None;
        }
        Some(self.count(Cell::Class(class_id), Cell::Class(class_id)) as f64 / total as f64)
    }

    /// Markdown table: rows are true classes, columns predicted classes,
    /// background last on both axes.
    pub fn render_markdown(&self) -> String {
        let mut labels: Vec<&str> = self.class_names.iter().map(String::as_str).collect();
        labels.push("background");
        let mut out = String::from("| true \\ predicted |");
        for l in &labels {
            write!(out, " {l} |").unwrap();
        }
        out.push_str("\n|---|");
        for _ in &labels {
            out.push_str("---|");
        }
        out.push('\n');
        let n = labels.len();
        for (r, label) in labels.iter().enumerate() {
            write!(out, "| {label} |").unwrap();
            for c in 0..n {
                write!(out, " {} |", self.counts[r * n + c]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// CSV with the same layout as the Markdown rendering.
    pub fn render_csv(&self) -> String {
        let mut labels: Vec<&str> = self.class_names.iter().map(String::as_str).collect();
        labels.push("background");
        let mut out = String::from("true\\predicted");
        for l in &labels {
            write!(out, ",{l}").unwrap();
        }
        out.push('\n');
        let n = labels.len();
        for (r, label) in labels.iter().enumerate() {
            write!(out, "{label}").unwrap();
            for c in 0..n {
                write!(out, ",{}", self.counts[r * n + c]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Build the confusion matrix: predictions below the confidence threshold
/// are discarded; the rest pair up with ground truth greedily by descending
/// IoU regardless of class, so a localized-but-misclassified prediction
/// lands in an off-diagonal cell instead of two background cells.
pub fn confusion_matrix(
    predictions: &[Detection],
    ground_truth: &[GroundTruthInstance],
    classes: &ClassMap,
    confidence_threshold: f64,
    iou_threshold: f64,
    kind: IouKind,
) -> Result<ConfusionMatrix, MetricsError> {
    check_threshold(iou_threshold)?;
    if !(0.0..=1.0).contains(&confidence_threshold) {
        return Err(MetricsError::BadConfidence(confidence_threshold));
    }
    let n = classes.len() + 1;
    let mut matrix = ConfusionMatrix {
        counts: vec![0; n * n],
        class_names: classes.names().to_vec(),
        confidence_threshold,
        iou_threshold,
    };

    let kept: Vec<&Detection> = predictions
        .iter()
        .filter(|p| p.confidence >= confidence_threshold)
        .collect();
    let mut preds_by_image: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for p in kept {
        preds_by_image.entry(&p.image_id).or_default().push(p);
    }
    let mut gts_by_image: BTreeMap<&str, Vec<&GroundTruthInstance>> = BTreeMap::new();
    for g in ground_truth {
        gts_by_image.entry(&g.image_id).or_default().push(g);
    }

    let images: BTreeSet<&str> = preds_by_image
        .keys()
        .chain(gts_by_image.keys())
        .copied()
        .collect();
    for image in images {
        let preds = preds_by_image.get(image).map_or(&[][..], Vec::as_slice);
        let gts = gts_by_image.get(image).map_or(&[][..], Vec::as_slice);

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, pred) in preds.iter().enumerate() {
            for (gi, gt) in gts.iter().enumerate() {
                let iou = pair_iou(pred, gt, kind)?;
                if iou >= iou_threshold {
                    candidates.push((iou, pi, gi));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut pred_taken = vec![false; preds.len()];
        let mut gt_taken = vec![false; gts.len()];
        for (_, pi, gi) in candidates {
            if !pred_taken[pi] && !gt_taken[gi] {
                pred_taken[pi] = true;
                gt_taken[gi] = true;
                let r = gts[gi].class_id as usize;
                let c = preds[pi].class_id as usize;
                matrix.counts[r * n + c] += 1;
            }
        }
        for (gi, gt) in gts.iter().enumerate() {
            if !gt_taken[gi] {
                matrix.counts[gt.class_id as usize * n + (n - 1)] += 1;
            }
        }
        for (pi, pred) in preds.iter().enumerate() {
            if !pred_taken[pi] {
                matrix.counts[(n - 1) * n + pred.class_id as usize] += 1;
            }
        }
    }
    Ok(matrix)
}

/// Everything the toolkit reports about one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap50: Option<f64>,
    pub ap50_95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Macro averages over the reported classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// IoU floor for the TP/FP/FN counts behind precision, recall, and F1.
    pub iou_threshold: f64,
    pub iou_kind: IouKind,
    /// Predictions below this confidence are excluded from the P/R/F1
    /// counts (AP ranking keeps everything above `ranking_confidence`).
    pub count_confidence: f64,
    pub ranking_confidence: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            iou_kind: IouKind::Box,
            count_confidence: 0.25,
            ranking_confidence: 0.001,
        }
    }
}

/// Run the full metric suite over recorded predictions and ground truth.
pub fn evaluate(
    predictions: &[Detection],
    ground_truth: &[GroundTruthInstance],
    classes: &ClassMap,
    options: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    let counted: Vec<Detection> = predictions
        .iter()
        .filter(|p| p.confidence >= options.count_confidence)
        .cloned()
        .collect();
    let matched = match_dataset(
        &counted,
        ground_truth,
        options.iou_threshold,
        options.iou_kind,
    )?;

    let ranked: Vec<Detection> = predictions
        .iter()
        .filter(|p| p.confidence >= options.ranking_confidence)
        .cloned()
        .collect();
    let thresholds = map50_95_thresholds();
    let per_class_aps =
        ap_per_class_over_thresholds(&ranked, ground_truth, &thresholds, options.iou_kind)?;

    let mut reports = Vec::with_capacity(classes.len());
    for class_id in 0..classes.len() as u32 {
        let (tp, fp, fn_) = matched.counts(class_id);
        let prf = compute_prf(tp, fp, fn_);
        let aps = per_class_aps.get(&class_id);
        let ap50 = aps.and_then(|a| a[0]);
        let ap50_95 = aps.and_then(|a| {
            let defined: Vec<f64> = a.iter().flatten().copied().collect();
            if defined.len() == a.len() {
                Some(defined.iter().sum::<f64>() / defined.len() as f64)
            } else {
                None
            }
        });
        reports.push(ClassReport {
            class_id,
            name: classes.name(class_id).unwrap_or("?").to_string(),
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            ap50,
            ap50_95,
        });
    }

    let n = reports.len().max(1) as f64;
    let precision = reports.iter().map(|r| r.precision).sum::<f64>() / n;
    let recall = reports.iter().map(|r| r.recall).sum::<f64>() / n;
    let f1 = reports.iter().map(|r| r.f1).sum::<f64>() / n;
    let map50 = mean_ap(reports.iter().map(|r| r.ap50)).ok();
    let map50_95 = mean_ap(reports.iter().map(|r| r.ap50_95)).ok();

    Ok(EvalReport {
        classes: reports,
        precision,
        recall,
        f1,
        map50,
        map50_95,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Markdown table with the column layout Precision / Recall / F1-score /
    /// mAP50 / mAP50-95, one row per class plus an "all" row.
    pub fn render_markdown(&self) -> String {
        let mut out = String::from(
            "| Class | Precision | Recall | F1-score | mAP50 | mAP50-95 |\n|---|---|---|---|---|---|\n",
        );
        for c in &self.classes {
            writeln!(
                out,
                "| {} | {:.4} | {:.4} | {:.4} | {} | {} |",
                c.name,
                c.precision,
                c.recall,
                c.f1,
                fmt_opt(c.ap50),
                fmt_opt(c.ap50_95),
            )
            .unwrap();
        }
        writeln!(
            out,
            "| all | {:.4} | {:.4} | {:.4} | {} | {} |",
            self.precision,
            self.recall,
            self.f1,
            fmt_opt(self.map50),
            fmt_opt(self.map50_95),
        )
        .unwrap();
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,map50,map50_95\n");
        for c in &self.classes {
            writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{},{}",
                c.name,
                c.precision,
                c.recall,
                c.f1,
                fmt_opt(c.ap50),
                fmt_opt(c.ap50_95),
            )
            .unwrap();
        }
        writeln!(
            out,
            "all,{:.4},{:.4},{:.4},{},{}",
            self.precision,
            self.recall,
            self.f1,
            fmt_opt(self.map50),
            fmt_opt(self.map50_95),
        )
        .unwrap();
        out
    }
}

/// The 101 (recall, envelope precision) pairs behind [`average_precision`],
/// for export as a PR curve.
pub fn ap_envelope_points(ranked: &[ScoreRecord], gt_count: usize) -> Vec<(f64, f64)> {
    let mut points = Vec::with_capacity(101);
    if gt_count == 0 {
        return points;
    }
    let mut precisions = Vec::with_capacity(ranked.len());
    let mut recalls = Vec::with_capacity(ranked.len());
    let mut tp_cum = 0usize;
    for (i, r) in ranked.iter().enumerate() {
        if r.is_tp {
            tp_cum += 1;
        }
        precisions.push(tp_cum as f64 / (i + 1) as f64);
        recalls.push(tp_cum as f64 / gt_count as f64);
    }
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut idx = 0;
    for j in 0..=100u32 {
        let r = j as f64 / 100.0;
        while idx < recalls.len() && recalls[idx] < r {
            idx += 1;
        }
        let p = if idx < recalls.len() { precisions[idx] } else { 0.0 };
        points.push((r, p));
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(class_id: u32, coords: [f64; 4], conf: f64, image: &str) -> Detection {
        Detection::new(
            class_id,
            BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).unwrap(),
            None,
            conf,
            image,
        )
        .unwrap()
    }

    fn gt(class_id: u32, coords: [f64; 4], image: &str) -> GroundTruthInstance {
        GroundTruthInstance {
            class_id,
            geometry: Geometry::Box(
                BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).unwrap(),
            ),
            image_id: image.to_string(),
        }
    }

    #[test]
    fn match_identity_is_all_tp() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a"), gt(1, [20.0, 0.0, 30.0, 10.0], "a")];
        let preds = vec![
            det(0, [0.0, 0.0, 10.0, 10.0], 0.7, "a"),
            det(1, [20.0, 0.0, 30.0, 10.0], 0.4, "a"),
        ];
        let m = match_predictions(&preds, &gts, 0.5, IouKind::Box).unwrap();
        assert_eq!(m.totals(), (2, 0, 0));
    }

    #[test]
    fn match_double_prediction_keeps_higher_confidence() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        let preds = vec![
            det(0, [0.5, 0.0, 10.0, 10.0], 0.8, "a"),
            det(0, [0.0, 0.0, 10.0, 10.0], 0.9, "a"),
        ];
        let m = match_predictions(&preds, &gts, 0.5, IouKind::Box).unwrap();
        assert_eq!(m.counts(0), (1, 1, 0));
        let records = m.ranked_records(0);
        assert!(records[0].is_tp && records[0].confidence == 0.9);
        assert!(!records[1].is_tp && records[1].confidence == 0.8);
    }

    #[test]
    fn match_below_threshold_is_fp_and_fn() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        // overlap 60, union 140 -> IoU 0.43
        let preds = vec![det(0, [0.0, 4.0, 10.0, 14.0], 0.9, "a")];
        let m = match_predictions(&preds, &gts, 0.5, IouKind::Box).unwrap();
        assert_eq!(m.counts(0), (0, 1, 1));
    }

    #[test]
    fn match_threshold_is_inclusive() {
        // IoU = 50/100 = 0.5 exactly
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        let preds = vec![det(0, [0.0, 0.0, 10.0, 5.0], 0.9, "a")];
        let m = match_predictions(&preds, &gts, 0.5, IouKind::Box).unwrap();
        assert_eq!(m.counts(0), (1, 0, 0));
    }

    #[test]
    fn match_never_crosses_classes() {
        let gts = vec![gt(1, [0.0, 0.0, 10.0, 10.0], "a")];
        let preds = vec![det(0, [0.0, 0.0, 10.0, 10.0], 0.9, "a")];
        let m = match_predictions(&preds, &gts, 0.5, IouKind::Box).unwrap();
        assert_eq!(m.counts(0), (0, 1, 0));
        assert_eq!(m.counts(1), (0, 0, 1));
    }

    #[test]
    fn match_mask_kind_requires_masks() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        let preds = vec![det(0, [0.0, 0.0, 10.0, 10.0], 0.9, "a")];
        let err = match_predictions(&preds, &gts, 0.5, IouKind::Mask).unwrap_err();
        assert!(matches!(err, MetricsError::MissingMask { .. }));
    }

    #[test]
    fn match_mask_kind_uses_polygon_overlap() {
        let poly = |x0: f64, x1: f64| PolygonMask::rect(x0, 0.0, x1, 10.0).unwrap();
        let gts = vec![GroundTruthInstance {
            class_id: 0,
            geometry: Geometry::Polygon(poly(0.0, 10.0)),
            image_id: "a".to_string(),
        }];
        // box IoU would be 1.0; mask overlap is 5/10 row cells = 0.5
        let pred = Detection::new(
            0,
            BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            Some(poly(0.0, 5.0)),
            0.9,
            "a",
        )
        .unwrap();
        let m = match_predictions(&[pred.clone()], &gts, 0.6, IouKind::Mask).unwrap();
        assert_eq!(m.counts(0), (0, 1, 1));
        let m = match_predictions(&[pred], &gts, 0.5, IouKind::Mask).unwrap();
        assert_eq!(m.counts(0), (1, 0, 0));
    }

    #[test]
    fn match_rejects_mixed_images_but_dataset_groups() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a"), gt(0, [0.0, 0.0, 10.0, 10.0], "b")];
        let preds = vec![
            det(0, [0.0, 0.0, 10.0, 10.0], 0.9, "a"),
            det(0, [0.0, 0.0, 10.0, 10.0], 0.8, "b"),
        ];
        assert!(matches!(
            match_predictions(&preds, &gts, 0.5, IouKind::Box),
            Err(MetricsError::MixedImages { .. })
        ));
        let m = match_dataset(&preds, &gts, 0.5, IouKind::Box).unwrap();
        assert_eq!(m.totals(), (2, 0, 0));
    }

    #[test]
    fn match_rejects_bad_threshold() {
        assert!(matches!(
            match_predictions(&[], &[], 0.0, IouKind::Box),
            Err(MetricsError::BadThreshold(_))
        ));
        assert!(matches!(
            match_predictions(&[], &[], 1.0, IouKind::Box),
            Err(MetricsError::BadThreshold(_))
        ));
    }

    #[test]
    fn prf_reported_recalls() {
        assert!((compute_prf(164, 0, 3).recall - 0.9820).abs() < 1e-4);
        assert!((compute_prf(618, 0, 5).recall - 0.9920).abs() < 1e-4);
        assert!((compute_prf(22, 0, 2).recall - 0.9167).abs() < 1e-4);
    }

    #[test]
    fn f1_closes_on_reported_rows() {
        assert!((f1_score(0.9904, 0.9854) - 0.9879).abs() < 1e-4);
        assert!((f1_score(0.8702, 0.8750) - 0.8726).abs() < 1e-4);
    }

    #[test]
    fn prf_empty_denominator_conventions() {
        let vacuous = compute_prf(0, 0, 0);
        assert_eq!((vacuous.precision, vacuous.recall, vacuous.f1), (1.0, 1.0, 1.0));
        let nothing_predicted = compute_prf(0, 0, 4);
        assert_eq!(
            (nothing_predicted.precision, nothing_predicted.recall, nothing_predicted.f1),
            (0.0, 0.0, 0.0)
        );
        let phantom_class = compute_prf(0, 3, 0);
        assert_eq!((phantom_class.precision, phantom_class.recall), (0.0, 0.0));
    }

    #[test]
    fn ap_perfect_detector_is_exactly_one() {
        let ranked = vec![
            ScoreRecord { confidence: 0.9, is_tp: true },
            ScoreRecord { confidence: 0.8, is_tp: true },
        ];
        assert_eq!(average_precision(&ranked, 2), Some(1.0));
    }

    #[test]
    fn ap_no_tp_is_zero() {
        let ranked = vec![ScoreRecord { confidence: 0.9, is_tp: false }];
        assert_eq!(average_precision(&ranked, 3), Some(0.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
    }

    #[test]
    fn ap_undefined_without_ground_truth() {
        let ranked = vec![ScoreRecord { confidence: 0.9, is_tp: false }];
        assert_eq!(average_precision(&ranked, 0), None);
    }

    #[test]
    fn ap_tp_fp_tp_sequence() {
        let ranked = vec![
            ScoreRecord { confidence: 0.9, is_tp: true },
            ScoreRecord { confidence: 0.8, is_tp: false },
            ScoreRecord { confidence: 0.7, is_tp: true },
        ];
        let ap = average_precision(&ranked, 2).unwrap();
        assert!((ap - (51.0 + 50.0 * (2.0 / 3.0)) / 101.0).abs() < 1e-12);
        assert!((ap - 0.83498).abs() < 1e-5);
    }

    #[test]
    fn mean_ap_examples() {
        assert_eq!(mean_ap([Some(0.9), Some(1.0)]).unwrap(), 0.95);
        assert_eq!(mean_ap([Some(0.8232)]).unwrap(), 0.8232);
        assert_eq!(mean_ap([Some(0.7), None, Some(0.7)]).unwrap(), 0.7);
        assert!(matches!(mean_ap([None, None]), Err(MetricsError::NoDefinedAp)));
    }

    #[test]
    fn threshold_ladder_is_exact() {
        let t = map50_95_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[4], 0.7);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn sweep_perfect_predictions() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a"), gt(1, [20.0, 0.0, 40.0, 10.0], "a")];
        let preds = vec![
            det(0, [0.0, 0.0, 10.0, 10.0], 0.9, "a"),
            det(1, [20.0, 0.0, 40.0, 10.0], 0.8, "a"),
        ];
        let sweep =
            map_over_thresholds(&preds, &gts, &map50_95_thresholds(), IouKind::Box).unwrap();
        assert!(sweep.per_threshold.iter().all(|&(_, m)| m == 1.0));
        assert_eq!(sweep.mean, 1.0);
    }

    #[test]
    fn sweep_iou_exactly_point_seven() {
        // IoU = 70/100 = 0.7 exactly: counted at thresholds up to and
        // including 0.70, gone from 0.75 up.
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        let preds = vec![det(0, [0.0, 0.0, 10.0, 7.0], 0.9, "a")];
        let sweep =
            map_over_thresholds(&preds, &gts, &map50_95_thresholds(), IouKind::Box).unwrap();
        for &(threshold, map) in &sweep.per_threshold {
            let expected = if threshold <= 0.7 { 1.0 } else { 0.0 };
            assert_eq!(map, expected, "at threshold {threshold}");
        }
        assert_eq!(sweep.mean, 0.5);
    }

    #[test]
    fn sweep_no_predictions_is_zero() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        let sweep = map_over_thresholds(&[], &gts, &map50_95_thresholds(), IouKind::Box).unwrap();
        assert!(sweep.per_threshold.iter().all(|&(_, m)| m == 0.0));
        assert_eq!(sweep.mean, 0.0);
    }

    #[test]
    fn sweep_rejects_bad_threshold_lists() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        for bad in [vec![], vec![0.5, 0.5], vec![0.6, 0.5], vec![0.5, 1.0]] {
            assert!(matches!(
                map_over_thresholds(&[], &gts, &bad, IouKind::Box),
                Err(MetricsError::BadThresholdList)
            ));
        }
    }

    fn two_classes() -> ClassMap {
        ClassMap::new(["truck", "axle"])
    }

    #[test]
    fn confusion_empty_is_zero_matrix() {
        let m = confusion_matrix(&[], &[], &two_classes(), 0.25, 0.5, IouKind::Box).unwrap();
        for r in [Cell::Class(0), Cell::Class(1), Cell::Background] {
            for c in [Cell::Class(0), Cell::Class(1), Cell::Background] {
                assert_eq!(m.count(r, c), 0);
            }
        }
    }

    #[test]
    fn confusion_counts_matches_misses_and_ghosts() {
        let gts = vec![
            gt(0, [0.0, 0.0, 10.0, 10.0], "a"),   // matched
            gt(0, [50.0, 0.0, 60.0, 10.0], "a"),  // missed
        ];
        let preds = vec![
            det(0, [0.0, 0.0, 10.0, 10.0], 0.9, "a"),
            det(1, [100.0, 0.0, 110.0, 10.0], 0.9, "a"), // ghost axle
            det(0, [200.0, 0.0, 210.0, 10.0], 0.1, "a"), // below confidence cut
        ];
        let m = confusion_matrix(&preds, &gts, &two_classes(), 0.25, 0.5, IouKind::Box).unwrap();
        assert_eq!(m.count(Cell::Class(0), Cell::Class(0)), 1);
        assert_eq!(m.count(Cell::Class(0), Cell::Background), 1);
        assert_eq!(m.count(Cell::Background, Cell::Class(1)), 1);
        assert_eq!(m.count(Cell::Background, Cell::Class(0)), 0);
        assert_eq!(m.row_total(0), 2);
        assert_eq!(m.recall(0), Some(0.5));
    }

    #[test]
    fn confusion_is_class_agnostic() {
        // Perfectly localized but misclassified: one off-diagonal count, not
        // a miss plus a ghost.
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        let preds = vec![det(1, [0.0, 0.0, 10.0, 10.0], 0.9, "a")];
        let m = confusion_matrix(&preds, &gts, &two_classes(), 0.25, 0.5, IouKind::Box).unwrap();
        assert_eq!(m.count(Cell::Class(0), Cell::Class(1)), 1);
        assert_eq!(m.count(Cell::Class(0), Cell::Background), 0);
        assert_eq!(m.count(Cell::Background, Cell::Class(1)), 0);
    }

    #[test]
    fn confusion_renders_with_background_last() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a")];
        let m = confusion_matrix(&[], &gts, &two_classes(), 0.25, 0.5, IouKind::Box).unwrap();
        let md = m.render_markdown();
        assert!(md.contains("| truck | 0 | 0 | 1 |"));
        assert!(md.contains("| background | 0 | 0 | 0 |"));
        let csv = m.render_csv();
        assert!(csv.contains("truck,0,0,1"));
    }

    #[test]
    fn evaluate_perfect_scene_closes_at_one() {
        let gts = vec![gt(0, [0.0, 0.0, 10.0, 10.0], "a"), gt(1, [20.0, 0.0, 40.0, 10.0], "a")];
        let preds = vec![
            det(0, [0.0, 0.0, 10.0, 10.0], 0.9, "a"),
            det(1, [20.0, 0.0, 40.0, 10.0], 0.8, "a"),
        ];
        let report = evaluate(&preds, &gts, &two_classes(), &EvalOptions::default()).unwrap();
        assert_eq!((report.precision, report.recall, report.f1), (1.0, 1.0, 1.0));
        assert_eq!(report.map50, Some(1.0));
        assert_eq!(report.map50_95, Some(1.0));
        for c in &report.classes {
            assert_eq!(c.ap50, Some(1.0));
            assert_eq!(c.ap50_95, Some(1.0));
        }
        let md = report.render_markdown();
        assert!(md.starts_with("| Class | Precision | Recall | F1-score | mAP50 | mAP50-95 |"));
        assert!(md.contains("| all | 1.0000 | 1.0000 | 1.0000 | 1.0000 | 1.0000 |"));
        let parsed: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(parsed["map50"], serde_json::json!(1.0));
    }

    #[test]
    fn envelope_points_cover_the_recall_axis() {
        let ranked = vec![
            ScoreRecord { confidence: 0.9, is_tp: true },
            ScoreRecord { confidence: 0.8, is_tp: false },
        ];
        let points = ap_envelope_points(&ranked, 2);
        assert_eq!(points.len(), 101);
        assert_eq!(points[0], (0.0, 1.0));
        assert_eq!(points[50], (0.5, 1.0));
        assert_eq!(points[100], (1.0, 0.0));
        assert!(ap_envelope_points(&ranked, 0).is_empty());
    }

    fn scene_strategy() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruthInstance>)> {
        let boxes = || (0.0..500.0f64, 0.0..500.0f64, 5.0..140.0f64, 5.0..140.0f64);
        let pred = (0u32..2, boxes(), 0.0..=1.0f64, 0usize..3);
        let truth = (0u32..2, boxes(), 0usize..3);
        (
            proptest::collection::vec(pred, 0..14),
            proptest::collection::vec(truth, 0..10),
        )
            .prop_map(|(preds, gts)| {
                let preds = preds
                    .into_iter()
                    .map(|(class, (x, y, w, h), conf, img)| {
                        det(class, [x, y, x + w, y + h], conf, &format!("img{img}"))
                    })
                    .collect();
                let gts = gts
                    .into_iter()
                    .map(|(class, (x, y, w, h), img)| {
                        gt(class, [x, y, x + w, y + h], &format!("img{img}"))
                    })
                    .collect();
                (preds, gts)
            })
    }

    proptest! {
        #[test]
        fn prop_matching_conserves_counts((preds, gts) in scene_strategy()) {
            let m = match_dataset(&preds, &gts, 0.5, IouKind::Box).unwrap();
            for class_id in 0..2 {
                let (tp, fp, fn_) = m.counts(class_id);
                let n_preds = preds.iter().filter(|p| p.class_id == class_id).count();
                let n_gts = gts.iter().filter(|g| g.class_id == class_id).count();
                prop_assert_eq!(tp + fp, n_preds);
                prop_assert_eq!(tp + fn_, n_gts);
            }
        }

        #[test]
        fn prop_raising_threshold_never_adds_tp(
            (preds, gts) in scene_strategy(),
            (lo, hi) in (0.05..0.9f64, 0.05..0.9f64),
        ) {
            let (lo, hi) = (lo.min(hi), lo.max(hi).max(lo.min(hi) + 1e-6));
            let at_lo = match_dataset(&preds, &gts, lo, IouKind::Box).unwrap().totals().0;
            let at_hi = match_dataset(&preds, &gts, hi, IouKind::Box).unwrap().totals().0;
            prop_assert!(at_hi <= at_lo);
        }

        #[test]
        fn prop_confidence_scaling_changes_nothing(
            (preds, gts) in scene_strategy(),
            scale_pow in 0u32..4,
        ) {
            // Powers of two scale confidences exactly, preserving every tie
            // and every ordering.
            let scale = 0.5f64.powi(scale_pow as i32);
            let scaled: Vec<Detection> = preds
                .iter()
                .map(|p| Detection {
                    confidence: p.confidence * scale,
                    ..p.clone()
                })
                .collect();

            let a = match_dataset(&preds, &gts, 0.5, IouKind::Box).unwrap();
            let b = match_dataset(&scaled, &gts, 0.5, IouKind::Box).unwrap();
            prop_assert_eq!(a.totals(), b.totals());
            for class_id in 0..2 {
                let ap_a = average_precision(&a.ranked_records(class_id), a.gt_count(class_id));
                let ap_b = average_precision(&b.ranked_records(class_id), b.gt_count(class_id));
                prop_assert_eq!(ap_a, ap_b);
            }

            let classes = two_classes();
            let ca = confusion_matrix(&preds, &gts, &classes, 0.0, 0.5, IouKind::Box).unwrap();
            let cb = confusion_matrix(&scaled, &gts, &classes, 0.0, 0.5, IouKind::Box).unwrap();
            prop_assert_eq!(ca.counts, cb.counts);
        }

        #[test]
        fn prop_f1_between_min_and_max(p in 0.001..1.0f64, r in 0.001..1.0f64) {
            let f1 = f1_score(p, r);
            prop_assert!(p.min(r) - 1e-12 <= f1 && f1 <= p.max(r) + 1e-12);
        }

        #[test]
        fn prop_confusion_rows_conserve_ground_truth((preds, gts) in scene_strategy()) {
            let classes = two_classes();
            let m = confusion_matrix(&preds, &gts, &classes, 0.25, 0.5, IouKind::Box).unwrap();
            for class_id in 0..2 {
                let n_gts = gts.iter().filter(|g| g.class_id == class_id).count() as u64;
                prop_assert_eq!(m.row_total(class_id), n_gts);
            }
        }
    }
}
