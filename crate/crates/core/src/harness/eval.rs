//! Average precision over the synthetic scenes.
//!
//! Each detection is matched to the same-class truth box it overlaps most in
//! its image. It is a true positive when that overlap reaches the IoU
//! threshold and the truth box is still unclaimed. AP is the area under the
//! raw (non-interpolated) precision-recall step curve.

use std::cmp::Ordering;

use super::model::ToyModel;
use super::scene::SyntheticScene;
use crate::domain::BBox;
use crate::loss::iou;
use crate::nms::greedy_nms;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image: usize,
    pub class: u32,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image: usize,
    pub class: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub iou_threshold: f64,
    /// Indexed by class label; `None` for classes without ground truth.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

/// Default IoU threshold for merging duplicate detections before scoring.
pub const DETECTION_NMS_IOU: f64 = 0.5;

/// AP for a single class. `None` when there is no ground truth.
pub fn average_precision(detections: &[Detection], truths: &[GroundTruth], iou_threshold: f64) -> Option<f64> {
    if truths.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.partial_cmp(&detections[a].score).unwrap_or(Ordering::Equal));

    let mut claimed = vec![false; truths.len()];
    let (mut tp, mut area) = (0usize, 0.0);
    for (rank, &k) in order.iter().enumerate() {
        let det = &detections[k];
        let best = truths
            .iter()
            .enumerate()
            .filter(|(_, g)| g.image == det.image && g.class == det.class)
            .map(|(j, g)| (j, iou(&det.bbox, &g.bbox)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, overlap)) = best {
            if overlap >= iou_threshold && !claimed[j] {
                claimed[j] = true;
                tp += 1;
                // recall rises by 1/|truths| at this rank
                area += tp as f64 / (rank + 1) as f64;
            }
        }
    }
    Some(area / truths.len() as f64)
}

/// Per-class AP and their mean over classes that have ground truth.
pub fn mean_average_precision(
    detections: &[Detection],
    truths: &[GroundTruth],
    num_classes: u32,
    iou_threshold: f64,
) -> ApReport {
    let mut per_class = vec![None; num_classes as usize + 1];
    for class in 1..=num_classes {
        let d: Vec<Detection> = detections.iter().filter(|d| d.class == class).copied().collect();
        let g: Vec<GroundTruth> = truths.iter().filter(|g| g.class == class).copied().collect();
        per_class[class as usize] = average_precision(&d, &g, iou_threshold);
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    ApReport { iou_threshold, per_class, map }
}

/// Runs the model on every candidate, merges duplicates per class with NMS,
/// and returns detections alongside the scenes' ground truth.
pub fn collect_detections(model: &ToyModel, scenes: &[SyntheticScene]) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut detections = Vec::new();
    let mut truths = Vec::new();
    for (image, scene) in scenes.iter().enumerate() {
        truths.extend(scene.objects.iter().map(|o| GroundTruth { image, class: o.class, bbox: o.bbox }));
        let raw: Vec<Detection> = scene
            .candidates
            .iter()
            .map(|c| {
                let (class, score, bbox) = model.detect(c);
                Detection { image, class, score, bbox }
            })
            .filter(|d| d.bbox.validate().is_ok())
            .collect();
        let classes = model.num_outputs as u32 - 1;
        for class in 1..=classes {
            let items: Vec<(BBox, f64, u64)> = raw
                .iter()
                .enumerate()
                .filter(|(_, d)| d.class == class)
                .map(|(k, d)| (d.bbox, d.score, k as u64))
                .collect();
            for kept in greedy_nms(&items, DETECTION_NMS_IOU) {
                detections.push(raw[items[kept].2 as usize]);
            }
        }
    }
    (detections, truths)
}

/// AP per class and mAP of `model` on `scenes` at one IoU threshold.
pub fn evaluate_ap(model: &ToyModel, scenes: &[SyntheticScene], iou_threshold: f64) -> ApReport {
    let (detections, truths) = collect_detections(model, scenes);
    mean_average_precision(&detections, &truths, model.num_outputs as u32 - 1, iou_threshold)
}
