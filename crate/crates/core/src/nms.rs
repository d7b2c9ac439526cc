//! Greedy non-maximum suppression keyed on loss.

use std::cmp::Ordering;

use crate::domain::{BBox, RoiRecord};
use crate::error::{Error, Result};

/// Descending score, ascending id.
pub(crate) fn rank_order(score_a: f64, id_a: u64, score_b: f64, id_b: u64) -> Ordering {
    score_b.total_cmp(&score_a).then(id_a.cmp(&id_b))
}

/// Greedy NMS over `(box, score, id)` triples. Returns indices into `items`
/// of the kept entries, highest score first. A candidate is suppressed when
/// its IoU with a kept entry is strictly greater than `iou_threshold`.
pub fn greedy_nms(items: &[(BBox, f64, u64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| rank_order(items[a].1, items[a].2, items[b].1, items[b].2));

    let boxes: Vec<BBox> = order.iter().map(|&k| items[k].0).collect();
    let areas: Vec<f64> = boxes.iter().map(BBox::area).collect();
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(order[i]);
        let a = &boxes[i];
        for j in (i + 1)..order.len() {
            if suppressed[j] {
                continue;
            }
            let b = &boxes[j];
            let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
            let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
            if iw <= 0.0 || ih <= 0.0 {
                continue;
            }
            // same arithmetic as `iou`, with areas hoisted
            let inter = iw * ih;
            let overlap = (inter / (areas[i] + areas[j] - inter)).clamp(0.0, 1.0);
            if overlap > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Deduplicates the candidates of one image by selection score.
///
/// The caller partitions by image; records from more than one `image_id`
/// are rejected. Output is in descending score order, ties by `roi_id`.
pub fn nms_by_loss<'a>(candidates: &[(&'a RoiRecord, f64)], iou_threshold: f64) -> Result<Vec<(&'a RoiRecord, f64)>> {
    if let Some((first, _)) = candidates.first() {
        if let Some((other, _)) = candidates.iter().find(|(r, _)| r.image_id != first.image_id) {
            return Err(Error::MixedImages { first: first.image_id, other: other.image_id });
        }
    }
    let items: Vec<(BBox, f64, u64)> = candidates.iter().map(|(r, s)| (r.bbox_pred, *s, r.roi_id)).collect();
    Ok(greedy_nms(&items, iou_threshold).into_iter().map(|i| candidates[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::iou;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(roi_id: u64, bbox: BBox) -> RoiRecord {
        RoiRecord {
            iteration: 0,
            image_id: 3,
            roi_id,
            true_class: 0,
            p_u: None,
            l_cls: 0.0,
            l_loc: 0.0,
            bbox_pred: bbox,
            bbox_target: None,
        }
    }

    /// Repeatedly pull the best remaining candidate and drop its overlaps.
    fn oracle(candidates: &[(RoiRecord, f64)], thr: f64) -> Vec<u64> {
        let mut pool: Vec<&(RoiRecord, f64)> = candidates.iter().collect();
        let mut out = Vec::new();
        while !pool.is_empty() {
            let mut best = 0;
            for k in 1..pool.len() {
                let (b, c) = (pool[best], pool[k]);
                if c.1 > b.1 || (c.1 == b.1 && c.0.roi_id < b.0.roi_id) {
                    best = k;
                }
            }
            let winner = pool.remove(best);
            out.push(winner.0.roi_id);
            pool.retain(|c| iou(&c.0.bbox_pred, &winner.0.bbox_pred) <= thr);
        }
        out
    }

    fn random_candidates(rng: &mut ChaCha8Rng, n: usize) -> Vec<(RoiRecord, f64)> {
        (0..n)
            .map(|i| {
                let x = rng.gen_range(0.0..40.0);
                let y = rng.gen_range(0.0..40.0);
                let w = rng.gen_range(5.0..25.0);
                let h = rng.gen_range(5.0..25.0);
                // coarse scores so ties occur
                let score = (rng.gen_range(0.0..1.0f64) * 8.0).floor() / 8.0;
                (record(i as u64, BBox::new(x, y, x + w, y + h)), score)
            })
            .collect()
    }

    #[test]
    fn single_record_is_kept() {
        let r = record(0, BBox::new(0.0, 0.0, 1.0, 1.0));
        let kept = nms_by_loss(&[(&r, 0.2)], 0.7).unwrap();
        assert_eq!(kept.len(), 1);
        assert!(nms_by_loss(&[], 0.7).unwrap().is_empty());
    }

    #[test]
    fn duplicate_box_keeps_higher_score() {
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        let (lo, hi) = (record(0, b), record(1, b));
        let kept = nms_by_loss(&[(&lo, 0.3), (&hi, 0.5)], 0.7).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].0.roi_id, 1);
    }

    #[test]
    fn mixed_images_rejected() {
        let a = record(0, BBox::new(0.0, 0.0, 1.0, 1.0));
        let b = RoiRecord { image_id: 4, ..record(1, BBox::new(0.0, 0.0, 1.0, 1.0)) };
        assert_eq!(nms_by_loss(&[(&a, 0.1), (&b, 0.2)], 0.5).unwrap_err(), Error::MixedImages { first: 3, other: 4 });
    }

    #[test]
    fn threshold_one_keeps_non_identical_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let cands = random_candidates(&mut rng, 15);
            let refs: Vec<_> = cands.iter().map(|(r, s)| (r, *s)).collect();
            assert_eq!(nms_by_loss(&refs, 1.0).unwrap().len(), cands.len());
        }
        // IoU exactly 1 is not strictly above 1.0
        let b = BBox::new(0.0, 0.0, 2.0, 2.0);
        let (x, y) = (record(0, b), record(1, b));
        assert_eq!(nms_by_loss(&[(&x, 0.1), (&y, 0.2)], 1.0).unwrap().len(), 2);
    }

    #[test]
    fn matches_brute_force_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..1000 {
            let cands = random_candidates(&mut rng, 12);
            let refs: Vec<_> = cands.iter().map(|(r, s)| (r, *s)).collect();
            let got: Vec<u64> = nms_by_loss(&refs, 0.7).unwrap().iter().map(|(r, _)| r.roi_id).collect();
            assert_eq!(got, oracle(&cands, 0.7), "trial {trial}");
        }
    }

    proptest! {
        #[test]
        fn kept_set_properties(seed in any::<u64>(), n in 0usize..20, thr in 0.05..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cands = random_candidates(&mut rng, n);
            let refs: Vec<_> = cands.iter().map(|(r, s)| (r, *s)).collect();
            let kept = nms_by_loss(&refs, thr).unwrap();
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(iou(&a.0.bbox_pred, &b.0.bbox_pred) <= thr);
                    prop_assert!(rank_order(a.1, a.0.roi_id, b.1, b.0.roi_id) == Ordering::Less);
                }
            }
            for (r, s) in &refs {
                if kept.iter().any(|(k, _)| k.roi_id == r.roi_id) {
                    continue;
                }
                prop_assert!(kept.iter().any(|(k, ks)| *ks >= *s && iou(&k.bbox_pred, &r.bbox_pred) > thr));
            }
            let again = nms_by_loss(&refs, thr).unwrap();
            prop_assert_eq!(kept, again);
        }
    }
}
