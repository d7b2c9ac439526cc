//! Per-iteration hard example selection.
//!
//! One call to [`MinerState::mine`] runs the full pipeline on a mini-batch:
//! threshold and schedule updates from the raw batch, scoring, per-image
//! NMS, then either top-B (scalar mode) or quota-driven per-stratum top-k
//! (strata mode).

use std::collections::{BTreeMap, HashSet};

use crate::domain::{
    validate_record, MiningConfig, RoiRecord, SelectedRoi, SelectionMode, SelectionResult, StratumId, WeightPolicy,
};
use crate::error::{Error, Result};
use crate::loss::selection_score;
use crate::nms::{nms_by_loss, rank_order};
use crate::schedule::{Phase, ScheduleState};
use crate::strata::ThresholdState;

#[derive(Debug, Clone)]
pub struct MinerState {
    pub config: MiningConfig,
    pub thresholds: ThresholdState,
    pub schedule: ScheduleState,
    /// Iteration of the last non-empty batch.
    pub last_iteration: Option<u64>,
}

struct Candidate<'a> {
    record: &'a RoiRecord,
    score: f64,
    stratum: StratumId,
}

impl MinerState {
    pub fn new(config: MiningConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            thresholds: ThresholdState::new(config.threshold_quantile, config.threshold_decay),
            schedule: ScheduleState::new(config.schedule),
            last_iteration: None,
            config,
        })
    }

    fn weights(&mut self, iteration: u64) -> (f64, f64) {
        match self.config.weights {
            WeightPolicy::Scheduled => self.schedule.current_weights(iteration),
            WeightPolicy::Fixed { alpha, beta } => (alpha, beta),
        }
    }

    fn check_batch(&self, batch: &[RoiRecord]) -> Result<u64> {
        let iteration = batch[0].iteration;
        let mut seen = HashSet::with_capacity(batch.len());
        for r in batch {
            validate_record(r)?;
            if r.iteration != iteration {
                return Err(Error::MixedIterations { first: iteration, other: r.iteration });
            }
            if !seen.insert(r.roi_id) {
                return Err(Error::DuplicateRoiId(r.roi_id));
            }
        }
        if let Some(last) = self.last_iteration {
            if iteration <= last {
                return Err(Error::NonMonotonicIteration { last, got: iteration });
            }
        }
        Ok(iteration)
    }

    /// Selects up to `batch_size` hard examples from one mini-batch.
    ///
    /// An empty batch yields an empty result and leaves the state untouched.
    pub fn mine(&mut self, batch: &[RoiRecord]) -> Result<SelectionResult> {
        if batch.is_empty() {
            let (alpha, beta) = match self.config.weights {
                WeightPolicy::Scheduled => (self.schedule.alpha, self.schedule.beta),
                WeightPolicy::Fixed { alpha, beta } => (alpha, beta),
            };
            return Ok(SelectionResult {
                iteration: self.last_iteration.map_or(0, |i| i + 1),
                alpha,
                beta,
                suppressed_count: 0,
                selected: Vec::new(),
            });
        }
        let iteration = self.check_batch(batch)?;

        let n = batch.len() as f64;
        let mean_cls = batch.iter().map(|r| r.l_cls).sum::<f64>() / n;
        let mean_loc = batch.iter().map(|r| r.l_loc).sum::<f64>() / n;
        self.thresholds.update(batch)?;
        self.schedule.observe_losses(iteration, mean_cls, mean_loc)?;
        self.last_iteration = Some(iteration);

        let (alpha, beta) = self.weights(iteration);

        let mut by_image: BTreeMap<u64, Vec<(&RoiRecord, f64)>> = BTreeMap::new();
        for r in batch {
            let score = selection_score(r.l_cls, r.l_loc, alpha, beta)?;
            by_image.entry(r.image_id).or_default().push((r, score));
        }
        let mut survivors = Vec::with_capacity(batch.len());
        for group in by_image.values() {
            for (record, score) in nms_by_loss(group, self.config.nms_iou_threshold)? {
                let stratum = self.thresholds.assign(record)?;
                survivors.push(Candidate { record, score, stratum });
            }
        }
        let suppressed_count = batch.len() - survivors.len();
        survivors.sort_by(|a, b| rank_order(a.score, a.record.roi_id, b.score, b.record.roi_id));

        let chosen = match self.config.selection_mode {
            SelectionMode::Scalar => {
                survivors.truncate(self.config.batch_size);
                survivors
            }
            SelectionMode::Strata => self.take_by_quota(survivors),
        };

        Ok(SelectionResult {
            iteration,
            alpha,
            beta,
            suppressed_count,
            selected: chosen
                .into_iter()
                .map(|c| SelectedRoi {
                    roi_id: c.record.roi_id,
                    image_id: c.record.image_id,
                    l_select: c.score,
                    stratum: c.stratum,
                })
                .collect(),
        })
    }

    /// `ranked` must already be in selection order.
    fn take_by_quota<'a>(&self, ranked: Vec<Candidate<'a>>) -> Vec<Candidate<'a>> {
        let b = self.config.batch_size;
        let in_warmup = self.config.weights == WeightPolicy::Scheduled && self.schedule.phase == Phase::Warmup;
        let mut keep = vec![false; ranked.len()];

        if in_warmup && self.config.warmup_cls_priority {
            // High-cls strata first as one pool, then the low-cls pool.
            let mut left = b;
            for want_high in [true, false] {
                for (k, c) in ranked.iter().enumerate() {
                    if left > 0 && c.stratum.cls_high() == want_high {
                        keep[k] = true;
                        left -= 1;
                    }
                }
            }
        } else {
            let mut counts = [0usize; 4];
            for c in &ranked {
                counts[c.stratum.index()] += 1;
            }
            let mut quotas = self.schedule.stratum_quotas(b, counts);
            for (k, c) in ranked.iter().enumerate() {
                let q = &mut quotas[c.stratum.index()];
                if *q > 0 {
                    keep[k] = true;
                    *q -= 1;
                }
            }
        }
        ranked.into_iter().zip(keep).filter_map(|(c, k)| k.then_some(c)).collect()
    }
}

/// Folds [`MinerState::mine`] over a sequence of batches.
pub fn mine_stream<I, B>(state: &mut MinerState, batches: I) -> Result<Vec<SelectionResult>>
where
    I: IntoIterator<Item = B>,
    B: AsRef<[RoiRecord]>,
{
    batches.into_iter().map(|b| state.mine(b.as_ref())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BBox;
    use crate::schedule::ScheduleProfile;

    fn rec(roi_id: u64, l_cls: f64, l_loc: f64, x: f64) -> RoiRecord {
        let b = BBox::new(x, 0.0, x + 10.0, 10.0);
        RoiRecord {
            iteration: 0,
            image_id: 0,
            roi_id,
            true_class: 1,
            p_u: None,
            l_cls,
            l_loc,
            bbox_pred: b,
            bbox_target: Some(b),
        }
    }

    fn fixed(alpha: f64, beta: f64, b: usize) -> MiningConfig {
        MiningConfig { batch_size: b, weights: WeightPolicy::Fixed { alpha, beta }, ..Default::default() }
    }

    fn worked_example() -> Vec<RoiRecord> {
        vec![rec(0, 0.21, 0.11, 0.0), rec(1, 0.19, 0.12, 100.0)]
    }

    #[test]
    fn equal_weights_pick_a_loc_only_picks_b() {
        let mut m = MinerState::new(fixed(1.0, 1.0, 1)).unwrap();
        assert_eq!(m.mine(&worked_example()).unwrap().selected[0].roi_id, 0);
        let mut m = MinerState::new(fixed(0.0, 1.0, 1)).unwrap();
        assert_eq!(m.mine(&worked_example()).unwrap().selected[0].roi_id, 1);
    }

    #[test]
    fn empty_batch_is_not_an_error() {
        let mut m = MinerState::new(MiningConfig::default()).unwrap();
        let r = m.mine(&[]).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!((r.alpha, r.beta), (1.0, 0.0));
        assert!(mine_stream(&mut m, Vec::<Vec<RoiRecord>>::new()).unwrap().is_empty());
    }

    #[test]
    fn batch_errors() {
        let mut m = MinerState::new(MiningConfig::default()).unwrap();
        let dup = vec![rec(0, 0.1, 0.1, 0.0), rec(0, 0.2, 0.1, 50.0)];
        assert_eq!(m.mine(&dup).unwrap_err(), Error::DuplicateRoiId(0));
        let mixed = vec![rec(0, 0.1, 0.1, 0.0), RoiRecord { iteration: 1, ..rec(1, 0.2, 0.1, 50.0) }];
        assert!(matches!(m.mine(&mixed), Err(Error::MixedIterations { .. })));
        let bad = vec![RoiRecord { true_class: 0, bbox_target: None, ..rec(0, 0.1, 0.1, 0.0) }];
        assert!(matches!(m.mine(&bad), Err(Error::BackgroundWithLocLoss { .. })));
        m.mine(&[rec(0, 0.1, 0.1, 0.0)]).unwrap();
        assert!(matches!(m.mine(&[rec(0, 0.1, 0.1, 0.0)]), Err(Error::NonMonotonicIteration { .. })));
    }

    #[test]
    fn overlapping_records_are_suppressed_per_image() {
        let mut m = MinerState::new(fixed(1.0, 1.0, 10)).unwrap();
        let mut other = rec(2, 0.9, 0.0, 0.0);
        other.image_id = 1;
        let batch = vec![rec(0, 0.5, 0.1, 0.0), rec(1, 0.3, 0.1, 0.5), other];
        let r = m.mine(&batch).unwrap();
        assert_eq!(r.suppressed_count, 1);
        let ids: Vec<u64> = r.selected.iter().map(|s| s.roi_id).collect();
        assert_eq!(ids, vec![2, 0]);
    }

    #[test]
    fn ties_break_by_roi_id() {
        let mut m = MinerState::new(fixed(1.0, 1.0, 3)).unwrap();
        let batch = vec![rec(5, 0.5, 0.25, 0.0), rec(3, 0.5, 0.25, 100.0), rec(4, 0.75, 0.0, 200.0)];
        let ids: Vec<u64> = m.mine(&batch).unwrap().selected.iter().map(|s| s.roi_id).collect();
        assert_eq!(ids, vec![3, 4, 5]);
    }

    #[test]
    fn strata_mode_plateau_prefers_loc_high() {
        let profile =
            ScheduleProfile { window_iters: 1, stability_windows: 1, ramp_iters: 1, ..ScheduleProfile::voc07() };
        let config = MiningConfig {
            batch_size: 2,
            selection_mode: SelectionMode::Strata,
            schedule: profile,
            ..Default::default()
        };
        let mut m = MinerState::new(config).unwrap();
        let batch = |it: u64| -> Vec<RoiRecord> {
            [(0.9, 0.01), (0.8, 0.02), (0.1, 0.5), (0.2, 0.6)]
                .iter()
                .enumerate()
                .map(|(k, (c, l))| RoiRecord { iteration: it, ..rec(k as u64, *c, *l, 100.0 * k as f64) })
                .collect()
        };
        let mut last = None;
        for it in 0..5 {
            last = Some(m.mine(&batch(it)).unwrap());
        }
        assert_eq!(m.schedule.phase, Phase::Plateau);
        let result = last.unwrap();
        assert!(result.selected.iter().all(|s| s.stratum.loc_high()));
        assert_eq!(result.selected.len(), 2);
    }

    fn spread(l: &[(f64, f64)]) -> Vec<RoiRecord> {
        l.iter().enumerate().map(|(k, (c, g))| rec(k as u64, *c, *g, 50.0 * k as f64)).collect()
    }

    proptest::proptest! {
        #[test]
        fn no_unselected_record_beats_a_selected_one(
            losses in proptest::collection::vec((0.0..3.0f64, 0.001..2.0f64), 1..40),
            alpha in 0.01..2.0f64,
            beta in 0.0..4.0f64,
            b in 1usize..30,
        ) {
            let batch = spread(&losses);
            let r = MinerState::new(fixed(alpha, beta, b)).unwrap().mine(&batch).unwrap();
            proptest::prop_assert_eq!(r.selected.len(), b.min(batch.len()));
            let chosen: Vec<u64> = r.selected.iter().map(|s| s.roi_id).collect();
            let min_in = r.selected.iter().map(|s| s.l_select).fold(f64::INFINITY, f64::min);
            for x in batch.iter().filter(|x| !chosen.contains(&x.roi_id)) {
                proptest::prop_assert!(alpha * x.l_cls + beta * x.l_loc <= min_in);
            }
        }

        #[test]
        fn replaying_a_stream_is_deterministic(
            seeds in proptest::collection::vec(proptest::collection::vec((0.0..3.0f64, 0.001..2.0f64), 1..20), 1..8),
            strata in proptest::bool::ANY,
        ) {
            let config = MiningConfig {
                batch_size: 6,
                selection_mode: if strata { SelectionMode::Strata } else { SelectionMode::Scalar },
                ..Default::default()
            };
            let stream: Vec<Vec<RoiRecord>> = seeds
                .iter()
                .enumerate()
                .map(|(it, l)| spread(l).into_iter().map(|r| RoiRecord { iteration: it as u64, ..r }).collect())
                .collect();
            let a = mine_stream(&mut MinerState::new(config.clone()).unwrap(), &stream).unwrap();
            let b = mine_stream(&mut MinerState::new(config).unwrap(), &stream).unwrap();
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn positive_rescaling_keeps_score_order(
            x in (0.0..3.0f64, 0.0..2.0f64),
            y in (0.0..3.0f64, 0.0..2.0f64),
            alpha in 0.01..2.0f64,
            beta in 0.01..4.0f64,
            c in 0.01..100.0f64,
        ) {
            let s = |p: (f64, f64), a: f64, b: f64| selection_score(p.0, p.1, a, b).unwrap();
            let gap = s(x, alpha, beta) - s(y, alpha, beta);
            proptest::prop_assume!(gap.abs() > 1e-9);
            let scaled = s(x, c * alpha, c * beta) - s(y, c * alpha, c * beta);
            proptest::prop_assert_eq!(gap > 0.0, scaled > 0.0);
        }
    }
}
