//! Shared value types: boxes, per-candidate loss records, configuration and
//! selection results. The serde shapes here are the on-disk JSONL schemas.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::ScheduleProfile;

/// Tolerance on `l_cls = -ln(p_u)` when both are supplied.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in corner form, continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Checks finiteness and strictly positive extent.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if finite && self.x2 > self.x1 && self.y2 > self.y1 {
            Ok(())
        } else {
            Err(Error::DegenerateBox { x1: self.x1, y1: self.y1, x2: self.x2, y2: self.y2 })
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Box of the given center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// One candidate region at one training iteration, with its per-task losses.
///
/// Class `0` is background. Background records carry no localization loss
/// and no target box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiRecord {
    #[serde(rename = "iter")]
    pub iteration: u64,
    pub image_id: u64,
    pub roi_id: u64,
    #[serde(rename = "u")]
    pub true_class: u32,
    pub p_u: Option<f64>,
    pub l_cls: f64,
    pub l_loc: f64,
    #[serde(rename = "pred")]
    pub bbox_pred: BBox,
    #[serde(rename = "target")]
    pub bbox_target: Option<BBox>,
}

impl RoiRecord {
    pub fn is_background(&self) -> bool {
        self.true_class == 0
    }
}

/// Returns `Ok(())` iff every record invariant holds.
pub fn validate_record(r: &RoiRecord) -> Result<()> {
    for (field, v) in [("l_cls", r.l_cls), ("l_loc", r.l_loc)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { roi_id: r.roi_id, field });
        }
        if v < 0.0 {
            return Err(Error::NegativeLoss { roi_id: r.roi_id, field });
        }
    }
    if r.is_background() {
        if r.l_loc != 0.0 {
            return Err(Error::BackgroundWithLocLoss { roi_id: r.roi_id, l_loc: r.l_loc });
        }
        if r.bbox_target.is_some() {
            return Err(Error::BackgroundWithTarget { roi_id: r.roi_id });
        }
    }
    r.bbox_pred.validate()?;
    if let Some(target) = &r.bbox_target {
        target.validate()?;
    }
    if let Some(p) = r.p_u {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::DomainError(p));
        }
        if (-p.ln() - r.l_cls).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::ProbabilityMismatch { roi_id: r.roi_id, p_u: p, l_cls: r.l_cls });
        }
    }
    Ok(())
}

/// The four strata, keyed by (classification high, localization high).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StratumId {
    /// high cls, high loc
    S1,
    /// high cls, low loc
    S2,
    /// low cls, high loc
    S3,
    /// low cls, low loc
    S4,
}

impl StratumId {
    pub const ALL: [StratumId; 4] = [StratumId::S1, StratumId::S2, StratumId::S3, StratumId::S4];

    pub fn from_flags(cls_high: bool, loc_high: bool) -> Self {
        match (cls_high, loc_high) {
            (true, true) => StratumId::S1,
            (true, false) => StratumId::S2,
            (false, true) => StratumId::S3,
            (false, false) => StratumId::S4,
        }
    }

    pub fn cls_high(self) -> bool {
        matches!(self, StratumId::S1 | StratumId::S2)
    }

    pub fn loc_high(self) -> bool {
        matches!(self, StratumId::S1 | StratumId::S3)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StratumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.index() + 1)
    }
}

/// A stratum predicate with the sample size it must supply this iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumConstraint {
    pub stratum: StratumId,
    pub required_size: usize,
}

impl StratumConstraint {
    pub fn matches(&self, cls_high: bool, loc_high: bool) -> bool {
        StratumId::from_flags(cls_high, loc_high) == self.stratum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Top-B by the weighted selection score.
    Scalar,
    /// Per-stratum quotas, top-by-score inside each stratum.
    Strata,
}

/// Where the (alpha, beta) pair comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightPolicy {
    /// Follow the warmup / ramp / plateau schedule.
    Scheduled,
    /// Frozen weights. `(1, 1)` is plain equal-weight OHEM.
    Fixed { alpha: f64, beta: f64 },
}

impl WeightPolicy {
    pub const OHEM_BASELINE: WeightPolicy = WeightPolicy::Fixed { alpha: 1.0, beta: 1.0 };
}

/// Every tunable of the miner.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub batch_size: usize,
    pub images_per_batch: usize,
    pub nms_iou_threshold: f64,
    pub selection_mode: SelectionMode,
    pub weights: WeightPolicy,
    pub threshold_quantile: f64,
    pub threshold_decay: f64,
    /// In strata mode during warmup, fill the whole batch from the
    /// high-classification strata first (reduces to top-B by `l_cls`).
    pub warmup_cls_priority: bool,
    pub schedule: ScheduleProfile,
    pub rng_seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            images_per_batch: 2,
            nms_iou_threshold: 0.7,
            selection_mode: SelectionMode::Scalar,
            weights: WeightPolicy::Scheduled,
            threshold_quantile: 0.5,
            threshold_decay: 0.99,
            warmup_cls_priority: true,
            schedule: ScheduleProfile::default(),
            rng_seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be > 0");
        }
        if self.images_per_batch == 0 {
            return bad("images_per_batch must be > 0");
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold <= 1.0) {
            return bad("nms_iou_threshold must lie in (0, 1]");
        }
        if !(self.threshold_quantile > 0.0 && self.threshold_quantile < 1.0) {
            return bad("threshold_quantile must lie in (0, 1)");
        }
        if !(self.threshold_decay > 0.0 && self.threshold_decay < 1.0) {
            return bad("threshold_decay must lie in (0, 1)");
        }
        if let WeightPolicy::Fixed { alpha, beta } = self.weights {
            if !(alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0) {
                return bad("fixed weights must be finite and non-negative");
            }
            if alpha == 0.0 && beta == 0.0 {
                return Err(Error::BothWeightsZero);
            }
        }
        self.schedule.validate()
    }
}

/// One chosen record, as written to the selection log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRoi {
    pub roi_id: u64,
    pub image_id: u64,
    pub l_select: f64,
    pub stratum: StratumId,
}

/// Output of one mining step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    #[serde(rename = "iter")]
    pub iteration: u64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "suppressed")]
    pub suppressed_count: usize,
    pub selected: Vec<SelectedRoi>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn background() -> RoiRecord {
        RoiRecord {
            iteration: 0,
            image_id: 0,
            roi_id: 7,
            true_class: 0,
            p_u: None,
            l_cls: 0.4,
            l_loc: 0.0,
            bbox_pred: BBox::new(0.0, 0.0, 10.0, 10.0),
            bbox_target: None,
        }
    }

    #[test]
    fn background_without_loc_loss_is_valid() {
        assert_eq!(validate_record(&background()), Ok(()));
    }

    #[test]
    fn background_with_loc_loss_is_rejected() {
        let r = RoiRecord { l_loc: 0.12, ..background() };
        assert!(matches!(validate_record(&r), Err(Error::BackgroundWithLocLoss { roi_id: 7, .. })));
    }

    #[test]
    fn zero_width_box_is_rejected() {
        let r = RoiRecord { bbox_pred: BBox::new(5.0, 0.0, 5.0, 10.0), ..background() };
        assert!(matches!(validate_record(&r), Err(Error::DegenerateBox { .. })));
    }

    #[test]
    fn non_finite_and_negative_losses() {
        let r = RoiRecord { l_cls: f64::NAN, ..background() };
        assert!(matches!(validate_record(&r), Err(Error::NonFiniteLoss { field: "l_cls", .. })));
        let r = RoiRecord { l_cls: -0.1, ..background() };
        assert!(matches!(validate_record(&r), Err(Error::NegativeLoss { field: "l_cls", .. })));
    }

    #[test]
    fn probability_must_match_log_loss() {
        let ok = RoiRecord { p_u: Some(0.5), l_cls: std::f64::consts::LN_2, ..background() };
        assert_eq!(validate_record(&ok), Ok(()));
        let off = RoiRecord { p_u: Some(0.5), l_cls: 0.7, ..background() };
        assert!(matches!(validate_record(&off), Err(Error::ProbabilityMismatch { .. })));
        let zero = RoiRecord { p_u: Some(0.0), ..background() };
        assert!(matches!(validate_record(&zero), Err(Error::DomainError(_))));
    }

    #[test]
    fn background_target_box_is_rejected() {
        let r = RoiRecord { bbox_target: Some(BBox::new(0.0, 0.0, 1.0, 1.0)), ..background() };
        assert!(matches!(validate_record(&r), Err(Error::BackgroundWithTarget { .. })));
    }

    #[test]
    fn record_json_uses_wire_names() {
        let r = background();
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(
            line,
            r#"{"iter":0,"image_id":0,"roi_id":7,"u":0,"p_u":null,"l_cls":0.4,"l_loc":0.0,"pred":[0.0,0.0,10.0,10.0],"target":null}"#
        );
    }

    #[test]
    fn stratum_flags_and_display() {
        for s in StratumId::ALL {
            assert_eq!(StratumId::from_flags(s.cls_high(), s.loc_high()), s);
        }
        assert_eq!(StratumId::S3.to_string(), "s3");
        assert_eq!(serde_json::to_string(&StratumId::S4).unwrap(), "\"s4\"");
    }

    #[test]
    fn config_defaults_validate() {
        assert_eq!(MiningConfig::default().validate(), Ok(()));
        let zero = MiningConfig { weights: WeightPolicy::Fixed { alpha: 0.0, beta: 0.0 }, ..Default::default() };
        assert_eq!(zero.validate(), Err(Error::BothWeightsZero));
    }
}
