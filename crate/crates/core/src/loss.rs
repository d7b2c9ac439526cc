//! Loss and geometry primitives: log loss, smooth L1, box offsets, IoU and
//! the weighted selection score used to rank hard examples.

use crate::domain::BBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Base10,
}

/// `-log(p_u)` in the requested base.
pub fn log_loss(p_u: f64, base: LogBase) -> Result<f64> {
    if !(p_u > 0.0 && p_u <= 1.0) {
        return Err(Error::DomainError(p_u));
    }
    let loss = match base {
        LogBase::Natural => -p_u.ln(),
        LogBase::Base10 => -p_u.log10(),
    };
    // -log(1) is -0.0
    Ok(loss.max(0.0))
}

/// Quadratic inside |x| < 1, linear outside.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Derivative of [`smooth_l1`].
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// The non-negative `x` with `smooth_l1(x) == loss`.
pub fn smooth_l1_inverse(loss: f64) -> f64 {
    if loss < 0.5 {
        (2.0 * loss.max(0.0)).sqrt()
    } else {
        loss + 0.5
    }
}

/// Box regression offsets relative to a reference box: center shifts scaled
/// by the reference size, log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffsetVector {
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
}

impl OffsetVector {
    pub const fn new(t_x: f64, t_y: f64, t_w: f64, t_h: f64) -> Self {
        Self { t_x, t_y, t_w, t_h }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.t_x, self.t_y, self.t_w, self.t_h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Sum of per-coordinate smooth L1 between two offset vectors.
pub fn loc_loss(pred: &OffsetVector, target: &OffsetVector) -> f64 {
    pred.to_array().iter().zip(target.to_array()).map(|(p, t)| smooth_l1(p - t)).sum()
}

/// Encodes `bbox` relative to `anchor`.
pub fn box_to_offsets(bbox: &BBox, anchor: &BBox) -> Result<OffsetVector> {
    bbox.validate()?;
    anchor.validate()?;
    let (cx, cy) = bbox.center();
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok(OffsetVector {
        t_x: (cx - ax) / aw,
        t_y: (cy - ay) / ah,
        t_w: (bbox.width() / aw).ln(),
        t_h: (bbox.height() / ah).ln(),
    })
}

/// Inverse of [`box_to_offsets`].
pub fn offsets_to_box(offsets: &OffsetVector, anchor: &BBox) -> BBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    BBox::from_center(ax + offsets.t_x * aw, ay + offsets.t_y * ah, aw * offsets.t_w.exp(), ah * offsets.t_h.exp())
}

/// Intersection over union, 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// `alpha * l_cls + beta * l_loc`.
pub fn selection_score(l_cls: f64, l_loc: f64, alpha: f64, beta: f64) -> Result<f64> {
    if alpha == 0.0 && beta == 0.0 {
        return Err(Error::BothWeightsZero);
    }
    Ok(alpha * l_cls + beta * l_loc)
}
