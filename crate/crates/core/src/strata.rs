//! Running high/low loss thresholds and stratum assignment.

use crate::domain::{RoiRecord, StratumId};
use crate::error::{Error, Result};

/// EWMA-smoothed batch quantiles of `l_cls` and `l_loc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    pub theta_cls: f64,
    pub theta_loc: f64,
    pub quantile: f64,
    pub decay: f64,
    pub warm: bool,
    /// Set once a batch containing foreground has been seen.
    pub loc_warm: bool,
}

impl ThresholdState {
    pub fn new(quantile: f64, decay: f64) -> Self {
        Self { theta_cls: 0.0, theta_loc: 0.0, quantile, decay, warm: false, loc_warm: false }
    }

    /// Folds one batch into the thresholds.
    pub fn update(&mut self, batch: &[RoiRecord]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let q_cls = quantile(batch.iter().map(|r| r.l_cls).collect(), self.quantile);
        self.theta_cls = if self.warm { self.blend(self.theta_cls, q_cls) } else { q_cls };
        self.warm = true;

        let fg: Vec<f64> = batch.iter().filter(|r| !r.is_background()).map(|r| r.l_loc).collect();
        if !fg.is_empty() {
            let q_loc = quantile(fg, self.quantile);
            self.theta_loc = if self.loc_warm { self.blend(self.theta_loc, q_loc) } else { q_loc };
            self.loc_warm = true;
        }
        Ok(())
    }

    fn blend(&self, old: f64, new: f64) -> f64 {
        self.decay * old + (1.0 - self.decay) * new
    }

    /// Maps a record to its stratum. Equality with a threshold counts as high.
    pub fn assign(&self, r: &RoiRecord) -> Result<StratumId> {
        if !self.warm {
            return Err(Error::ColdThresholds);
        }
        let cls_high = r.l_cls >= self.theta_cls;
        // Until foreground has been seen every l_loc so far was zero.
        let loc_high = self.loc_warm && r.l_loc >= self.theta_loc;
        Ok(StratumId::from_flags(cls_high, loc_high))
    }
}

/// Functional form of [`ThresholdState::update`].
pub fn update_thresholds(state: &ThresholdState, batch: &[RoiRecord]) -> Result<ThresholdState> {
    let mut next = state.clone();
    next.update(batch)?;
    Ok(next)
}

pub fn assign_stratum(r: &RoiRecord, state: &ThresholdState) -> Result<StratumId> {
    state.assign(r)
}

/// Linear-interpolated sample quantile. `values` must be non-empty.
pub(crate) fn quantile(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}
