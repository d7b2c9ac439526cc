//! The (alpha, beta) trajectory.
//!
//! Selection starts on classification loss alone (`alpha = 1, beta = 0`).
//! Per-iteration batch means are averaged over fixed windows; once the total
//! loss has changed by less than `stability_rel_delta` (relative) across the
//! last `stability_windows` windows, beta ramps linearly to its target over
//! `ramp_iters` iterations and then stays there. Alpha is held at 1: top-k
//! selection only depends on the ratio beta / alpha.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaTarget {
    Fixed(f64),
    /// Ratio of smoothed classification to localization loss at ramp start.
    AutoRatio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleProfile {
    pub beta_target: BetaTarget,
    pub ramp_iters: u64,
    pub window_iters: u64,
    pub stability_rel_delta: f64,
    pub stability_windows: usize,
    pub min_stability_iter: u64,
    pub auto_ratio_clamp: (f64, f64),
    /// EWMA decay of per-iteration means feeding the auto ratio.
    pub ratio_decay: f64,
}

pub const VOC07_BETA: f64 = 1.9;
pub const KITTI12_BETA: f64 = 2.3;

impl Default for ScheduleProfile {
    fn default() -> Self {
        Self::voc07()
    }
}

impl ScheduleProfile {
    fn with_target(beta_target: BetaTarget) -> Self {
        Self {
            beta_target,
            ramp_iters: 10_000,
            window_iters: 1_000,
            stability_rel_delta: 0.02,
            stability_windows: 5,
            min_stability_iter: 0,
            auto_ratio_clamp: (1.0, 4.0),
            ratio_decay: 0.99,
        }
    }

    pub fn voc07() -> Self {
        Self::with_target(BetaTarget::Fixed(VOC07_BETA))
    }

    pub fn kitti12() -> Self {
        Self::with_target(BetaTarget::Fixed(KITTI12_BETA))
    }

    pub fn auto() -> Self {
        Self::with_target(BetaTarget::AutoRatio)
    }

    /// Looks up a preset: `voc07`, `kitti12` or `auto`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "voc07" => Some(Self::voc07()),
            "kitti12" => Some(Self::kitti12()),
            "auto" => Some(Self::auto()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if let BetaTarget::Fixed(b) = self.beta_target {
            if !(b.is_finite() && b > 0.0) {
                return bad("beta target must be finite and > 0");
            }
        }
        if self.ramp_iters == 0 || self.window_iters == 0 || self.stability_windows == 0 {
            return bad("ramp_iters, window_iters and stability_windows must be > 0");
        }
        if !(self.stability_rel_delta > 0.0 && self.stability_rel_delta.is_finite()) {
            return bad("stability_rel_delta must be > 0");
        }
        let (lo, hi) = self.auto_ratio_clamp;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("auto_ratio_clamp must satisfy 0 < lo <= hi");
        }
        if !(self.ratio_decay > 0.0 && self.ratio_decay < 1.0) {
            return bad("ratio_decay must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Ramping { start_iter: u64 },
    Plateau,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub profile: ScheduleProfile,
    pub phase: Phase,
    pub alpha: f64,
    pub beta: f64,
    pub beta_target: Option<f64>,
    /// Most recent completed window means, oldest first.
    pub window_means_cls: VecDeque<f64>,
    pub window_means_loc: VecDeque<f64>,
    pub completed_windows: u64,
    window_sum_cls: f64,
    window_sum_loc: f64,
    window_len: u64,
    ewma_cls: Option<f64>,
    ewma_loc: Option<f64>,
    last_iteration: Option<u64>,
}

impl ScheduleState {
    pub fn new(profile: ScheduleProfile) -> Self {
        Self {
            profile,
            phase: Phase::Warmup,
            alpha: 1.0,
            beta: 0.0,
            beta_target: None,
            window_means_cls: VecDeque::new(),
            window_means_loc: VecDeque::new(),
            completed_windows: 0,
            window_sum_cls: 0.0,
            window_sum_loc: 0.0,
            window_len: 0,
            ewma_cls: None,
            ewma_loc: None,
            last_iteration: None,
        }
    }

    /// Records one iteration's mean losses.
    pub fn observe_losses(&mut self, iteration: u64, mean_l_cls: f64, mean_l_loc: f64) -> Result<()> {
        if let Some(last) = self.last_iteration {
            if iteration <= last {
                return Err(Error::NonMonotonicIteration { last, got: iteration });
            }
        }
        self.last_iteration = Some(iteration);

        let d = self.profile.ratio_decay;
        self.ewma_cls = Some(self.ewma_cls.map_or(mean_l_cls, |e| d * e + (1.0 - d) * mean_l_cls));
        self.ewma_loc = Some(self.ewma_loc.map_or(mean_l_loc, |e| d * e + (1.0 - d) * mean_l_loc));

        self.window_sum_cls += mean_l_cls;
        self.window_sum_loc += mean_l_loc;
        self.window_len += 1;
        if self.window_len == self.profile.window_iters {
            let n = self.window_len as f64;
            self.window_means_cls.push_back(self.window_sum_cls / n);
            self.window_means_loc.push_back(self.window_sum_loc / n);
            let cap = self.profile.stability_windows + 1;
            while self.window_means_cls.len() > cap {
                self.window_means_cls.pop_front();
                self.window_means_loc.pop_front();
            }
            self.completed_windows += 1;
            self.window_sum_cls = 0.0;
            self.window_sum_loc = 0.0;
            self.window_len = 0;
        }
        Ok(())
    }

    /// True once each of the last `m` windows moved the total loss by less
    /// than the relative tolerance.
    pub fn is_stable(&self, iteration: u64) -> bool {
        let m = self.profile.stability_windows;
        if iteration < self.profile.min_stability_iter || self.window_means_cls.len() < m + 1 {
            return false;
        }
        let totals: Vec<f64> = self.window_means_cls.iter().zip(&self.window_means_loc).map(|(c, l)| c + l).collect();
        totals[totals.len() - (m + 1)..].windows(2).all(|w| {
            let (prev, cur) = (w[0], w[1]);
            if prev == 0.0 {
                cur == 0.0
            } else {
                ((cur - prev) / prev).abs() < self.profile.stability_rel_delta
            }
        })
    }

    fn resolve_target(&self) -> f64 {
        match self.profile.beta_target {
            BetaTarget::Fixed(b) => b,
            BetaTarget::AutoRatio => {
                let (lo, hi) = self.profile.auto_ratio_clamp;
                match (self.ewma_cls, self.ewma_loc) {
                    (Some(c), Some(l)) if l > 0.0 => (c / l).clamp(lo, hi),
                    _ => hi,
                }
            }
        }
    }

    /// Advances the phase for `iteration` and returns `(alpha, beta)`.
    pub fn current_weights(&mut self, iteration: u64) -> (f64, f64) {
        if self.phase == Phase::Warmup && self.is_stable(iteration) {
            self.beta_target = Some(self.resolve_target());
            self.phase = Phase::Ramping { start_iter: iteration };
        }
        if let Phase::Ramping { start_iter } = self.phase {
            let target = self.beta_target.unwrap_or(0.0);
            let frac = (iteration.saturating_sub(start_iter) as f64 / self.profile.ramp_iters as f64).min(1.0);
            // ramp never steps backwards, even if called with an older iteration
            self.beta = self.beta.max(target * frac);
            if frac >= 1.0 {
                self.phase = Phase::Plateau;
                self.beta = target;
            }
        }
        (self.alpha, self.beta)
    }

    /// `beta / beta_target`, 0 before the ramp starts.
    pub fn ramp_fraction(&self) -> f64 {
        match self.beta_target {
            Some(t) if t > 0.0 => (self.beta / t).clamp(0.0, 1.0),
            _ => 0.0,
        }
    }

    pub fn stratum_quotas(&self, batch_size: usize, counts: [usize; 4]) -> [usize; 4] {
        stratum_quotas(self.ramp_fraction(), batch_size, counts)
    }
}

/// Splits `total` between two strata in proportion to their sizes.
fn proportional_split(total: usize, a: usize, b: usize) -> (usize, usize) {
    if a + b == 0 {
        return (0, 0);
    }
    let fa = (total * a + (a + b) / 2) / (a + b);
    (fa, total - fa)
}

/// Per-stratum sample sizes `[f1, f2, f3, f4]`.
///
/// `ramp` in `[0, 1]` moves the loc-high share (s1 and s3) from half the
/// batch to all of it. Shares are capped by stratum size; the shortfall is
/// refilled in order s1, s2, s3, s4. The result sums to `min(B, Σcounts)`.
pub fn stratum_quotas(ramp: f64, batch_size: usize, counts: [usize; 4]) -> [usize; 4] {
    let ramp = ramp.clamp(0.0, 1.0);
    let loc_share = ((batch_size as f64) * (0.5 + 0.5 * ramp)).round() as usize;
    let loc_share = loc_share.min(batch_size);
    let (f1, f3) = proportional_split(loc_share, counts[0], counts[2]);
    let (f2, f4) = proportional_split(batch_size - loc_share, counts[1], counts[3]);

    let mut quotas = [f1, f2, f3, f4];
    for (q, c) in quotas.iter_mut().zip(counts) {
        *q = (*q).min(c);
    }
    let target = batch_size.min(counts.iter().sum());
    let mut deficit = target - quotas.iter().sum::<usize>();
    for (q, c) in quotas.iter_mut().zip(counts) {
        let add = deficit.min(c - *q);
        *q += add;
        deficit -= add;
    }
    quotas
}
