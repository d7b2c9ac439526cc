//! Linear two-head detector: softmax classifier and class-agnostic box
//! regressor over the synthetic candidate features.

use super::scene::{Candidate, TARGET_STDS};
use crate::domain::BBox;
use crate::loss::{offsets_to_box, smooth_l1, smooth_l1_grad, OffsetVector};

/// Forward outputs for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probs: Vec<f64>,
    /// Scaled offsets.
    pub offsets: [f64; 4],
    pub l_cls: f64,
    pub l_loc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub num_outputs: usize,
    pub feature_dim: usize,
    /// Classifier rows followed by the four regressor rows, row-major.
    pub params: Vec<f64>,
}

impl ToyModel {
    /// Zero-initialized model; `num_classes` excludes background.
    pub fn new(num_classes: u32, feature_dim: usize) -> Self {
        let num_outputs = num_classes as usize + 1;
        Self { num_outputs, feature_dim, params: vec![0.0; (num_outputs + 4) * feature_dim] }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.params[r * self.feature_dim..(r + 1) * self.feature_dim]
    }

    fn dot(&self, r: usize, x: &[f64]) -> f64 {
        self.row(r).iter().zip(x).map(|(w, v)| w * v).sum()
    }

    pub fn forward(&self, c: &Candidate) -> Forward {
        let x = &c.features;
        let logits: Vec<f64> = (0..self.num_outputs).map(|k| self.dot(k, x)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let probs: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
        let l_cls = (log_z - logits[c.label as usize]).max(0.0);

        let offsets = [0, 1, 2, 3].map(|k| self.dot(self.num_outputs + k, x));
        let l_loc = match &c.target_offsets {
            Some(t) if c.is_foreground() => offsets.iter().zip(t).map(|(p, t)| smooth_l1(p - t)).sum(),
            _ => 0.0,
        };
        Forward { probs, offsets, l_cls, l_loc }
    }

    /// Adds the gradient of `l_cls + l_loc` for one candidate into `grad`.
    pub fn accumulate_grad(&self, c: &Candidate, fwd: &Forward, weight: f64, grad: &mut [f64]) {
        let d = self.feature_dim;
        let x = &c.features;
        for k in 0..self.num_outputs {
            let coeff = weight * (fwd.probs[k] - if k == c.label as usize { 1.0 } else { 0.0 });
            for (g, v) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                *g += coeff * v;
            }
        }
        if let (true, Some(t)) = (c.is_foreground(), &c.target_offsets) {
            for (k, (o, tk)) in fwd.offsets.iter().zip(t).enumerate() {
                let coeff = weight * smooth_l1_grad(o - tk);
                let r = self.num_outputs + k;
                for (g, v) in grad[r * d..(r + 1) * d].iter_mut().zip(x) {
                    *g += coeff * v;
                }
            }
        }
    }

    /// Mean loss and its gradient over `candidates`.
    pub fn loss_and_grad(&self, candidates: &[&Candidate]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        if candidates.is_empty() {
            return (0.0, grad);
        }
        let w = 1.0 / candidates.len() as f64;
        let mut loss = 0.0;
        for c in candidates {
            let fwd = self.forward(c);
            loss += w * (fwd.l_cls + fwd.l_loc);
            self.accumulate_grad(c, &fwd, w, &mut grad);
        }
        (loss, grad)
    }

    /// Best foreground class, its probability, and the regressed box.
    pub fn detect(&self, c: &Candidate) -> (u32, f64, BBox) {
        let fwd = self.forward(c);
        let (class, score) =
            fwd.probs
                .iter()
                .enumerate()
                .skip(1)
                .fold((1, f64::NEG_INFINITY), |acc, (k, p)| if *p > acc.1 { (k, *p) } else { acc });
        let t = [0, 1, 2, 3].map(|k| fwd.offsets[k] * TARGET_STDS[k]);
        (class as u32, score, offsets_to_box(&OffsetVector::from_array(t), &c.bbox))
    }
}
