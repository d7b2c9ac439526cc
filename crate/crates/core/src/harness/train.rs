//! Training loop: synthetic batches, forward pass, mining, and one SGD step
//! on the selected candidates per iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::{evaluate_ap, ApReport};
use super::model::ToyModel;
use super::scene::{generate_scene, Candidate, SceneSpec, SyntheticScene};
use crate::domain::{MiningConfig, RoiRecord, SelectionResult, WeightPolicy};
use crate::error::{Error, Result};
use crate::miner::MinerState;
use crate::schedule::{BetaTarget, Phase, ScheduleProfile};

/// Windowed means above this abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Plateau β of the harness S-OHEM arm.
pub const HARNESS_BETA: f64 = 4.0;

/// IoU thresholds reported by [`evaluate_run`].
pub const AP_THRESHOLDS: [f64; 3] = [0.5, 0.6, 0.7];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerSpec {
    pub scene: SceneSpec,
    pub iterations: u64,
    pub lr_cls: f64,
    pub lr_reg: f64,
    /// Both step sizes are multiplied by `lr_gamma` every `lr_step_every` iterations.
    pub lr_step_every: u64,
    pub lr_gamma: f64,
    pub log_window: u64,
    pub eval_scenes: usize,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            iterations: 20_000,
            lr_cls: 0.05,
            lr_reg: 1e-4,
            lr_step_every: 10_000,
            lr_gamma: 0.1,
            log_window: 250,
            eval_scenes: 100,
        }
    }
}

/// The S-OHEM arm used by the harness: 20K iterations stand in for 80K,
/// so the loss window and ramp are scaled by a quarter. β ramps to 4, the
/// upper end of the auto-ratio clamp.
pub fn sohem_config() -> MiningConfig {
    MiningConfig {
        batch_size: 32,
        images_per_batch: 2,
        schedule: ScheduleProfile {
            beta_target: BetaTarget::Fixed(HARNESS_BETA),
            window_iters: 250,
            ramp_iters: 2_500,
            stability_rel_delta: 0.05,
            ..ScheduleProfile::auto()
        },
        ..MiningConfig::default()
    }
}

/// Equal-weight OHEM control arm.
pub fn ohem_config() -> MiningConfig {
    MiningConfig { weights: WeightPolicy::OHEM_BASELINE, ..sohem_config() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    /// Last iteration of the window.
    pub end_iteration: u64,
    pub mean_l_cls: f64,
    pub mean_l_loc: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Share of selected candidates that are foreground.
    pub fg_selected: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTrace {
    pub windows: Vec<WindowStats>,
    pub ramp_start: Option<u64>,
}

impl MetricsTrace {
    pub fn final_window(&self) -> Option<&WindowStats> {
        self.windows.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub trace: MetricsTrace,
    pub model: ToyModel,
}

/// Turns one iteration's candidates into loss records.
pub fn build_records(model: &ToyModel, iteration: u64, images: &[(u64, &[Candidate])]) -> Vec<RoiRecord> {
    let mut records = Vec::new();
    let mut roi_id = 0;
    for (image_id, candidates) in images {
        for c in *candidates {
            let fwd = model.forward(c);
            let p_u = (-fwd.l_cls).exp();
            records.push(RoiRecord {
                iteration,
                image_id: *image_id,
                roi_id,
                true_class: c.label,
                p_u: (p_u > 0.0).then_some(p_u),
                l_cls: fwd.l_cls,
                l_loc: fwd.l_loc,
                bbox_pred: c.bbox,
                bbox_target: c.target,
            });
            roi_id += 1;
        }
    }
    records
}

fn scene_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Held-out scenes drawn from a stream disjoint from training.
pub fn eval_scenes(spec: &TrainerSpec, seed: u64) -> Vec<SyntheticScene> {
    let mut rng = scene_rng(seed ^ 0x5eed_e7a1_0000_0001);
    (0..spec.eval_scenes).map(|_| generate_scene(&mut rng, &spec.scene)).collect()
}

/// Trains with no observer.
pub fn train(config: &MiningConfig, spec: &TrainerSpec, seed: u64) -> Result<TrainingRun> {
    train_observed(config, spec, seed, |_, _| {})
}

/// Trains and hands every iteration's records and selection to `observe`.
pub fn train_observed<F>(config: &MiningConfig, spec: &TrainerSpec, seed: u64, mut observe: F) -> Result<TrainingRun>
where
    F: FnMut(&[RoiRecord], &SelectionResult),
{
    let mut miner = MinerState::new(config.clone())?;
    let mut model = ToyModel::new(spec.scene.num_classes, spec.scene.feature_dim());
    let mut rng = scene_rng(seed);
    let mut trace = MetricsTrace::default();
    let n_images = config.images_per_batch as u64;
    let cls_rows = model.num_outputs * model.feature_dim;

    let (mut sum_cls, mut sum_loc, mut sum_fg, mut in_window) = (0.0, 0.0, 0.0, 0u64);
    for iteration in 0..spec.iterations {
        let scenes: Vec<SyntheticScene> = (0..n_images).map(|_| generate_scene(&mut rng, &spec.scene)).collect();
        let images: Vec<(u64, &[Candidate])> = scenes
            .iter()
            .enumerate()
            .map(|(k, s)| (iteration * n_images + k as u64, s.candidates.as_slice()))
            .collect();
        let flat: Vec<&Candidate> = scenes.iter().flat_map(|s| &s.candidates).collect();
        let records = build_records(&model, iteration, &images);
        let selection = miner.mine(&records)?;
        observe(&records, &selection);

        if trace.ramp_start.is_none() {
            if let Phase::Ramping { start_iter } = miner.schedule.phase {
                trace.ramp_start = Some(start_iter);
            }
        }

        let n = records.len().max(1) as f64;
        sum_cls += records.iter().map(|r| r.l_cls).sum::<f64>() / n;
        sum_loc += records.iter().map(|r| r.l_loc).sum::<f64>() / n;
        let chosen: Vec<&Candidate> = selection.selected.iter().map(|s| flat[s.roi_id as usize]).collect();
        sum_fg += chosen.iter().filter(|c| c.is_foreground()).count() as f64 / chosen.len().max(1) as f64;
        in_window += 1;

        let decay = spec.lr_gamma.powi((iteration / spec.lr_step_every.max(1)) as i32);
        let (_, grad) = model.loss_and_grad(&chosen);
        for (k, (p, g)) in model.params.iter_mut().zip(&grad).enumerate() {
            let lr = if k < cls_rows { spec.lr_cls } else { spec.lr_reg };
            *p -= lr * decay * g;
        }

        if in_window == spec.log_window {
            let w = in_window as f64;
            let stats = WindowStats {
                end_iteration: iteration,
                mean_l_cls: sum_cls / w,
                mean_l_loc: sum_loc / w,
                alpha: selection.alpha,
                beta: selection.beta,
                fg_selected: sum_fg / w,
            };
            let worst = stats.mean_l_cls.max(stats.mean_l_loc);
            if !worst.is_finite() || worst > DIVERGENCE_LIMIT {
                return Err(Error::DivergedLoss { iteration, loss: worst });
            }
            trace.windows.push(stats);
            (sum_cls, sum_loc, sum_fg, in_window) = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok(TrainingRun { trace, model })
}

/// mAP of a trained model at each of [`AP_THRESHOLDS`] on held-out scenes.
pub fn evaluate_run(model: &ToyModel, spec: &TrainerSpec, seed: u64) -> Vec<ApReport> {
    let scenes = eval_scenes(spec, seed);
    AP_THRESHOLDS.iter().map(|t| evaluate_ap(model, &scenes, *t)).collect()
}
