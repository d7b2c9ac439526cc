//! Stratified online hard example mining.
//!
//! The engine consumes per-candidate classification and localization losses,
//! removes co-located candidates with loss-ranked NMS, and picks the hard
//! examples to backpropagate under a schedule that shifts selection weight
//! from classification toward localization once training loss settles.
//! [`harness`] is a small synthetic detector used to exercise the engine.

pub mod cli;
pub mod domain;
pub mod error;
pub mod harness;
pub mod io;
pub mod loss;
pub mod miner;
pub mod nms;
pub mod schedule;
pub mod strata;

pub use domain::{
    validate_record, BBox, MiningConfig, RoiRecord, SelectedRoi, SelectionMode, SelectionResult, StratumConstraint,
    StratumId, WeightPolicy,
};
pub use error::{Error, Result};
pub use miner::{mine_stream, MinerState};
pub use schedule::{BetaTarget, Phase, ScheduleProfile, ScheduleState};
pub use strata::ThresholdState;
