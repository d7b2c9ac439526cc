use thiserror::Error;

/// Failures raised by the mining engine and its data model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("roi {roi_id}: {field} is not finite")]
    NonFiniteLoss { roi_id: u64, field: &'static str },
    #[error("roi {roi_id}: {field} is negative")]
    NegativeLoss { roi_id: u64, field: &'static str },
    #[error("roi {roi_id}: background record carries localization loss {l_loc}")]
    BackgroundWithLocLoss { roi_id: u64, l_loc: f64 },
    #[error("roi {roi_id}: background record carries a target box")]
    BackgroundWithTarget { roi_id: u64 },
    #[error("degenerate box [{x1}, {y1}, {x2}, {y2}]")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("roi {roi_id}: p_u = {p_u} disagrees with l_cls = {l_cls}")]
    ProbabilityMismatch { roi_id: u64, p_u: f64, l_cls: f64 },
    #[error("probability {0} outside (0, 1]")]
    DomainError(f64),
    #[error("selection weights alpha and beta are both zero")]
    BothWeightsZero,
    #[error("nms input spans several images ({first} and {other})")]
    MixedImages { first: u64, other: u64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("thresholds have not observed any batch yet")]
    ColdThresholds,
    #[error("iteration {got} does not follow {last}")]
    NonMonotonicIteration { last: u64, got: u64 },
    #[error("batch mixes iterations {first} and {other}")]
    MixedIterations { first: u64, other: u64 },
    #[error("duplicate roi_id {0} within one iteration")]
    DuplicateRoiId(u64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at iteration {iteration}: windowed loss {loss}")]
    DivergedLoss { iteration: u64, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
