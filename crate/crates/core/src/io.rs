//! File formats: record and selection JSONL streams, the flat key-value
//! miner configuration, and metrics CSV.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::domain::{MiningConfig, RoiRecord, SelectionMode, SelectionResult, WeightPolicy};
use crate::harness::{ApReport, MetricsTrace};
use crate::schedule::{BetaTarget, ScheduleProfile};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: iteration {iteration} appears after iteration {previous}")]
    OutOfOrder { line: usize, iteration: u64, previous: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse { line, message: message.into() }
}

/// One record per non-blank line. Line numbers are 1-based.
pub fn parse_record_line(line_no: usize, text: &str) -> Result<RoiRecord, FormatError> {
    serde_json::from_str(text).map_err(|e| parse_err(line_no, e.to_string()))
}

pub fn record_line(r: &RoiRecord) -> String {
    serde_json::to_string(r).expect("records serialize")
}

pub fn selection_line(s: &SelectionResult) -> String {
    serde_json::to_string(s).expect("selections serialize")
}

pub fn parse_selection_line(line_no: usize, text: &str) -> Result<SelectionResult, FormatError> {
    serde_json::from_str(text).map_err(|e| parse_err(line_no, e.to_string()))
}

/// A batch of records sharing one iteration, with the line where it began.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationBatch {
    pub iteration: u64,
    pub first_line: usize,
    pub records: Vec<RoiRecord>,
}

/// Streams a record log as per-iteration batches.
///
/// Records of one iteration must be contiguous and iterations must increase
/// through the file.
pub struct BatchReader<R> {
    lines: std::iter::Enumerate<io::Lines<R>>,
    pending: Option<(usize, RoiRecord)>,
    last_iteration: Option<u64>,
    pub records_read: usize,
}

impl<R: BufRead> BatchReader<R> {
    pub fn new(reader: R) -> Self {
        Self { lines: reader.lines().enumerate(), pending: None, last_iteration: None, records_read: 0 }
    }

    fn next_record(&mut self) -> Option<Result<(usize, RoiRecord), FormatError>> {
        if let Some(p) = self.pending.take() {
            return Some(Ok(p));
        }
        for (idx, line) in self.lines.by_ref() {
            let line_no = idx + 1;
            let text = match line {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            if text.trim().is_empty() {
                continue;
            }
            self.records_read += 1;
            return Some(parse_record_line(line_no, &text).map(|r| (line_no, r)));
        }
        None
    }
}

impl<R: BufRead> Iterator for BatchReader<R> {
    type Item = Result<IterationBatch, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        let (first_line, first) = match self.next_record()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        let iteration = first.iteration;
        if let Some(previous) = self.last_iteration {
            if iteration <= previous {
                return Some(Err(FormatError::OutOfOrder { line: first_line, iteration, previous }));
            }
        }
        self.last_iteration = Some(iteration);
        let mut records = vec![first];
        loop {
            match self.next_record() {
                None => break,
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok((line, r))) => {
                    if r.iteration == iteration {
                        records.push(r);
                    } else {
                        self.pending = Some((line, r));
                        break;
                    }
                }
            }
        }
        Some(Ok(IterationBatch { iteration, first_line, records }))
    }
}

/// Parses the flat `key = value` configuration. `#` starts a comment.
/// Unknown keys are an error; missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<MiningConfig, FormatError> {
    let mut config = MiningConfig::default();
    let mut mode: Option<(usize, String)> = None;
    let mut beta_override: Option<f64> = None;
    let mut clamp = config.schedule.auto_ratio_clamp;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| parse_err(line_no, format!("expected key = value, got `{line}`")))?;
        macro_rules! num {
            () => {
                value.parse().map_err(|_| parse_err(line_no, format!("bad value `{value}` for {key}")))?
            };
        }
        let s = &mut config.schedule;
        match key {
            "profile" => {
                let preset = ScheduleProfile::preset(value)
                    .ok_or_else(|| parse_err(line_no, format!("unknown profile `{value}`")))?;
                s.beta_target = preset.beta_target;
            }
            "beta_target" => beta_override = Some(num!()),
            "batch_size" | "B" => config.batch_size = num!(),
            "images_per_batch" | "N" => config.images_per_batch = num!(),
            "nms_iou_threshold" => config.nms_iou_threshold = num!(),
            "selection_mode" | "mode" => mode = Some((line_no, value.to_string())),
            "threshold_quantile" => config.threshold_quantile = num!(),
            "threshold_decay" => config.threshold_decay = num!(),
            "warmup_cls_priority" => config.warmup_cls_priority = num!(),
            "ramp_iters" => s.ramp_iters = num!(),
            "window_iters" => s.window_iters = num!(),
            "stability_rel_delta" => s.stability_rel_delta = num!(),
            "stability_windows" => s.stability_windows = num!(),
            "min_stability_iter" => s.min_stability_iter = num!(),
            "auto_ratio_lo" => clamp.0 = num!(),
            "auto_ratio_hi" => clamp.1 = num!(),
            "ratio_decay" => s.ratio_decay = num!(),
            "seed" | "rng_seed" => config.rng_seed = num!(),
            _ => return Err(parse_err(line_no, format!("unknown key `{key}`"))),
        }
    }
    config.schedule.auto_ratio_clamp = clamp;
    if let Some(b) = beta_override {
        config.schedule.beta_target = BetaTarget::Fixed(b);
    }
    if let Some((line_no, m)) = mode {
        apply_mode(&mut config, &m).map_err(|e| parse_err(line_no, e))?;
    }
    Ok(config)
}

/// Applies a `--mode` value: `scalar`, `strata` or `ohem-baseline`.
pub fn apply_mode(config: &mut MiningConfig, mode: &str) -> Result<(), String> {
    match mode {
        "scalar" => config.selection_mode = SelectionMode::Scalar,
        "strata" => config.selection_mode = SelectionMode::Strata,
        "ohem-baseline" | "ohem" => {
            config.selection_mode = SelectionMode::Scalar;
            config.weights = WeightPolicy::OHEM_BASELINE;
        }
        other => return Err(format!("unknown mode `{other}`")),
    }
    Ok(())
}

/// Writes a configuration that [`parse_config`] reads back unchanged.
///
/// Fixed weights other than the `(1, 1)` baseline have no file form.
pub fn config_text(config: &MiningConfig) -> String {
    let s = &config.schedule;
    let mode = match (config.weights, config.selection_mode) {
        (WeightPolicy::Fixed { .. }, _) => "ohem-baseline",
        (_, SelectionMode::Scalar) => "scalar",
        (_, SelectionMode::Strata) => "strata",
    };
    let mut out = String::new();
    match s.beta_target {
        BetaTarget::AutoRatio => out.push_str("profile = auto\n"),
        BetaTarget::Fixed(b) => out.push_str(&format!("beta_target = {b}\n")),
    }
    let fields = [
        ("batch_size", config.batch_size.to_string()),
        ("images_per_batch", config.images_per_batch.to_string()),
        ("nms_iou_threshold", config.nms_iou_threshold.to_string()),
        ("mode", mode.to_string()),
        ("threshold_quantile", config.threshold_quantile.to_string()),
        ("threshold_decay", config.threshold_decay.to_string()),
        ("warmup_cls_priority", config.warmup_cls_priority.to_string()),
        ("ramp_iters", s.ramp_iters.to_string()),
        ("window_iters", s.window_iters.to_string()),
        ("stability_rel_delta", s.stability_rel_delta.to_string()),
        ("stability_windows", s.stability_windows.to_string()),
        ("min_stability_iter", s.min_stability_iter.to_string()),
        ("auto_ratio_lo", s.auto_ratio_clamp.0.to_string()),
        ("auto_ratio_hi", s.auto_ratio_clamp.1.to_string()),
        ("ratio_decay", s.ratio_decay.to_string()),
        ("seed", config.rng_seed.to_string()),
    ];
    for (k, v) in fields {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

pub const METRICS_HEADER: &str = "seed,mode,kind,iteration,l_cls,l_loc,alpha,beta,map50,map60,map70";

/// Window rows for one run, then a `final` row with the last window's
/// losses and the held-out mAP at each threshold. Nothing for an empty trace.
pub fn write_metrics_rows<W: Write>(
    out: &mut W,
    seed: u64,
    mode: &str,
    trace: &MetricsTrace,
    ap: &[ApReport],
) -> io::Result<()> {
    for w in &trace.windows {
        writeln!(
            out,
            "{seed},{mode},window,{},{},{},{},{},,,",
            w.end_iteration, w.mean_l_cls, w.mean_l_loc, w.alpha, w.beta
        )?;
    }
    if let Some(w) = trace.final_window() {
        let maps: Vec<String> = ap.iter().map(|r| r.map.to_string()).collect();
        writeln!(
            out,
            "{seed},{mode},final,{},{},{},{},{},{}",
            w.end_iteration,
            w.mean_l_cls,
            w.mean_l_loc,
            w.alpha,
            w.beta,
            maps.join(",")
        )?;
    }
    Ok(())
}

/// Per-window mean of per-iteration mean losses. Only complete windows of
/// `window` iterations are reported.
pub fn window_means(batches: &[(u64, f64, f64)], window: usize) -> Vec<(u64, f64, f64)> {
    if window == 0 {
        return Vec::new();
    }
    batches
        .chunks_exact(window)
        .map(|c| {
            let n = c.len() as f64;
            (
                c.last().map_or(0, |b| b.0),
                c.iter().map(|b| b.1).sum::<f64>() / n,
                c.iter().map(|b| b.2).sum::<f64>() / n,
            )
        })
        .collect()
}
