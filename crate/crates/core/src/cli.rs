//! Command-line front end: `replay`, `simulate` and `stats`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::domain::MiningConfig;
use crate::error::Error;
use crate::harness::{evaluate_run, ohem_config, sohem_config, train, TrainerSpec};
use crate::io::{
    apply_mode, parse_config, selection_line, window_means, write_metrics_rows, BatchReader, FormatError,
    METRICS_HEADER,
};
use crate::miner::MinerState;
use crate::schedule::ScheduleProfile;

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_INVARIANT: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "sohem", version, about = "Stratified online hard example mining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine a recorded loss log and write one selection per iteration.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the synthetic detector and write windowed metrics as CSV.
    Simulate {
        /// β target; defaults to the harness arm.
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        #[arg(long, value_enum, default_value_t = Mode::Scalar)]
        mode: Mode,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long, default_value_t = 20_000)]
        iters: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print windowed mean losses of a record log.
    Stats {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        window: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Voc07,
    Kitti12,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Scalar,
    Strata,
    OhemBaseline,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Scalar => "scalar",
            Mode::Strata => "strata",
            Mode::OhemBaseline => "ohem-baseline",
        }
    }
}

#[derive(Debug)]
enum Failure {
    Io(io::Error),
    Parse(String),
    Invariant(Error),
    Diverged(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => EXIT_IO,
            Failure::Parse(_) => EXIT_PARSE,
            Failure::Invariant(_) => EXIT_INVARIANT,
            Failure::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Io(e) => write!(f, "{e}"),
            Failure::Parse(m) => write!(f, "parse error: {m}"),
            Failure::Invariant(e) => write!(f, "invalid input: {e}"),
            Failure::Diverged(e) => write!(f, "{e}"),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(e) => Failure::Io(e),
            other => Failure::Parse(other.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DivergedLoss { .. } => Failure::Diverged(e),
            other => Failure::Invariant(other),
        }
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Replay { log, config, out } => cmd_replay(&log, config.as_deref(), &out),
        Command::Simulate { profile, mode, seeds, iters, out } => cmd_simulate(profile, mode, seeds, iters, &out),
        Command::Stats { log, window } => cmd_stats(&log, window as usize, &mut io::stdout().lock()),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("sohem: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn open_log(path: &Path) -> Result<BatchReader<BufReader<File>>, Failure> {
    Ok(BatchReader::new(BufReader::new(File::open(path)?)))
}

fn load_config(path: Option<&Path>) -> Result<MiningConfig, Failure> {
    let config = match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => MiningConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn cmd_replay(log: &Path, config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let mut miner = MinerState::new(load_config(config)?)?;
    let mut reader = open_log(log)?;
    let mut writer = BufWriter::new(File::create(out)?);
    let (mut iterations, mut selected, mut suppressed) = (0usize, 0usize, 0usize);
    let mut last_weights = None;
    for batch in reader.by_ref() {
        let batch = batch?;
        let result = miner.mine(&batch.records)?;
        writeln!(writer, "{}", selection_line(&result))?;
        iterations += 1;
        selected += result.selected.len();
        suppressed += result.suppressed_count;
        last_weights = Some((result.alpha, result.beta));
    }
    writer.flush()?;
    println!("iterations: {iterations}");
    println!("records: {}", reader.records_read);
    println!("selected: {selected}");
    println!("suppressed: {suppressed}");
    if let Some((a, b)) = last_weights {
        println!("final weights: alpha={a} beta={b}");
    }
    Ok(())
}

/// Miner configuration for one `simulate` arm.
pub fn simulate_config(profile: Option<Profile>, mode: Mode) -> MiningConfig {
    let mut config = if mode == Mode::OhemBaseline { ohem_config() } else { sohem_config() };
    if let Some(p) = profile {
        let preset = match p {
            Profile::Voc07 => ScheduleProfile::voc07(),
            Profile::Kitti12 => ScheduleProfile::kitti12(),
            Profile::Auto => ScheduleProfile::auto(),
        };
        config.schedule.beta_target = preset.beta_target;
    }
    apply_mode(&mut config, mode.as_str()).expect("known mode");
    config
}

fn cmd_simulate(profile: Option<Profile>, mode: Mode, seeds: u64, iters: u64, out: &Path) -> Result<(), Failure> {
    let config = simulate_config(profile, mode);
    let spec = TrainerSpec { iterations: iters, ..TrainerSpec::default() };
    let mut writer = BufWriter::new(File::create(out)?);
    writeln!(writer, "{METRICS_HEADER}")?;
    for seed in 0..seeds {
        let run = train(&config, &spec, seed)?;
        let ap = if run.trace.windows.is_empty() { Vec::new() } else { evaluate_run(&run.model, &spec, seed) };
        write_metrics_rows(&mut writer, seed, mode.as_str(), &run.trace, &ap)?;
    }
    writer.flush()?;
    Ok(())
}

fn cmd_stats<W: Write>(log: &Path, window: usize, out: &mut W) -> Result<(), Failure> {
    let mut means = Vec::new();
    for batch in open_log(log)? {
        let batch = batch?;
        let n = batch.records.len() as f64;
        let cls = batch.records.iter().map(|r| r.l_cls).sum::<f64>() / n;
        let loc = batch.records.iter().map(|r| r.l_loc).sum::<f64>() / n;
        means.push((batch.iteration, cls, loc));
    }
    writeln!(out, "end_iteration,mean_l_cls,mean_l_loc")?;
    for (end, cls, loc) in window_means(&means, window) {
        writeln!(out, "{end},{cls},{loc}")?;
    }
    Ok(())
}
