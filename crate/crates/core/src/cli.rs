//! Command implementations behind the `scynet-sim` binary: run a scenario,
//! verify a block log by replay, and render a finished run.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{genesis_state, run_scenario, LogRecord, SimError, SimOutput, SimReport};
use crate::state::{read_block_log, write_block, BlockLogError, ReplayError};

/// Output directory used when `--out` is not given.
pub const OUT_ENV: &str = "SCYNET_SIM_OUT";
pub const DEFAULT_OUT: &str = "sim-out";

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

pub const BLOCK_LOG: &str = "blocks.log";
pub const EVENT_LOG: &str = "events.log";
pub const REPORT: &str = "report.json";
pub const SETTLEMENTS: &str = "settlements.csv";
pub const CONVERGENCE: &str = "convergence.csv";
pub const SCENARIO_COPY: &str = "scenario.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    BlockLog { path: PathBuf, source: BlockLogError },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("ledger audit failed after replayed block {height}: {detail}")]
    ReplayAudit { height: u64, detail: String },
    #[error("{path}: {detail}")]
    BadReport { path: PathBuf, detail: String },
}

impl CliError {
    /// 2 for anything that failed to parse, 3 for broken invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) | CliError::Sim(SimError::Scenario(_)) => EXIT_PARSE,
            CliError::BlockLog { source: BlockLogError::Decode { .. }, .. } | CliError::BadReport { .. } => EXIT_PARSE,
            CliError::Sim(SimError::Invariant { .. }) | CliError::Replay(_) | CliError::ReplayAudit { .. } => {
                EXIT_INVARIANT
            }
            _ => EXIT_FAILURE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub tournaments: Option<u64>,
    pub out: Option<PathBuf>,
}

/// `--out`, else `$SCYNET_SIM_OUT`, else `./sim-out`.
pub fn resolve_out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn cmd_run(scenario_path: &Path, opts: RunOptions) -> Result<(SimReport, PathBuf), CliError> {
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(seed) = opts.seed {
        scenario.simulation.seed = seed;
    }
    if let Some(t) = opts.tournaments {
        scenario.simulation.tournaments = t;
    }
    let output = run_scenario(&scenario)?;
    let dir = resolve_out_dir(opts.out);
    write_outputs(&dir, &scenario, &output)?;
    Ok((output.report, dir))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::Io { path: path.into(), source: e.into() })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), source: io::Error::other(e) }
}

/// Writes the block log, event log, report and CSV tables of a run, plus the
/// resolved scenario so the directory can be replayed on its own.
pub fn write_outputs(dir: &Path, scenario: &Scenario, output: &SimOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join(BLOCK_LOG);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for block in &output.blocks {
        write_block(&mut w, block).map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    write_lines(&dir.join(EVENT_LOG), &output.log)?;

    let path = dir.join(REPORT);
    let json = serde_json::to_vec_pretty(&output.report).expect("report serializes");
    fs::write(&path, json).map_err(io_err(&path))?;

    let path = dir.join(SCENARIO_COPY);
    fs::write(&path, scenario.to_toml()).map_err(io_err(&path))?;

    let path = dir.join(SETTLEMENTS);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["tournament", "time", "pool", "recipient", "reason", "amount", "agent"]).map_err(csv_err(&path))?;
    for s in &output.report.settlements {
        for p in &s.payouts {
            let reason = serde_json::to_value(p.reason).expect("reason serializes");
            w.write_record([
                s.tournament.to_string(),
                s.time.to_string(),
                s.pool.to_string(),
                p.recipient.clone(),
                reason.as_str().unwrap_or_default().to_string(),
                p.amount.to_string(),
                p.agent.map(|a| a.to_hex()).unwrap_or_default(),
            ])
            .map_err(csv_err(&path))?;
        }
        w.write_record([
            s.tournament.to_string(),
            s.time.to_string(),
            s.pool.to_string(),
            String::new(),
            "Rollover".into(),
            s.rollover.to_string(),
            String::new(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(CONVERGENCE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for row in &output.convergence {
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySummary {
    pub blocks: usize,
    pub final_state_hash: String,
}

/// Replays a block log from the scenario's genesis, checking every header,
/// commit, transaction, state root and ledger audit.
pub fn cmd_verify_replay(block_log: &Path, scenario_path: &Path) -> Result<ReplaySummary, CliError> {
    let scenario = Scenario::load(scenario_path)?;
    let mut file = File::open(block_log).map_err(io_err(block_log))?;
    let blocks = read_block_log(&mut file).map_err(|source| CliError::BlockLog { path: block_log.into(), source })?;
    let mut state = genesis_state(&scenario)?;
    for block in &blocks {
        let height = state.height + 1;
        state.apply_block(block).map_err(|error| ReplayError { height, error })?;
        state.ledger.audit().map_err(|e| CliError::ReplayAudit { height, detail: e.to_string() })?;
    }
    Ok(ReplaySummary { blocks: blocks.len(), final_state_hash: state.state_hash().to_hex() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    /// One row per node.
    #[default]
    Csv,
    /// The event log as aligned text.
    Events,
}

pub fn cmd_report(dir: &Path, format: ReportFormat) -> Result<String, CliError> {
    match format {
        ReportFormat::Csv => {
            let path = dir.join(REPORT);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let report: SimReport = serde_json::from_str(&text)
                .map_err(|e| CliError::BadReport { path: path.clone(), detail: e.to_string() })?;
            Ok(node_table(&report))
        }
        ReportFormat::Events => {
            let path = dir.join(EVENT_LOG);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let mut out = String::new();
            for (i, line) in text.lines().enumerate() {
                let r: LogRecord = serde_json::from_str(line)
                    .map_err(|e| CliError::BadReport { path: path.clone(), detail: format!("line {}: {e}", i + 1) })?;
                let detail = summarize(&r);
                writeln!(out, "{:>10}  {:<14} {:<12} {}", r.time, r.node.as_deref().unwrap_or("-"), r.kind, detail)
                    .expect("writing to a string");
            }
            Ok(out)
        }
    }
}

fn summarize(r: &LogRecord) -> String {
    match (r.kind.as_str(), r.detail.get("event").and_then(|e| e.as_str())) {
        ("chain", Some(event)) => {
            let t = r.detail.get("tournament").map(|t| format!(" tournament={t}")).unwrap_or_default();
            let reason = r.detail.get("reason").map(|x| format!(" reason={x}")).unwrap_or_default();
            format!("{event}{t}{reason}")
        }
        _ => r.detail.to_string(),
    }
}

fn node_table(report: &SimReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "node",
        "roles",
        "adversary",
        "sent",
        "included",
        "rejected",
        "final_balance",
        "agent_income",
        "total_income",
        "disqualified_in",
        "copy_detected",
        "best_ever",
        "restarts",
    ])
    .expect("in-memory csv");
    for n in &report.nodes {
        let rejected: u64 = n.rejected.values().sum();
        let dq: Vec<String> = n.disqualified_in.iter().map(u64::to_string).collect();
        w.write_record([
            n.name.clone(),
            n.roles.join("+"),
            n.adversary.clone().unwrap_or_default(),
            n.sent.to_string(),
            n.included.to_string(),
            rejected.to_string(),
            n.final_balance.to_string(),
            n.agent_tranche_income.to_string(),
            n.total_income.to_string(),
            dq.join(" "),
            n.copy_detected.to_string(),
            n.best_ever.map(|v| v.to_string()).unwrap_or_default(),
            n.restarts.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}
