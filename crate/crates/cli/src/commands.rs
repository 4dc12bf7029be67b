//! Subcommand implementations. Each returns the process exit status.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scabd::checker::{
    audit_logical_clocks, audit_proposition1, check_sc_bruteforce, check_sc_compositional_report,
    complete_pending, CheckError, CompositionalReport, Verdict, DEFAULT_SEARCH_CAP,
};
use scabd::model::{History, OpKind};
use scabd::protocol::Mutation;
use scabd::sim::{fuzz_config, run_simulation, Outcome, Trace};

use crate::config::{ConfigError, RunConfigFile};
use crate::format::{
    parse_history, parse_sidecar, sidecar_path, write_history, write_sidecar, FormatError,
};

/// Process exit statuses.
pub mod exit {
    pub const ACCEPTED: u8 = 0;
    pub const REJECTED: u8 = 1;
    /// Reserved for command-line usage errors.
    pub const USAGE: u8 = 2;
    pub const UNDECIDED: u8 = 3;
    pub const PARSE_ERROR: u8 = 4;
    pub const CONFIG_ERROR: u8 = 5;
    pub const HORIZON_EXHAUSTED: u8 = 6;
    pub const MISSING_LOGICAL_TIME: u8 = 7;
    pub const IO_ERROR: u8 = 8;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: FormatError },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("history lacks logical times: {0}")]
    MissingLogicalTime(CheckError),
    #[error("check failed: {0}")]
    Check(CheckError),
    #[error("simulation failed: {0}")]
    Sim(scabd::sim::SimError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => exit::IO_ERROR,
            CliError::Parse { .. } => exit::PARSE_ERROR,
            CliError::Config { .. } | CliError::Sim(_) => exit::CONFIG_ERROR,
            CliError::MissingLogicalTime(_) => exit::MISSING_LOGICAL_TIME,
            CliError::Check(CheckError::OracleCapExceeded { .. }) => exit::UNDECIDED,
            CliError::Check(_) => exit::PARSE_ERROR,
        }
    }
}

fn check_error(e: CheckError) -> CliError {
    match e {
        CheckError::MissingLogicalTime(_) | CheckError::MissingTimestamp(_) => {
            CliError::MissingLogicalTime(e)
        }
        e => CliError::Check(e),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_history(path: &Path) -> Result<History, CliError> {
    parse_history(&read(path)?).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(e: io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

pub fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let config_err = |source| CliError::Config {
        path: config.to_path_buf(),
        source,
    };
    let cfg = RunConfigFile::parse(&read(config)?)
        .and_then(|f| f.to_sim_config(seed))
        .map_err(config_err)?;
    let trace = run_simulation(&cfg).map_err(CliError::Sim)?;
    write_file(out_path, &write_history(&trace.history))?;
    write_file(&sidecar_path(out_path), &write_sidecar(&trace))?;
    write!(out, "{}", run_summary(&trace)).map_err(io_err)?;
    Ok(match trace.outcome {
        Outcome::Quiescent => exit::ACCEPTED,
        Outcome::HorizonExhausted => exit::HORIZON_EXHAUSTED,
    })
}

pub fn run_summary(trace: &Trace) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} n={} mutation={}",
        trace.protocol.display_name(),
        trace.n,
        trace.mutation.as_str()
    );
    let outcome = match trace.outcome {
        Outcome::Quiescent => "quiescent",
        Outcome::HorizonExhausted => "horizon exhausted",
    };
    let _ = writeln!(s, "outcome: {outcome} at tick {}", trace.end_tick);
    let mut invoked: BTreeMap<OpKind, usize> = BTreeMap::new();
    let mut completed: BTreeMap<OpKind, usize> = BTreeMap::new();
    let mut rounds: BTreeMap<(OpKind, u32), usize> = BTreeMap::new();
    for e in trace.history.events() {
        let bucket = if e.is_invocation() {
            &mut invoked
        } else {
            &mut completed
        };
        *bucket.entry(e.op.kind).or_default() += 1;
        if !e.is_invocation() {
            *rounds
                .entry((e.op.kind, trace.rounds[&e.op.id]))
                .or_default() += 1;
        }
    }
    for kind in [OpKind::Write, OpKind::Read] {
        let c = completed.get(&kind).copied().unwrap_or(0);
        let i = invoked.get(&kind).copied().unwrap_or(0);
        let r: Vec<String> = rounds
            .iter()
            .filter(|((k, _), _)| *k == kind)
            .map(|((_, r), count)| format!("{r} round(s) x{count}"))
            .collect();
        let _ = writeln!(
            s,
            "{}s: {c}/{i} completed; {}",
            kind.as_str(),
            if r.is_empty() {
                "-".to_string()
            } else {
                r.join(", ")
            }
        );
    }
    let crashed = trace.crashed();
    if !crashed.is_empty() {
        let list: Vec<String> = crashed.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(s, "crashed: {}", list.join(" "));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CheckMode {
    Compositional,
    Bruteforce,
    Both,
}

fn describe(v: &Verdict) -> String {
    match v {
        Verdict::Accepted { .. } => "accepted".into(),
        Verdict::Rejected(violation) => {
            let mut s = format!("rejected, {}", violation.condition.describe());
            if let Some((a, b)) = violation.conflict {
                let _ = write!(s, ", conflict {a} {b}");
            }
            s
        }
        Verdict::Undecided { explored } => format!("undecided after {explored} states"),
    }
}

fn verdict_code(v: &Verdict) -> u8 {
    match v {
        Verdict::Accepted { .. } => exit::ACCEPTED,
        Verdict::Rejected(_) => exit::REJECTED,
        Verdict::Undecided { .. } => exit::UNDECIDED,
    }
}

fn print_report(report: &CompositionalReport, out: &mut String) {
    for r in &report.registers {
        let path = if r.fast_path {
            " (timestamp witness)"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "register {}: {}{path}",
            r.register,
            describe(&r.verdict)
        );
    }
    let _ = writeln!(out, "compositional: {}", describe(&report.overall));
}

pub fn cmd_check(history: &Path, mode: CheckMode, out: &mut dyn Write) -> Result<u8, CliError> {
    let raw = load_history(history)?;
    let mut s = String::new();
    let h = if raw.is_complete() {
        raw
    } else {
        let _ = writeln!(
            s,
            "history has pending operations; completing writes and dropping reads"
        );
        complete_pending(&raw).map_err(check_error)?
    };
    let _ = writeln!(s, "{} operations", h.len() / 2);
    let code = match mode {
        CheckMode::Compositional => {
            let report =
                check_sc_compositional_report(&h, DEFAULT_SEARCH_CAP).map_err(check_error)?;
            print_report(&report, &mut s);
            verdict_code(&report.overall)
        }
        CheckMode::Bruteforce => {
            let v = check_sc_bruteforce(&h).map_err(check_error)?;
            let _ = writeln!(s, "bruteforce: {}", describe(&v));
            verdict_code(&v)
        }
        CheckMode::Both => {
            let report =
                check_sc_compositional_report(&h, DEFAULT_SEARCH_CAP).map_err(check_error)?;
            print_report(&report, &mut s);
            match check_sc_bruteforce(&h) {
                Ok(v) => {
                    let _ = writeln!(s, "bruteforce: {}", describe(&v));
                    let agree = match (&report.overall, &v) {
                        (Verdict::Accepted { .. }, Verdict::Rejected(_)) => "no",
                        (Verdict::Rejected(_), Verdict::Accepted { .. }) => {
                            "n/a (compositional rejection is not a proof of non-SC)"
                        }
                        _ => "yes",
                    };
                    let _ = writeln!(s, "oracle agreement: {agree}");
                    verdict_code(&v)
                }
                Err(CheckError::OracleCapExceeded { ops, cap }) => {
                    let _ = writeln!(s, "bruteforce: skipped, {ops} operations exceed cap {cap}");
                    verdict_code(&report.overall)
                }
                Err(e) => return Err(check_error(e)),
            }
        }
    };
    let _ = writeln!(
        s,
        "sequentially consistent: {}",
        match code {
            exit::ACCEPTED => "yes",
            exit::REJECTED => "no",
            _ => "undecided",
        }
    );
    out.write_all(s.as_bytes()).map_err(io_err)?;
    Ok(code)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzRun {
    pub seed: u64,
    pub accepted: bool,
    pub undecided: bool,
    pub problems: Vec<String>,
}

pub fn fuzz_one(seed: u64, mutation: Mutation) -> FuzzRun {
    let mut run = FuzzRun {
        seed,
        accepted: false,
        undecided: false,
        problems: Vec::new(),
    };
    let trace = match run_simulation(&fuzz_config(seed, mutation)) {
        Ok(t) => t,
        Err(e) => {
            run.problems.push(format!("simulation: {e}"));
            return run;
        }
    };
    if trace.outcome != Outcome::Quiescent {
        run.problems.push("horizon exhausted".into());
    }
    if !trace.unfinished_correct_ops().is_empty() {
        run.problems
            .push("operations of correct processes unfinished".into());
    }
    if !audit_logical_clocks(&trace) {
        run.problems.push("logical clock audit failed".into());
    }
    if !audit_proposition1(&trace) {
        run.problems.push("phase audit failed".into());
    }
    match complete_pending(&trace.history)
        .and_then(|h| check_sc_compositional_report(&h, DEFAULT_SEARCH_CAP))
    {
        Ok(report) => match &report.overall {
            Verdict::Accepted { .. } => run.accepted = true,
            Verdict::Rejected(v) => run.problems.push(format!(
                "checker: {}",
                describe(&Verdict::Rejected(v.clone()))
            )),
            Verdict::Undecided { .. } => run.undecided = true,
        },
        Err(e) => run.problems.push(format!("checker: {e}")),
    }
    run
}

pub fn cmd_fuzz(
    runs: u64,
    mutation: Mutation,
    seed0: u64,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let results: Vec<FuzzRun> = (0..runs)
        .into_par_iter()
        .map(|i| fuzz_one(seed0.wrapping_add(i), mutation))
        .collect();
    let accepted = results.iter().filter(|r| r.accepted).count();
    let undecided = results.iter().filter(|r| r.undecided).count();
    let violating: Vec<&FuzzRun> = results.iter().filter(|r| !r.problems.is_empty()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "mutant: {}", mutation.as_str());
    let _ = writeln!(s, "seeds: {seed0}..{}", seed0.wrapping_add(runs));
    let rate = if runs == 0 {
        "n/a".to_string()
    } else {
        format!("{:.2}%", 100.0 * accepted as f64 / runs as f64)
    };
    let _ = writeln!(s, "accepted: {accepted}/{runs} ({rate})");
    let _ = writeln!(s, "undecided: {undecided}");
    let _ = writeln!(s, "violating runs: {}", violating.len());
    match violating.first() {
        Some(r) => {
            let _ = writeln!(
                s,
                "first violating seed: {} ({})",
                r.seed,
                r.problems.join("; ")
            );
        }
        None => {
            let _ = writeln!(s, "first violating seed: none");
        }
    }
    out.write_all(s.as_bytes()).map_err(io_err)?;
    Ok(if mutation == Mutation::None && !violating.is_empty() {
        exit::REJECTED
    } else {
        exit::ACCEPTED
    })
}

/// Round-count cell for the summary row: `1`, or `1-2` if the counts vary.
fn span_of(rounds: &[u32]) -> String {
    match (rounds.iter().min(), rounds.iter().max()) {
        (Some(a), Some(b)) if a == b => a.to_string(),
        (Some(a), Some(b)) => format!("{a}-{b}"),
        _ => "-".into(),
    }
}

pub fn cmd_stats(history: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8, CliError> {
    let h = load_history(history)?;
    let side = sidecar_path(history);
    let mut s = String::new();
    let spans = h.spans().map_err(|e| CliError::Parse {
        path: history.to_path_buf(),
        source: e.into(),
    })?;
    for kind in [OpKind::Write, OpKind::Read] {
        let all = spans.iter().filter(|o| o.kind == kind).count();
        let done = spans
            .iter()
            .filter(|o| o.kind == kind && !o.is_pending())
            .count();
        let _ = writeln!(s, "{}s: {done}/{all} completed", kind.as_str());
    }
    if !side.exists() {
        let _ = writeln!(
            err,
            "warning: no message log at {}; showing counts only",
            side.display()
        );
        out.write_all(s.as_bytes()).map_err(io_err)?;
        return Ok(exit::ACCEPTED);
    }
    let sidecar = parse_sidecar(&read(&side)?).map_err(|source| CliError::Parse {
        path: side.clone(),
        source,
    })?;
    let rounds = sidecar.rounds(&h).map_err(|source| CliError::Parse {
        path: history.to_path_buf(),
        source,
    })?;
    let mut histogram: BTreeMap<(OpKind, u32), usize> = BTreeMap::new();
    for &(k, r) in &rounds {
        *histogram.entry((k, r)).or_default() += 1;
    }
    let _ = writeln!(s, "{:<6} {:>6} {:>6}", "op", "rounds", "count");
    for ((k, r), c) in &histogram {
        let _ = writeln!(s, "{:<6} {r:>6} {c:>6}", k.as_str());
    }
    if !rounds.is_empty() {
        let of = |kind| -> Vec<u32> {
            rounds
                .iter()
                .filter(|(k, _)| *k == kind)
                .map(|&(_, r)| r)
                .collect()
        };
        let _ = writeln!(
            s,
            "{} W:{}, R:{}",
            sidecar.protocol.display_name(),
            span_of(&of(OpKind::Write)),
            span_of(&of(OpKind::Read))
        );
    }
    out.write_all(s.as_bytes()).map_err(io_err)?;
    Ok(exit::ACCEPTED)
}
