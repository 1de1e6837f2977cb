//! The `dmasf` command line.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or parse error. With
//! `--json`, everything a script may consume goes to stdout as canonical
//! JSON.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::canonical::to_pretty;
use crate::graph::export_dot;
use crate::partition::{optimize_partition, partition_cost, CostModel, Partition};
use crate::protocol::{get_with, Message, RetryPolicy};
use crate::runtime::{self, unit_server, Fault, PortStrategy, RunMode, RunOptions, DEFAULT_HOP_BUDGET};
use crate::scaffold::{compile, emit, ScaffoldError};
use crate::spec::{load_profile, load_spec, load_spec_with_deployment, save_profile, save_spec, SpecDocument, SpecError, UnitDecl};

#[derive(Debug, Parser)]
#[command(name = "dmasf", version, about = "Compile and run multi-agent workflows as distributed deployments")]
pub struct Cli {
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Replace the spec's deployment section with this file.
    #[arg(long, global = true, value_name = "FILE")]
    deployment: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ports {
    Plan,
    Ephemeral,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a spec; diagnostics go to stderr as `CODE path message`.
    Validate { spec: PathBuf },
    /// Compile a spec and write the deployment artifacts.
    Compile {
        spec: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Execute the application and print the final messages.
    Run {
        spec: PathBuf,
        #[arg(long, default_value = "monolith")]
        mode: String,
        #[arg(long)]
        input: String,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// `unit:N[:restarts]`; may be repeated.
        #[arg(long = "fault")]
        faults: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_HOP_BUDGET)]
        hop_budget: u32,
        /// Where unit processes listen.
        #[arg(long, value_enum, default_value = "plan")]
        ports: Ports,
    },
    /// Re-partition a spec from a measured profile.
    Optimize {
        spec: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        /// `latency=..,byte=..,fixed=..`; omitted keys keep their defaults.
        #[arg(long)]
        cost: Option<String>,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Print the workflow graph.
    Graph {
        spec: PathBuf,
        #[arg(long)]
        dot: bool,
    },
    /// Run one deployment unit (configured through DMASF_* variables).
    #[command(hide = true)]
    Unit,
    /// Exit 0 when `url` answers 200.
    #[command(hide = true)]
    Probe {
        url: String,
        /// Keep trying for this many seconds.
        #[arg(long, default_value_t = 0)]
        wait: u64,
    },
}

/// Exit code plus message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn domain(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::domain(format!("cannot write {}: {e}", path.display())))
}

/// `CODE path message` lines for a load failure.
pub fn spec_error_lines(e: &SpecError) -> Vec<String> {
    match e {
        SpecError::Parse { line, column, message } => vec![format!("PARSE $ line {line} column {column}: {message}")],
        SpecError::Schema { path, message } => vec![format!("SCHEMA {path} {message}")],
        SpecError::CrossRef { path, name } => vec![format!("UNKNOWN_REF {path} {name}")],
        SpecError::Version(v) => vec![format!("VERSION version unsupported spec version {v}")],
        SpecError::InvalidWorkflow(ds) => ds.iter().map(ToString::to_string).collect(),
    }
}

fn spec_failure(e: &SpecError) -> Failure {
    let code = if matches!(e, SpecError::Parse { .. }) { 2 } else { 1 };
    Failure { code, message: spec_error_lines(e).join("\n") }
}

fn load_doc(cli: &Cli, path: &Path) -> Result<SpecDocument, SpecError> {
    let bytes = std::fs::read(path)
        .map_err(|e| SpecError::Parse { line: 0, column: 0, message: format!("cannot read {}: {e}", path.display()) })?;
    match &cli.deployment {
        None => load_spec(&bytes),
        Some(d) => {
            let dep = std::fs::read(d)
                .map_err(|e| SpecError::Parse { line: 0, column: 0, message: format!("cannot read {}: {e}", d.display()) })?;
            load_spec_with_deployment(&bytes, &dep)
        }
    }
}

fn load(cli: &Cli, path: &Path) -> Result<SpecDocument, Failure> {
    load_doc(cli, path).map_err(|e| spec_failure(&e))
}

/// Parses `latency=..,byte=..,fixed=..`.
pub fn parse_cost(text: &str) -> Result<CostModel, String> {
    let d = CostModel::default();
    let (mut latency, mut byte, mut fixed) = (d.remote_latency_ms, d.remote_byte_cost, d.unit_fixed_cost);
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| format!("bad cost term {item:?} (expected key=value)"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("bad number in {item:?}"))?;
        match k.trim() {
            "latency" => latency = v,
            "byte" => byte = v,
            "fixed" => fixed = v,
            other => return Err(format!("unknown cost key {other:?} (expected latency, byte or fixed)")),
        }
    }
    CostModel::new(latency, byte, fixed)
}

fn validate_cmd(cli: &Cli, spec: &Path) -> Result<(), Failure> {
    match load_doc(cli, spec) {
        Ok(_) => {
            if cli.json {
                println!("{}", to_pretty(&json!({"ok": true, "diagnostics": []})).trim_end());
            }
            Ok(())
        }
        Err(e) => {
            if cli.json {
                println!("{}", to_pretty(&json!({"ok": false, "diagnostics": spec_error_lines(&e)})).trim_end());
            }
            Err(spec_failure(&e))
        }
    }
}

fn compile_cmd(cli: &Cli, spec: &Path, out: &Path, force: bool) -> Result<(), Failure> {
    let doc = load(cli, spec)?;
    let plan = compile(&doc).map_err(|e| Failure::domain(e.to_string()))?;
    let report = emit(&plan, out, force).map_err(|e| match e {
        ScaffoldError::RefusesOverwrite(_) => Failure::domain(format!("RefusesOverwrite: {e}")),
        other => Failure::domain(other.to_string()),
    })?;
    if cli.json {
        println!("{}", to_pretty(&report).trim_end());
    } else {
        for p in &report.written {
            println!("{}", out.join(p).display());
        }
        for p in &report.removed {
            println!("removed {}", out.join(p).display());
        }
        if report.written.is_empty() && report.removed.is_empty() {
            println!("unchanged: {} files in {}", report.unchanged.len(), out.display());
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_cmd(
    cli: &Cli,
    spec: &Path,
    mode: &str,
    input: &str,
    trace_out: Option<&Path>,
    profile_out: Option<&Path>,
    faults: &[String],
    hop_budget: u32,
    ports: Ports,
) -> Result<(), Failure> {
    let mode: RunMode = mode.parse().map_err(Failure::usage)?;
    let fault_plan = faults.iter().map(|f| f.parse::<Fault>()).collect::<Result<Vec<_>, _>>().map_err(Failure::usage)?;
    let doc = load(cli, spec)?;
    let opts = RunOptions {
        hop_budget,
        fault_plan,
        unit_binary: None,
        ports: match ports {
            Ports::Plan => PortStrategy::Plan,
            Ports::Ephemeral => PortStrategy::Ephemeral,
        },
    };
    let result = runtime::run(&doc, &Message::user_text(input), mode, &opts);
    let trace = match &result {
        Ok((t, _)) => t,
        Err(f) => &f.trace,
    };
    if let Some(path) = trace_out {
        write(path, &to_pretty(trace))?;
    }
    match result {
        Ok((trace, profile)) => {
            if let Some(path) = profile_out {
                write(path, &save_profile(&profile))?;
            }
            if cli.json {
                println!("{}", to_pretty(&json!({"trace_id": trace.trace_id, "final": trace.final_messages})).trim_end());
            } else {
                print!("{}", trace.render_final());
            }
            Ok(())
        }
        Err(f) => {
            let name = serde_json::to_value(&f.error)
                .ok()
                .and_then(|v| v.as_object().and_then(|o| o.keys().next().cloned()).or_else(|| v.as_str().map(String::from)))
                .unwrap_or_default();
            if cli.json {
                println!("{}", to_pretty(&json!({"error": f.error})).trim_end());
            }
            Err(Failure::domain(format!("{}: {}", camel(&name), f.error)))
        }
    }
}

fn camel(snake: &str) -> String {
    snake
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
        })
        .collect()
}

fn optimize_cmd(cli: &Cli, spec: &Path, profile: &Path, cost: Option<&str>, out: &Path) -> Result<(), Failure> {
    let doc = load(cli, spec)?;
    let profile = load_profile(&read(profile)?).map_err(|e| spec_failure(&e))?;
    let cm = match cost {
        Some(text) => parse_cost(text).map_err(Failure::usage)?,
        None => CostModel::default(),
    };
    let new = optimize_partition(&doc, &profile, &cm).map_err(|e| Failure::domain(e.to_string()))?;
    let old = current_partition(&doc);
    let (old_cost, new_cost) = (partition_cost(&old, &profile, &cm), partition_cost(&new, &profile, &cm));
    let mut next = doc.clone();
    next.deployment.units = Some(
        new.units
            .iter()
            .map(|u| UnitDecl::new(&u.name, &u.members.iter().map(String::as_str).collect::<Vec<_>>()))
            .collect(),
    );
    write(out, &save_spec(&next))?;
    if cli.json {
        println!(
            "{}",
            to_pretty(&json!({"old_cost": old_cost, "new_cost": new_cost, "units": new.canonical_form()})).trim_end()
        );
    } else {
        println!("old cost: {old_cost}");
        println!("new cost: {new_cost}");
        for u in &new.units {
            println!("{}: {}", u.name, u.members.iter().cloned().collect::<Vec<_>>().join(", "));
        }
    }
    Ok(())
}

/// The deployment as written, even when it breaks the constraints the
/// optimizer is asked to satisfy.
fn current_partition(doc: &SpecDocument) -> Partition {
    match &doc.deployment.units {
        Some(units) => Partition::from_blocks(units.iter().map(|u| u.members.clone())),
        None => Partition::singletons(doc.workflow.agents.iter().map(|a| a.name.clone())),
    }
}

fn graph_cmd(cli: &Cli, spec: &Path, dot: bool) -> Result<(), Failure> {
    if !dot {
        return Err(Failure::usage("only --dot output is supported"));
    }
    let doc = load(cli, spec)?;
    let text = export_dot(&doc.workflow).map_err(|e| Failure::domain(e.to_string()))?;
    if cli.json {
        println!("{}", to_pretty(&json!({"dot": text})).trim_end());
    } else {
        print!("{text}");
    }
    Ok(())
}

fn probe_cmd(url: &str, wait: u64) -> Result<(), Failure> {
    let once = RetryPolicy { attempts: 1, initial: Duration::ZERO };
    let deadline = Instant::now() + Duration::from_secs(wait);
    loop {
        match get_with(url, once) {
            Ok((200, _)) => return Ok(()),
            Ok((status, _)) if Instant::now() >= deadline => return Err(Failure::domain(format!("{url} answered {status}"))),
            Err(e) if Instant::now() >= deadline => return Err(Failure::domain(e.to_string())),
            _ => std::thread::sleep(Duration::from_millis(100)),
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { spec } => validate_cmd(cli, spec),
        Command::Compile { spec, out, force } => compile_cmd(cli, spec, out, *force),
        Command::Run { spec, mode, input, trace, profile, faults, hop_budget, ports } => run_cmd(
            cli,
            spec,
            mode,
            input,
            trace.as_deref(),
            profile.as_deref(),
            faults,
            *hop_budget,
            *ports,
        ),
        Command::Optimize { spec, profile, cost, out } => optimize_cmd(cli, spec, profile, cost.as_deref(), out),
        Command::Graph { spec, dot } => graph_cmd(cli, spec, *dot),
        Command::Unit => {
            let env = unit_server::UnitEnv::from_env().map_err(Failure::domain)?;
            unit_server::serve(env).map_err(Failure::domain)
        }
        Command::Probe { url, wait } => probe_cmd(url, *wait),
    }
}

fn init_logging() {
    let level = match std::env::var("DMASF_LOG").as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Error,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp_millis().try_init();
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("{}", f.message);
            }
            f.code
        }
    }
}
