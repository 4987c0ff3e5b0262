//! Command-line front end: run, replay, kb, suite.
//!
//! Exit codes:
//!
//! | code | run                         | replay        | kb         | suite          |
//! |------|-----------------------------|---------------|------------|----------------|
//! | 0    | SUCCESS                     | all checks    | listed     | all pass       |
//! | 1    | config, parse or io error   | unreadable or corrupt log | unreadable store | unreadable dir |
//! | 2    | FAIL or STALL               | a check fails | -          | a scenario fails |
//! | 3    | TIME, TOKEN or RISK budget  | -             | -          | -              |

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use toml::Value;

use warroom::canonical::ContentHash;
use warroom::controller::{LogError, MissionLog, MissionReport, TerminationReason};
use warroom::knowledge::{read_store, KnowledgeBase};
use warroom::model::{EntryKey, EntryKind, KnowledgeEntry, RoleId};
use warroom::replay::replay_file;
use warroom::sim::{run_suite, Scenario, SuiteEntry};

#[derive(Parser)]
#[command(name = "warroom", version, about = "Run, audit and inspect multi-agent round-protocol missions")]
struct Cli {
    /// Machine-readable JSON on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Log verbosity on stderr (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario document; writes one log per mission and a report.
    Run(RunArgs),
    /// Audit a mission log: hashes, stage order, messages, gating, cost.
    Replay {
        log: PathBuf,
    },
    /// List knowledge-store entries.
    Kb {
        store: PathBuf,
        /// pattern, capability or feedback.
        #[arg(long)]
        kind: Option<EntryKind>,
        /// Exact key: a pattern hash, `role/tool`, or a role.
        #[arg(long, requires = "kind")]
        key: Option<String>,
        /// Also list evicted entries.
        #[arg(long)]
        show_tombstones: bool,
    },
    /// Run every scenario in a directory (the bundled set by default).
    Suite {
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Directory for logs and the report.
    #[arg(long, default_value = "warroom-out")]
    out: PathBuf,
    /// File-backed knowledge store shared across invocations.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// TOML file of config overrides, applied before the flags below.
    #[arg(long, env = "WARROOM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    executors: Option<u32>,
    /// Handshake depth.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    k_stall: Option<u32>,
    #[arg(long)]
    tau_prom: Option<f64>,
    /// Knowledge-store capacity.
    #[arg(long)]
    capacity: Option<usize>,
    /// Retention decay rate.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    w3: Option<f64>,
    #[arg(long)]
    w4: Option<f64>,
    #[arg(long)]
    budget_tokens: Option<u64>,
    #[arg(long)]
    budget_time_ms: Option<u64>,
    #[arg(long)]
    budget_risk: Option<f64>,
    #[arg(long)]
    allow_install: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] warroom::sim::ScenarioError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Kb(#[from] warroom::knowledge::KbError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunArgs {
    fn flag_overrides(&self) -> Value {
        let mut t = toml::Table::new();
        let mut set = |path: &[&str], v: Option<Value>| {
            let Some(v) = v else { return };
            let mut node = &mut t;
            for p in &path[..path.len() - 1] {
                node = node
                    .entry(*p)
                    .or_insert_with(|| Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .expect("override paths are tables");
            }
            node.insert(path[path.len() - 1].into(), v);
        };
        let int = |v: Option<u64>| v.map(|x| Value::Integer(x as i64));
        set(&["seed"], int(self.seed));
        set(&["executors"], int(self.executors.map(u64::from)));
        set(&["k"], int(self.k.map(u64::from)));
        set(&["k_stall"], int(self.k_stall.map(u64::from)));
        set(&["kb", "tau_prom"], self.tau_prom.map(Value::Float));
        set(&["kb", "capacity"], int(self.capacity.map(|c| c as u64)));
        set(&["kb", "lambda"], self.lambda.map(Value::Float));
        set(&["utility", "w1"], self.w1.map(Value::Float));
        set(&["utility", "w2"], self.w2.map(Value::Float));
        set(&["utility", "w3"], self.w3.map(Value::Float));
        set(&["utility", "w4"], self.w4.map(Value::Float));
        set(&["budget", "tokens"], int(self.budget_tokens));
        set(&["budget", "time_ms"], int(self.budget_time_ms));
        set(&["budget", "risk"], self.budget_risk.map(Value::Float));
        set(&["allow_install"], self.allow_install.then_some(Value::Boolean(true)));
        Value::Table(t)
    }

    /// Scenario config, then the config file, then flags.
    fn apply(&self, scenario: &mut Scenario) -> Result<(), CliError> {
        let mut cfg = Value::try_from(&scenario.config).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let over: Value = toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            merge(&mut cfg, over);
        }
        merge(&mut cfg, self.flag_overrides());
        scenario.config = cfg.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("config override: {e}")))?;
        Ok(())
    }
}

fn run_exit(reason: TerminationReason) -> u8 {
    match reason {
        TerminationReason::Success => 0,
        TerminationReason::Stall => 2,
        r if r.is_budget() => 3,
        _ => 2,
    }
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '-' }).collect()
}

fn cmd_run(args: &RunArgs, as_json: bool) -> Result<u8, CliError> {
    let mut missions = Scenario::load(&args.scenario)?;
    for m in &mut missions {
        args.apply(m)?;
        m.config.validate().map_err(|e| CliError::Usage(format!("{}: {e}", args.scenario.display())))?;
    }
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let kb_config = missions[0].config.kb;
    let mut kb = match &args.kb {
        Some(p) => KnowledgeBase::open(p, kb_config)?,
        None => KnowledgeBase::in_memory(kb_config),
    };
    let mut reports: Vec<(String, PathBuf, MissionReport)> = Vec::new();
    for m in &missions {
        let log_path = args.out.join(format!("{}.log.jsonl", file_stem(&m.name)));
        let mut log = MissionLog::to_file(&log_path)?;
        let report = m.run_with(&mut kb, &mut log)?;
        log.flush()?;
        reports.push((m.name.clone(), log_path, report));
    }
    let stem = file_stem(&missions[0].name.split('#').next().unwrap_or("mission"));
    let report_path = args.out.join(format!("{stem}.report.json"));
    let body: Vec<_> = reports
        .iter()
        .map(|(name, log, r)| json!({ "mission": name, "log": log, "report": r }))
        .collect();
    std::fs::write(&report_path, serde_json::to_vec_pretty(&body)?).map_err(io_err(&report_path))?;
    let last = &reports.last().expect("at least one mission").2;
    if as_json {
        println!("{}", serde_json::to_string(&json!({ "report_path": report_path, "missions": body }))?);
    } else {
        for (name, log, r) in &reports {
            println!(
                "{name}: {} after {} round(s), cost {}, log {}",
                r.reason.as_str(),
                r.rounds,
                r.cost_total,
                log.display()
            );
        }
        println!("report {}", report_path.display());
    }
    Ok(run_exit(last.reason))
}

fn cmd_replay(path: &Path, as_json: bool) -> Result<u8, CliError> {
    let report = replay_file(path)?;
    if as_json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        print!("{}", report.render());
    }
    Ok(if report.passed() { 0 } else { 2 })
}

fn parse_key(kind: EntryKind, s: &str) -> Result<EntryKey, CliError> {
    let role = |r: &str| r.parse::<RoleId>().map_err(CliError::Usage);
    Ok(match kind {
        EntryKind::Pattern => {
            EntryKey::Pattern(ContentHash::from_hex(s).ok_or_else(|| CliError::Usage(format!("pattern key {s:?} is not a hash")))?)
        }
        EntryKind::Capability => {
            let (r, tool) = s.split_once('/').ok_or_else(|| CliError::Usage("capability key is role/tool".into()))?;
            EntryKey::Capability { role: role(r)?, tool: tool.into() }
        }
        EntryKind::Feedback => EntryKey::Feedback(role(s)?),
    })
}

fn entry_line(e: &KnowledgeEntry, clock: u64) -> String {
    format!(
        "{} {:?} score {:.4} age {} prov {} key {}",
        e.id,
        e.kind(),
        e.score,
        clock.saturating_sub(e.created_at),
        e.prov_hash.to_hex(),
        serde_json::to_string(&e.key).unwrap_or_default()
    )
}

fn cmd_kb(
    path: &Path,
    kind: Option<EntryKind>,
    key: Option<&str>,
    tombstones: bool,
    as_json: bool,
) -> Result<u8, CliError> {
    let (header, records) = read_store(path)?;
    let kb = KnowledgeBase::rebuild(header.config(), records)?;
    let wanted = |e: &&KnowledgeEntry| kind.is_none_or(|k| e.kind() == k);
    let live: Vec<KnowledgeEntry> = match (kind, key) {
        (Some(k), Some(s)) => kb.snapshot().retrieve(k, &parse_key(k, s)?)?,
        _ => kb.live().filter(wanted).cloned().collect(),
    };
    let dead: Vec<&KnowledgeEntry> = if tombstones { kb.tombstoned().filter(wanted).collect() } else { Vec::new() };
    if as_json {
        println!("{}", serde_json::to_string(&json!({ "clock": kb.clock(), "live": live, "tombstoned": dead }))?);
        return Ok(0);
    }
    println!("{} entries", live.len());
    for e in &live {
        println!("  {}", entry_line(e, kb.clock()));
    }
    if tombstones {
        println!("{} tombstoned", dead.len());
        for e in dead {
            println!("  {}", entry_line(e, kb.clock()));
        }
    }
    Ok(0)
}

fn cmd_suite(dir: Option<&Path>, jobs: usize, as_json: bool) -> Result<u8, CliError> {
    let entries = match dir {
        Some(d) => SuiteEntry::from_dir(d)?,
        None => SuiteEntry::bundled(),
    };
    let report = run_suite(&entries, jobs);
    if as_json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        print!("{}", report.matrix());
    }
    Ok(if report.passed() { 0 } else { 2 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = ["warn", "info", "debug", "trace"][usize::from(cli.verbose.min(3))];
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args, cli.json),
        Command::Replay { log } => cmd_replay(log, cli.json),
        Command::Kb { store, kind, key, show_tombstones } => {
            cmd_kb(store, *kind, key.as_deref(), *show_tombstones, cli.json)
        }
        Command::Suite { dir, jobs } => cmd_suite(dir.as_deref(), *jobs, cli.json),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
