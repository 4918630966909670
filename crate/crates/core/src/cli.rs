//! Command-line front end. [`run`] takes explicit streams so the whole
//! tool can be driven in-process.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::deadlock::{detect_termination, find_deadlocks, DeadlockKind, DeadlockReport, DeadlockScope};
use crate::lts::{enabled_actions, explore_with_jobs, step, ExplorationLimits, Lts, LtsStats, DEFAULT_MAX_CONFIGS};
use crate::model::*;
use crate::promela;
use crate::scenario::{generate, parse_graph};
use crate::syntax::{parse, pretty_print};
use crate::views::{agent_view, rename_agents, report_server_view, to_dot};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DEADLOCK: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_LIMIT: i32 = 3;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "imds-verify",
    version,
    about = "Deadlock verification for IMDS models of autonomous moving platforms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, clap::Args)]
struct ModelArgs {
    /// `.imds` model or `.amg` scenario (generated on the fly).
    input: PathBuf,
    /// Accept the uncorrected original listing (misnamed input servers become warnings).
    #[arg(long)]
    verbatim: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Explore the state space and report deadlocks.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        max_states: Option<usize>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads for exploration; output does not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Random, scripted or interactive walk through the state space.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        interactive: bool,
        /// File of action indices (one per line) consumed before random choice.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Translate a scenario into an `.imds` model.
    Generate {
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        avoidance: Option<Switch>,
    },
    /// Translate a model into Promela.
    Export {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print state-space size.
    Stats {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        max_states: Option<usize>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

/// A failure reported on stderr with exit status 2.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

struct Io<'a> {
    stdin: &'a mut dyn BufRead,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Io<'_> {
    fn warn(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.stderr, "{msg}");
    }
}

pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_ERROR
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    let mut io = Io { stdin, stdout, stderr };
    let result = match cli.command {
        Command::Verify { model, max_states, format, output, jobs } => {
            verify(&mut io, &model, max_states, format, output.as_deref(), jobs)
        }
        Command::Simulate { model, seed, steps, interactive, script } => {
            simulate(&mut io, &model, seed, steps, interactive, script.as_deref())
        }
        Command::Generate { input, output, avoidance } => generate_cmd(&mut io, &input, &output, avoidance),
        Command::Export { model, output } => export_cmd(&mut io, &model, &output),
        Command::Stats { model, max_states, format } => stats_cmd(&mut io, &model, max_states, format),
    };
    match result {
        Ok(code) => code,
        Err(Failure(msg)) => {
            let _ = writeln!(io.stderr, "error: {msg}");
            EXIT_ERROR
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn is_scenario(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "amg")
}

/// Parses (or generates) and elaborates the model, printing warnings.
fn load(io: &mut Io, args: &ModelArgs) -> Result<ElaboratedSystem, Failure> {
    let path = &args.input;
    let text = read(path)?;
    let decl = if is_scenario(path) {
        let sc = parse_graph(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
        let g = generate(&sc.graph, &sc.itineraries, sc.options)
            .map_err(|e| Failure(format!("{}: {e}", path.display())))?;
        for w in &g.warnings {
            io.warn(format_args!("{}: warning: {w}", path.display()));
        }
        g.decl
    } else {
        parse(&text).map_err(|e| Failure(format!("{}:{e}", path.display())))?.decl
    };
    let opts = if args.verbatim { ElaborateOptions::lenient() } else { ElaborateOptions::default() };
    match elaborate_with(&decl, opts) {
        Ok(el) => {
            for w in &el.warnings {
                io.warn(format_args!("{}:{w}", path.display()));
            }
            Ok(el.system)
        }
        Err(e) => {
            for d in &e.diagnostics {
                io.warn(format_args!("{}:{d}", path.display()));
            }
            let errors = e.diagnostics.iter().filter(|d| d.is_error()).count();
            Err(Failure(format!("{}: {errors} error(s) in model", path.display())))
        }
    }
}

fn limits(flag: Option<usize>) -> Result<ExplorationLimits, Failure> {
    let max = match flag {
        Some(n) => n,
        None => match std::env::var("IMDS_MAX_STATES") {
            Ok(v) => v.trim().parse().map_err(|_| Failure(format!("IMDS_MAX_STATES: not a number: '{v}'")))?,
            Err(_) => DEFAULT_MAX_CONFIGS,
        },
    };
    if max == 0 {
        return Err(Failure("state limit must be positive".into()));
    }
    Ok(ExplorationLimits::configs(max))
}

fn emit(io: &mut Io, output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure(format!("{}: {e}", p.display()))),
        None => io.stdout.write_all(text.as_bytes()).map_err(Failure::from),
    }
}

#[derive(Debug, Serialize)]
pub struct ModelSummary {
    pub input: String,
    pub servers: usize,
    pub agents: usize,
    pub ground_actions: usize,
}

#[derive(Debug, Serialize)]
pub struct DeadAgentEntry {
    pub agent: String,
    pub display: String,
    pub kind: DeadlockKind,
    pub waiting: String,
}

#[derive(Debug, Serialize)]
pub struct WitnessStep {
    pub source: usize,
    pub agent: String,
    pub server: String,
    pub action: String,
}

#[derive(Debug, Serialize)]
pub struct DeadlockEntry {
    pub kind: DeadlockKind,
    pub scope: DeadlockScope,
    pub server_scope: DeadlockScope,
    pub dead_agents: Vec<DeadAgentEntry>,
    pub dead_servers: Vec<String>,
    pub config: usize,
    pub configuration: String,
    pub witness: Vec<WitnessStep>,
    pub server_view_dot: String,
    pub agent_view_text: String,
}

/// The document written by `verify --format json`.
#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub model: ModelSummary,
    pub lts: LtsStats,
    pub complete: bool,
    pub deadlocks: Vec<DeadlockEntry>,
    pub termination_configs: usize,
}

pub fn build_report(input: &str, sys: &ElaboratedSystem, lts: &Lts, reports: &[DeadlockReport]) -> VerifyReport {
    let names = rename_agents(sys);
    let deadlocks = reports
        .iter()
        .map(|r| DeadlockEntry {
            kind: r.kind,
            scope: r.scope,
            server_scope: r.server_scope,
            dead_agents: r
                .dead_agents
                .iter()
                .map(|d| DeadAgentEntry {
                    agent: sys.agent(d.agent).name.clone(),
                    display: names.display(d.agent).to_string(),
                    kind: d.kind,
                    waiting: sys.describe_message(d.agent, d.waiting),
                })
                .collect(),
            dead_servers: r.dead_servers.iter().map(|&s| sys.server(s).name.clone()).collect(),
            config: r.config,
            configuration: sys.describe_configuration(lts.config(r.config)),
            witness: r
                .witness
                .steps
                .iter()
                .map(|(src, l)| WitnessStep {
                    source: *src,
                    agent: sys.agent(l.agent).name.clone(),
                    server: sys.server(l.server).name.clone(),
                    action: sys.describe_action(l.action),
                })
                .collect(),
            server_view_dot: to_dot(&report_server_view(r, sys)),
            agent_view_text: agent_view(&r.witness, sys).render(),
        })
        .collect();
    VerifyReport {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model: ModelSummary {
            input: input.to_string(),
            servers: sys.servers.len(),
            agents: sys.agents.len(),
            ground_actions: sys.actions.len(),
        },
        lts: lts.stats(),
        complete: lts.is_complete(),
        deadlocks,
        termination_configs: if lts.is_complete() { detect_termination(lts).len() } else { 0 },
    }
}

fn scope_word(s: DeadlockScope) -> &'static str {
    match s {
        DeadlockScope::Partial => "partial",
        DeadlockScope::Total => "total",
    }
}

fn kind_word(k: DeadlockKind) -> &'static str {
    match k {
        DeadlockKind::Resource => "resource",
        DeadlockKind::Communication => "communication",
    }
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}\n")).collect()
}

fn render_text(r: &VerifyReport) -> String {
    let mut out = String::new();
    let s = &r.lts;
    writeln!(
        out,
        "model: {} ({} servers, {} agents, {} ground actions)",
        r.model.input, r.model.servers, r.model.agents, r.model.ground_actions
    )
    .unwrap();
    writeln!(
        out,
        "state space: {} configurations, {} transitions, {} terminal{}",
        s.configs,
        s.edges,
        s.terminal,
        if r.complete { "" } else { " (truncated)" }
    )
    .unwrap();
    if !r.complete {
        out.push_str("exploration hit the state limit; raise --max-states or IMDS_MAX_STATES\n");
        return out;
    }
    writeln!(out, "termination configurations: {}", r.termination_configs).unwrap();
    writeln!(out, "deadlocks: {}", r.deadlocks.len()).unwrap();
    for (i, d) in r.deadlocks.iter().enumerate() {
        writeln!(
            out,
            "\ndeadlock {}: {} deadlock, {} over agents, {} over servers ({} of {} servers dead)",
            i + 1,
            kind_word(d.kind),
            scope_word(d.scope),
            scope_word(d.server_scope),
            d.dead_servers.len(),
            r.model.servers
        )
        .unwrap();
        writeln!(out, "  configuration {}: {}", d.config, d.configuration).unwrap();
        for a in &d.dead_agents {
            writeln!(out, "  dead agent {} ({}): {}, waiting on {}", a.display, a.agent, kind_word(a.kind), a.waiting)
                .unwrap();
        }
        writeln!(out, "  dead servers: {}", d.dead_servers.join(", ")).unwrap();
        writeln!(out, "  witness ({} steps):", d.witness.len()).unwrap();
        for (k, w) in d.witness.iter().enumerate() {
            writeln!(out, "    {:>3}  {}", k + 1, w.action).unwrap();
        }
        out.push_str("  server view:\n");
        out.push_str(&indent(&d.server_view_dot));
        out.push_str("  agent view:\n");
        out.push_str(&indent(&d.agent_view_text));
    }
    out
}

fn verify(
    io: &mut Io,
    args: &ModelArgs,
    max: Option<usize>,
    format: Format,
    output: Option<&Path>,
    jobs: usize,
) -> Result<i32, Failure> {
    let sys = load(io, args)?;
    let lts = explore_with_jobs(&sys, limits(max)?, jobs.max(1));
    let reports = if lts.is_complete() { find_deadlocks(&lts, &sys)? } else { Vec::new() };
    let report = build_report(&args.input.display().to_string(), &sys, &lts, &reports);
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Text => render_text(&report),
        Format::Dot => report
            .deadlocks
            .first()
            .map_or_else(|| "digraph comm {\n  node [shape=box];\n}\n".to_string(), |d| d.server_view_dot.clone()),
    };
    emit(io, output, &text)?;
    Ok(if !lts.is_complete() {
        io.warn(format_args!("state limit of {} configurations reached", lts.len()));
        EXIT_LIMIT
    } else if reports.is_empty() {
        EXIT_OK
    } else {
        EXIT_DEADLOCK
    })
}

/// Reads action indices from a script: one per line, `#` comments allowed.
fn script_choices(path: &Path) -> Result<Vec<usize>, Failure> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let n = line
            .parse()
            .map_err(|_| Failure(format!("{}:{}: not an action index: '{line}'", path.display(), i + 1)))?;
        out.push(n);
    }
    Ok(out)
}

fn simulate(
    io: &mut Io,
    args: &ModelArgs,
    seed: u64,
    steps: usize,
    interactive: bool,
    script: Option<&Path>,
) -> Result<i32, Failure> {
    let sys = load(io, args)?;
    let mut script = match script {
        Some(p) => script_choices(p)?.into_iter(),
        None => Vec::new().into_iter(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = sys.initial.clone();
    let mut out = String::new();
    for n in 0..=steps {
        writeln!(out, "step {n}: {}", sys.describe_configuration(&cfg)).unwrap();
        if cfg.all_terminated() {
            out.push_str("all agents terminated\n");
            io.stdout.write_all(out.as_bytes())?;
            return Ok(EXIT_OK);
        }
        let enabled = enabled_actions(&cfg, &sys);
        if enabled.is_empty() {
            out.push_str("stuck: no enabled actions, possible deadlock (run verify)\n");
            io.stdout.write_all(out.as_bytes())?;
            return Ok(EXIT_DEADLOCK);
        }
        if n == steps {
            break;
        }
        for (i, &id) in enabled.iter().enumerate() {
            writeln!(out, "  [{i}] {}", sys.describe_action(id)).unwrap();
        }
        let choice = if let Some(k) = script.next() {
            if k >= enabled.len() {
                io.stdout.write_all(out.as_bytes())?;
                return Err(Failure(format!("script index {k} out of range at step {n} ({} enabled)", enabled.len())));
            }
            k
        } else if interactive {
            io.stdout.write_all(out.as_bytes())?;
            out.clear();
            match prompt(io, enabled.len())? {
                Some(k) => k,
                None => {
                    io.stdout.write_all(b"input closed\n")?;
                    return Ok(EXIT_OK);
                }
            }
        } else {
            rng.gen_range(0..enabled.len())
        };
        writeln!(out, "  -> [{choice}]").unwrap();
        cfg = step(&cfg, sys.action(enabled[choice]))?;
    }
    out.push_str("step limit reached\n");
    io.stdout.write_all(out.as_bytes())?;
    Ok(EXIT_OK)
}

/// Asks until a valid index arrives; `None` on end of input.
fn prompt(io: &mut Io, n: usize) -> Result<Option<usize>, Failure> {
    loop {
        write!(io.stdout, "choose 0..{}> ", n - 1)?;
        io.stdout.flush()?;
        let mut line = String::new();
        if io.stdin.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        match line.trim().parse::<usize>() {
            Ok(k) if k < n => return Ok(Some(k)),
            _ => writeln!(io.stdout, "invalid choice '{}'", line.trim())?,
        }
    }
}

fn generate_cmd(io: &mut Io, input: &Path, output: &Path, avoidance: Option<Switch>) -> Result<i32, Failure> {
    let text = read(input)?;
    let mut sc = parse_graph(&text).map_err(|e| Failure(format!("{}: {e}", input.display())))?;
    if let Some(sw) = avoidance {
        sc.options.avoidance = sw == Switch::On;
    }
    let g =
        generate(&sc.graph, &sc.itineraries, sc.options).map_err(|e| Failure(format!("{}: {e}", input.display())))?;
    for w in &g.warnings {
        io.warn(format_args!("{}: warning: {w}", input.display()));
    }
    let model = pretty_print(&g.decl);
    let sys = elaborate(&parse(&model)?.decl)
        .map_err(|e| Failure(format!("generated model does not elaborate: {e}")))?
        .system;
    std::fs::write(output, &model).map_err(|e| Failure(format!("{}: {e}", output.display())))?;
    writeln!(io.stdout, "wrote {}: {} servers, {} agents", output.display(), sys.servers.len(), sys.agents.len())?;
    Ok(EXIT_OK)
}

fn export_cmd(io: &mut Io, args: &ModelArgs, output: &Path) -> Result<i32, Failure> {
    let sys = load(io, args)?;
    let model = promela::export(&sys);
    std::fs::write(output, &model.text).map_err(|e| Failure(format!("{}: {e}", output.display())))?;
    let manifest_path = manifest_path(output);
    let manifest = serde_json::to_string_pretty(&model.manifest)? + "\n";
    std::fs::write(&manifest_path, manifest).map_err(|e| Failure(format!("{}: {e}", manifest_path.display())))?;
    writeln!(io.stdout, "wrote {} and {}", output.display(), manifest_path.display())?;
    Ok(EXIT_OK)
}

/// `model.pml` -> `model.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

fn stats_cmd(io: &mut Io, args: &ModelArgs, max: Option<usize>, format: Format) -> Result<i32, Failure> {
    let sys = load(io, args)?;
    let lts = explore_with_jobs(&sys, limits(max)?, 1);
    let s = lts.stats();
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&s)? + "\n",
        _ => format!("configs={} edges={} terminal={} complete={}\n", s.configs, s.edges, s.terminal, s.complete),
    };
    io.stdout.write_all(text.as_bytes())?;
    Ok(if s.complete { EXIT_OK } else { EXIT_LIMIT })
}
