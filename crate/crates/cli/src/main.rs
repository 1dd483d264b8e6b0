//! `fw` — single binary entry point: worker daemon, expression runner, demo
//! map, conformance runner, RNG vector dumper, and a micro-benchmark.
//!
//! Exit codes: 0 success, 1 evaluation error, 2 infrastructure error,
//! 3 usage error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fw_core::backend::BackendSpec;
use fw_core::conformance::{run_conformance, RunOptions};
use fw_core::exprlang::{parse, Env, NumVec, Value};
use fw_core::mapreduce::{future_map, MapError, MapFn, MapOpts};
use fw_core::rng::{next_uniform, stream_for, RngCursor, RngState};
use fw_core::session::{FutureOpts, Session, SessionConfig};
use fw_core::{CreateError, Plan, ValueError};

#[derive(Parser)]
#[command(name = "fw", version, about = "Futures over pluggable parallel backends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run as a worker process (pool child, dial-back, or daemon).
    Worker(WorkerArgs),
    /// Evaluate one expression as a future on a chosen plan.
    Run(RunArgs),
    /// Demonstrations of the higher-level constructs.
    Demo {
        #[command(subcommand)]
        demo: DemoCommand,
    },
    /// Certify a backend against sequential semantics.
    Conformance {
        #[command(subcommand)]
        action: ConformanceCommand,
    },
    /// Inspect the parallel RNG streams.
    Rng {
        #[command(subcommand)]
        action: RngCommand,
    },
    /// Wall-time comparison of a plan against sequential execution.
    Bench(BenchArgs),
}

#[derive(Args)]
struct WorkerArgs {
    #[command(subcommand)]
    mode: Option<WorkerMode>,
    /// Speak the wire protocol on stdin/stdout (process-pool child mode).
    #[arg(long)]
    stdio: bool,
    /// Dial back to a listening controller at host:port.
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
}

#[derive(Subcommand)]
enum WorkerMode {
    /// Listen for a controller as a standalone daemon.
    Serve {
        #[arg(long, value_name = "HOST:PORT")]
        listen: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Backend topology, e.g. `sequential`, `process_pool:2`,
    /// `process_pool:2/process_pool:3`, `tcp_cluster:host:port,host:port`.
    #[arg(long, default_value = "sequential")]
    plan: String,
    /// Expression source, e.g. `(+ x 1)`.
    #[arg(long)]
    expr: String,
    /// Environment bindings as NAME=VALUE (int, real, "string", [vec], bare
    /// text). Repeatable.
    #[arg(long = "env", value_name = "NAME=VALUE")]
    env: Vec<String>,
    /// Session seed; also requests a reproducible RNG stream for the future.
    #[arg(long)]
    seed: Option<u64>,
    /// Create the future lazily and let the value() call launch it.
    #[arg(long)]
    lazy: bool,
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Chunked parallel map over 1..n.
    Map {
        #[arg(long, default_value = "sequential")]
        plan: String,
        #[arg(long, default_value_t = 10)]
        n: i64,
        /// Session seed; switches the demo to reproducible per-element
        /// normal draws.
        #[arg(long)]
        seed: Option<u64>,
        /// Explicit chunk count (default: one chunk per worker).
        #[arg(long)]
        chunks: Option<usize>,
    },
}

#[derive(Subcommand)]
enum ConformanceCommand {
    /// Run the corpus against the plan's first layer.
    Run {
        #[arg(long, default_value = "sequential")]
        plan: String,
        /// Check-id filter: substring, or anchored glob with `*`.
        #[arg(long)]
        filter: Option<String>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RngCommand {
    /// Print uniforms from a stream.
    Dump {
        /// Stream index (the stream assigned to future ordinal k).
        #[arg(long, default_value_t = 0)]
        stream: u64,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Session seed the streams derive from.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Explicit six-word generator state `a,b,c,d,e,f`; `--stream k`
        /// then applies k jumps to it.
        #[arg(long, value_name = "W,W,W,W,W,W")]
        state: Option<String>,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "process_pool:2")]
    plan: String,
    #[arg(long, default_value_t = 8)]
    tasks: usize,
    #[arg(long, default_value_t = 300)]
    task_ms: u64,
}

enum CliError {
    Eval(String),
    Infra(String),
    Usage(String),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Eval(msg) => {
                eprintln!("Error: {msg}");
                ExitCode::from(1)
            }
            CliError::Infra(msg) => {
                eprintln!("FutureError: {msg}");
                ExitCode::from(2)
            }
            CliError::Usage(msg) => {
                eprintln!("usage error: {msg}");
                ExitCode::from(3)
            }
        }
    }
}

impl From<ValueError> for CliError {
    fn from(e: ValueError) -> Self {
        match e {
            ValueError::Eval(e) => CliError::Eval(e.message),
            ValueError::Future(e) => CliError::Infra(e.message),
        }
    }
}

impl From<CreateError> for CliError {
    fn from(e: CreateError) -> Self {
        match e {
            CreateError::Backend(e) => CliError::Infra(e.message),
            other => CliError::Eval(other.to_string()),
        }
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Create(e) => e.into(),
            MapError::Value(e) => e.into(),
        }
    }
}

impl From<fw_core::FutureError> for CliError {
    fn from(e: fw_core::FutureError) -> Self {
        CliError::Infra(e.message)
    }
}

fn parse_plan(text: &str) -> Result<Plan, CliError> {
    Plan::parse(text).map_err(|e| CliError::Usage(e.message))
}

/// Parse a `--env` value literal: quoted string, `[..]` numeric vector,
/// int, real, bool, null; anything else is taken as bare text.
fn parse_env_value(text: &str) -> Result<Value, String> {
    let text = text.trim();
    if let Some(stripped) = text.strip_prefix('"') {
        let inner = stripped
            .strip_suffix('"')
            .ok_or_else(|| format!("unterminated string literal {text:?}"))?;
        return Ok(Value::Str(inner.to_string()));
    }
    if let Some(stripped) = text.strip_prefix('[') {
        let inner = stripped
            .strip_suffix(']')
            .ok_or_else(|| format!("unterminated vector literal {text:?}"))?;
        let parts: Vec<&str> = inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        if parts.iter().all(|p| p.parse::<i64>().is_ok()) {
            let items = parts.iter().map(|p| p.parse::<i64>().unwrap()).collect();
            return Ok(Value::Vec(NumVec::Int(items)));
        }
        let items: Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
        return items
            .map(|v| Value::Vec(NumVec::Real(v)))
            .map_err(|_| format!("vector elements must be numeric in {text:?}"));
    }
    match text {
        "null" => return Ok(Value::Null),
        "true" => return Ok(Value::Bool(true)),
        "false" => return Ok(Value::Bool(false)),
        _ => {}
    }
    if let Ok(i) = text.parse::<i64>() {
        return Ok(Value::Int(i));
    }
    if let Ok(r) = text.parse::<f64>() {
        return Ok(Value::Real(r));
    }
    Ok(Value::Str(text.to_string()))
}

fn parse_env_pairs(pairs: &[String]) -> Result<Env, CliError> {
    let mut env = Env::new();
    for pair in pairs {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--env wants NAME=VALUE, got {pair:?}")))?;
        let value = parse_env_value(value).map_err(CliError::Usage)?;
        env.define(name.trim(), value);
    }
    Ok(env)
}

fn cmd_worker(args: WorkerArgs) -> Result<(), CliError> {
    match (args.mode, args.stdio, args.connect) {
        (Some(WorkerMode::Serve { listen }), false, None) => {
            fw_core::worker::serve_worker(&listen).map_err(|e| CliError::Infra(e.to_string()))
        }
        (None, true, None) => {
            fw_core::worker::run_worker_stdio().map_err(|e| CliError::Infra(e.to_string()))
        }
        (None, false, Some(addr)) => {
            fw_core::worker::run_worker_connect(&addr).map_err(|e| CliError::Infra(e.to_string()))
        }
        _ => Err(CliError::Usage(
            "worker wants exactly one of: serve --listen, --stdio, --connect".to_string(),
        )),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let plan = parse_plan(&args.plan)?;
    let body = parse(&args.expr).map_err(|e| CliError::Usage(e.to_string()))?;
    let env = parse_env_pairs(&args.env)?;
    let config = SessionConfig {
        seed: args.seed.unwrap_or(0),
        ..SessionConfig::default()
    };
    let mut session = Session::with_plan(config, plan)?;
    let opts = FutureOpts {
        seed: args.seed.is_some(),
        lazy: args.lazy,
        ..Default::default()
    };
    let handle = session.future(body, &env, opts)?;
    let value = session.value(&handle)?;
    println!("{value}");
    Ok(())
}

fn cmd_demo_map(
    plan: String,
    n: i64,
    seed: Option<u64>,
    chunks: Option<usize>,
) -> Result<(), CliError> {
    let plan = parse_plan(&plan)?;
    let config = SessionConfig {
        seed: seed.unwrap_or(0),
        ..SessionConfig::default()
    };
    let mut session = Session::with_plan(config, plan)?;
    let items: Vec<Value> = (1..=n).map(Value::Int).collect();
    let map_fn = if seed.is_some() {
        MapFn::Expr {
            body: parse("(sum (rnorm 3))").unwrap(),
            slot: "x".to_string(),
        }
    } else {
        MapFn::Expr {
            body: parse("(* x x)").unwrap(),
            slot: "x".to_string(),
        }
    };
    let opts = MapOpts {
        chunks,
        seed: seed.is_some(),
    };
    let started = Instant::now();
    let out = future_map(&mut session, &items, &map_fn, &Env::new(), &opts)?;
    let elapsed = started.elapsed();
    println!("{}", Value::List(out));
    println!("elapsed_ms={}", elapsed.as_millis());
    Ok(())
}

fn cmd_conformance(
    plan: String,
    filter: Option<String>,
    report_path: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    let plan = parse_plan(&plan)?;
    let spec: BackendSpec = plan.first().clone();
    let report = run_conformance(
        &spec,
        &RunOptions {
            filter,
            worker_exe: None,
        },
    )?;
    println!("{report}");
    if let Some(path) = report_path {
        let json = serde_json::to_string_pretty(&report.to_json())
            .map_err(|e| CliError::Infra(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| CliError::Infra(e.to_string()))?;
        println!("report written to {}", path.display());
    }
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_rng_dump(
    stream: u64,
    n: usize,
    seed: u64,
    state: Option<String>,
) -> Result<(), CliError> {
    let start = match state {
        Some(text) => {
            let words: Result<Vec<u64>, _> =
                text.split(',').map(|w| w.trim().parse::<u64>()).collect();
            let words = words.map_err(|e| CliError::Usage(format!("bad state word: {e}")))?;
            if words.len() != 6 {
                return Err(CliError::Usage("state wants six words".to_string()));
            }
            let mut s = RngState::from_words([
                words[0], words[1], words[2], words[3], words[4], words[5],
            ])
            .map_err(CliError::Usage)?;
            for _ in 0..stream {
                s = fw_core::rng::next_stream(&s);
            }
            s
        }
        None => stream_for(seed, stream),
    };
    let mut cursor = RngCursor::new(start);
    for _ in 0..n {
        println!("{}", next_uniform(&mut cursor));
    }
    Ok(())
}

fn run_sleep_batch(plan: Plan, tasks: usize, task_ms: u64) -> Result<u128, CliError> {
    let mut session = Session::with_plan(SessionConfig::default(), plan)?;
    let body = parse(&format!("(begin (sleep_ms {task_ms}) 1)")).unwrap();
    let started = Instant::now();
    let mut handles = Vec::with_capacity(tasks);
    for _ in 0..tasks {
        handles.push(session.future(body.clone(), &Env::new(), FutureOpts::default())?);
    }
    fw_core::value_all(&mut session, &handles)?;
    Ok(started.elapsed().as_millis())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let plan = parse_plan(&args.plan)?;
    let sequential_ms = run_sleep_batch(Plan::sequential(), args.tasks, args.task_ms)?;
    let plan_ms = run_sleep_batch(plan, args.tasks, args.task_ms)?;
    let speedup = sequential_ms as f64 / plan_ms.max(1) as f64;
    println!(
        "{} tasks x {} ms on {}:",
        args.tasks, args.task_ms, args.plan
    );
    println!("sequential_ms={sequential_ms}");
    println!("plan_ms={plan_ms}");
    println!("speedup={speedup:.2}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<ExitCode, CliError> = match cli.command {
        Command::Worker(args) => cmd_worker(args).map(|()| ExitCode::SUCCESS),
        Command::Run(args) => cmd_run(args).map(|()| ExitCode::SUCCESS),
        Command::Demo {
            demo:
                DemoCommand::Map {
                    plan,
                    n,
                    seed,
                    chunks,
                },
        } => cmd_demo_map(plan, n, seed, chunks).map(|()| ExitCode::SUCCESS),
        Command::Conformance {
            action: ConformanceCommand::Run { plan, filter, report },
        } => cmd_conformance(plan, filter, report),
        Command::Rng {
            action:
                RngCommand::Dump {
                    stream,
                    n,
                    seed,
                    state,
                },
        } => cmd_rng_dump(stream, n, seed, state).map(|()| ExitCode::SUCCESS),
        Command::Bench(args) => cmd_bench(args).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => e.report(),
    }
}
