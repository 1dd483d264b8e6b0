//! Backend conformance kit: a corpus of checks certifying that a backend
//! reproduces sequential semantics exactly.
//!
//! Deterministic checks compare an outcome fingerprint (values, relay
//! records, error classes — reals bit-exact) against the same program run on
//! the sequential backend; the oracle side is always regenerated, never
//! hand-written. Behavioral checks assert event ordering with latch tasks
//! and only run where the backend has the capacity (or the live transport)
//! they need.

mod corpus;

use std::fmt;
use std::path::PathBuf;

use serde_json::{json, Value as Json};

use crate::backend::{BackendSpec, Plan};
use crate::error::FutureError;
use crate::relay::{MemorySink, SinkEvent};
use crate::session::{Session, SessionConfig};

pub use corpus::corpus;

/// How a check is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// Fingerprint equality against a fresh sequential run.
    Deterministic,
    /// Self-asserting (ordering, blocking, liveness).
    Behavioral,
}

/// One conformance check: a scripted program over the session API.
pub struct ConformanceCheck {
    pub id: &'static str,
    pub kind: CheckKind,
    /// Skip on backends with fewer concurrent slots than this.
    pub min_capacity: usize,
    /// Requires a transport that can push immediate conditions while the
    /// worker is still evaluating (everything but inline sequential).
    pub needs_live_relay: bool,
    /// Session configuration for both the target run and the oracle run.
    pub config: fn() -> SessionConfig,
    pub run: fn(&mut CheckCtx<'_>) -> Result<(), String>,
}

type SessionFactory<'a> = &'a dyn Fn() -> Result<Session, String>;

/// Execution context handed to each check. The log is the fingerprint: the
/// session's relay sink feeds it, and checks append value/error events
/// through the helpers, preserving interleaving.
pub struct CheckCtx<'a> {
    pub session: Session,
    factory: SessionFactory<'a>,
    log: MemorySink,
    events: Vec<Json>,
    latch_dir: PathBuf,
    latch_counter: usize,
}

impl<'a> CheckCtx<'a> {
    fn new(mut session: Session, factory: SessionFactory<'a>, latch_dir: PathBuf) -> Self {
        let log = MemorySink::new();
        session.set_sink(Box::new(log.clone()));
        CheckCtx {
            session,
            factory,
            log,
            events: Vec::new(),
            latch_dir,
            latch_counter: 0,
        }
    }

    /// A sibling session on the same backend spec and configuration, with a
    /// quiet sink. For checks that need several independent controller
    /// contexts (e.g. chunking invariance).
    pub fn fresh_session(&self) -> Result<Session, String> {
        let mut session = (self.factory)()?;
        session.set_sink(Box::new(MemorySink::new()));
        Ok(session)
    }

    /// Raw view of what the session's sink has relayed so far.
    pub fn sink_events(&self) -> Vec<SinkEvent> {
        self.log.events()
    }

    /// Record a value event into the fingerprint.
    pub fn note_value(&mut self, label: &str, value: &crate::exprlang::Value) {
        self.flush_sink();
        let encoded = crate::exprlang::value::value_to_json(value)
            .unwrap_or_else(|e| json!({"unserializable": e.message}));
        self.events.push(json!(["value", label, encoded]));
    }

    pub fn note_error(&mut self, label: &str, class: &str, message: &str) {
        self.flush_sink();
        self.events.push(json!(["error", label, class, message]));
    }

    pub fn note_text(&mut self, label: &str, text: impl fmt::Display) {
        self.flush_sink();
        self.events.push(json!(["note", label, text.to_string()]));
    }

    fn flush_sink(&mut self) {
        for event in self.log.take_events() {
            match event {
                SinkEvent::Stdout(text) => self.events.push(json!(["stdout", text])),
                SinkEvent::Condition(record) => {
                    self.events.push(json!([
                        "condition",
                        record.kind.as_str(),
                        record.payload,
                        record.class,
                    ]));
                }
            }
        }
    }

    fn into_fingerprint(mut self) -> Vec<Json> {
        self.flush_sink();
        self.events
    }

    /// Path for a latch file the check may create later with
    /// [`CheckCtx::release_latch`].
    pub fn latch_path(&mut self) -> String {
        self.latch_counter += 1;
        self.latch_dir
            .join(format!("latch-{}-{}", uuid::Uuid::new_v4(), self.latch_counter))
            .to_string_lossy()
            .into_owned()
    }

    pub fn release_latch(&self, path: &str) {
        std::fs::write(path, b"go").expect("latch file");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckStatus::Pass => write!(f, "pass"),
            CheckStatus::Fail => write!(f, "FAIL"),
            CheckStatus::Skipped => write!(f, "skip"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub backend: String,
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.status != CheckStatus::Fail)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for r in &self.results {
            match r.status {
                CheckStatus::Pass => c.0 += 1,
                CheckStatus::Fail => c.1 += 1,
                CheckStatus::Skipped => c.2 += 1,
            }
        }
        c
    }

    pub fn to_json(&self) -> Json {
        json!({
            "backend": self.backend,
            "passed": self.all_passed(),
            "results": self.results.iter().map(|r| json!({
                "id": r.id,
                "status": r.status.to_string(),
                "detail": r.detail,
            })).collect::<Vec<_>>(),
        })
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "conformance: {}", self.backend)?;
        let width = self
            .results
            .iter()
            .map(|r| r.id.len())
            .max()
            .unwrap_or(8)
            .max(8);
        for r in &self.results {
            if r.detail.is_empty() {
                writeln!(f, "  {:width$}  {}", r.id, r.status)?;
            } else {
                writeln!(f, "  {:width$}  {}  {}", r.id, r.status, r.detail)?;
            }
        }
        let (pass, fail, skip) = self.counts();
        write!(f, "  {pass} passed, {fail} failed, {skip} skipped")
    }
}

fn fresh_latch_dir() -> std::io::Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("fw-conformance-{}", uuid::Uuid::new_v4()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn supports_live_relay(spec: &BackendSpec) -> bool {
    !matches!(spec, BackendSpec::Sequential)
}

fn run_check_once(
    check: &ConformanceCheck,
    factory: SessionFactory<'_>,
    latch_dir: &std::path::Path,
) -> Result<Vec<Json>, String> {
    let session = factory()?;
    let mut ctx = CheckCtx::new(session, factory, latch_dir.to_path_buf());
    (check.run)(&mut ctx)?;
    ctx.session.shutdown();
    Ok(ctx.into_fingerprint())
}

fn first_diff(oracle: &[Json], target: &[Json]) -> String {
    if oracle.len() != target.len() {
        return format!(
            "event count differs: sequential produced {}, backend produced {}",
            oracle.len(),
            target.len()
        );
    }
    for (i, (a, b)) in oracle.iter().zip(target).enumerate() {
        if a != b {
            return format!("event {i} differs: sequential {a} vs backend {b}");
        }
    }
    String::new()
}

/// Options for a conformance run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Only run checks whose id matches: a plain pattern matches as a
    /// substring, a pattern containing `*` as an anchored glob.
    pub filter: Option<String>,
    pub worker_exe: Option<PathBuf>,
}

fn filter_matches(pattern: &str, id: &str) -> bool {
    if !pattern.contains('*') {
        return id.contains(pattern);
    }
    let parts: Vec<&str> = pattern.split('*').collect();
    let mut rest = match id.strip_prefix(parts[0]) {
        Some(rest) => rest,
        None => return false,
    };
    for (i, part) in parts.iter().enumerate().skip(1) {
        let last = i == parts.len() - 1;
        if part.is_empty() {
            if last {
                return true;
            }
            continue;
        }
        if last {
            return rest.ends_with(part);
        }
        match rest.find(part) {
            Some(pos) => rest = &rest[pos + part.len()..],
            None => return false,
        }
    }
    rest.is_empty()
}

/// Run one check against explicit target/oracle session factories. The
/// public corpus runner goes through this; tests can inject broken backends.
pub fn judge_check(
    check: &ConformanceCheck,
    target: SessionFactory<'_>,
    oracle: SessionFactory<'_>,
    latch_dir: &std::path::Path,
) -> CheckResult {
    match check.kind {
        CheckKind::Behavioral => match run_check_once(check, target, latch_dir) {
            Ok(_) => CheckResult {
                id: check.id.to_string(),
                status: CheckStatus::Pass,
                detail: String::new(),
            },
            Err(e) => CheckResult {
                id: check.id.to_string(),
                status: CheckStatus::Fail,
                detail: e,
            },
        },
        CheckKind::Deterministic => {
            let oracle_print = run_check_once(check, oracle, latch_dir);
            let target_print = run_check_once(check, target, latch_dir);
            match (oracle_print, target_print) {
                (Ok(o), Ok(t)) => {
                    let diff = first_diff(&o, &t);
                    if diff.is_empty() {
                        CheckResult {
                            id: check.id.to_string(),
                            status: CheckStatus::Pass,
                            detail: String::new(),
                        }
                    } else {
                        CheckResult {
                            id: check.id.to_string(),
                            status: CheckStatus::Fail,
                            detail: diff,
                        }
                    }
                }
                (Err(e), _) => CheckResult {
                    id: check.id.to_string(),
                    status: CheckStatus::Fail,
                    detail: format!("oracle run failed: {e}"),
                },
                (_, Err(e)) => CheckResult {
                    id: check.id.to_string(),
                    status: CheckStatus::Fail,
                    detail: e,
                },
            }
        }
    }
}

/// Execute the corpus against a backend spec. Each check owns a fresh
/// session; deterministic checks are compared event-for-event against a
/// fresh sequential run of the same program.
pub fn run_conformance(spec: &BackendSpec, options: &RunOptions) -> Result<Report, FutureError> {
    let latch_dir = fresh_latch_dir().map_err(|e| FutureError::new(format!("latch dir: {e}")))?;
    let worker_exe = options.worker_exe.clone();
    let capacity_probe = probe_capacity(spec, worker_exe.as_ref())?;
    let mut results = Vec::new();
    for check in corpus() {
        if let Some(filter) = &options.filter {
            if !filter_matches(filter, check.id) {
                continue;
            }
        }
        if capacity_probe < check.min_capacity {
            results.push(CheckResult {
                id: check.id.to_string(),
                status: CheckStatus::Skipped,
                detail: format!("needs capacity {}", check.min_capacity),
            });
            continue;
        }
        if check.needs_live_relay && !supports_live_relay(spec) {
            results.push(CheckResult {
                id: check.id.to_string(),
                status: CheckStatus::Skipped,
                detail: "needs a live transport".to_string(),
            });
            continue;
        }
        let config = check.config;
        let target_spec = spec.clone();
        let target_exe = worker_exe.clone();
        let target = move || -> Result<Session, String> {
            Session::with_plan(
                SessionConfig {
                    worker_exe: target_exe.clone(),
                    ..config()
                },
                Plan::single(target_spec.clone()),
            )
            .map_err(|e| format!("backend failed to start: {e}"))
        };
        let oracle_exe = worker_exe.clone();
        let oracle = move || -> Result<Session, String> {
            Session::with_plan(
                SessionConfig {
                    worker_exe: oracle_exe.clone(),
                    ..config()
                },
                Plan::sequential(),
            )
            .map_err(|e| format!("oracle failed to start: {e}"))
        };
        results.push(judge_check(&check, &target, &oracle, &latch_dir));
    }
    let _ = std::fs::remove_dir_all(&latch_dir);
    Ok(Report {
        backend: spec.to_string(),
        results,
    })
}

fn probe_capacity(
    spec: &BackendSpec,
    worker_exe: Option<&PathBuf>,
) -> Result<usize, FutureError> {
    match spec {
        BackendSpec::Sequential => Ok(1),
        BackendSpec::ProcessPool { .. } => Ok(spec.resolved_workers()),
        BackendSpec::TcpCluster { .. } => {
            // endpoints may be degraded; ask a real connection
            let config = SessionConfig {
                worker_exe: worker_exe.cloned(),
                ..SessionConfig::default()
            };
            let session = Session::with_plan(config, Plan::single(spec.clone()))?;
            Ok(session.capacity())
        }
    }
}
