//! The backend contract every execution backend implements, plus topology
//! plans for nested parallelism and worker-count resolution.
//!
//! A plan is a stack of backend specs, one layer per nesting depth. Layer 0
//! runs on the controller; every launched task carries the remaining layers
//! so workers install them locally. A worker with an exhausted plan tail runs
//! sequential — that is the protection against accidental nested
//! parallelism.

use std::fmt;

use crate::error::FutureError;
use crate::relay::RelayRecord;
use crate::task::{FutureOutcome, TaskSpec};

/// Environment variable: explicit worker count override.
pub const ENV_WORKERS: &str = "FW_WORKERS";
/// Environment variable: set to "1" in every worker the framework spawns,
/// forcing nested auto-resolution down to one.
pub const ENV_NESTED: &str = "FW_NESTED";
/// Environment variable: path of the worker executable, consulted when the
/// current executable is not the framework binary (tests, embedding).
pub const ENV_WORKER_EXE: &str = "FW_WORKER_EXE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workers {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Sequential,
    ProcessPool { workers: Workers },
    TcpCluster { endpoints: Vec<String> },
}

impl BackendSpec {
    pub fn pool(n: usize) -> Self {
        BackendSpec::ProcessPool {
            workers: Workers::Fixed(n),
        }
    }

    /// Resolve the worker count: explicit spec first, then `FW_WORKERS`,
    /// then `FW_NESTED=1` forcing one, then the logical CPU count, floor 1.
    pub fn resolved_workers(&self) -> usize {
        match self {
            BackendSpec::Sequential => 1,
            BackendSpec::TcpCluster { endpoints } => endpoints.len().max(1),
            BackendSpec::ProcessPool { workers } => match workers {
                Workers::Fixed(n) => (*n).max(1),
                Workers::Auto => available_workers(),
            },
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BackendSpec::Sequential => "sequential",
            BackendSpec::ProcessPool { .. } => "process_pool",
            BackendSpec::TcpCluster { .. } => "tcp_cluster",
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Sequential => write!(f, "sequential"),
            BackendSpec::ProcessPool {
                workers: Workers::Auto,
            } => write!(f, "process_pool:auto"),
            BackendSpec::ProcessPool {
                workers: Workers::Fixed(n),
            } => write!(f, "process_pool:{n}"),
            BackendSpec::TcpCluster { endpoints } => {
                write!(f, "tcp_cluster:{}", endpoints.join(","))
            }
        }
    }
}

/// Environment-driven worker count, used when a spec says "auto".
pub fn available_workers() -> usize {
    if let Ok(v) = std::env::var(ENV_WORKERS) {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    if std::env::var(ENV_NESTED).as_deref() == Ok("1") {
        return 1;
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// A backend topology: layer k configures workers at nesting depth k. Depths
/// beyond the list are implicitly sequential.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    layers: Vec<BackendSpec>,
}

impl Plan {
    pub fn new(layers: Vec<BackendSpec>) -> Result<Self, FutureError> {
        if layers.is_empty() {
            return Err(FutureError::new("a plan needs at least one layer"));
        }
        Ok(Plan { layers })
    }

    pub fn sequential() -> Self {
        Plan {
            layers: vec![BackendSpec::Sequential],
        }
    }

    pub fn single(spec: BackendSpec) -> Self {
        Plan { layers: vec![spec] }
    }

    pub fn layers(&self) -> &[BackendSpec] {
        &self.layers
    }

    pub fn first(&self) -> &BackendSpec {
        &self.layers[0]
    }

    /// The layers workers install locally (everything below layer 0).
    pub fn tail(&self) -> Vec<BackendSpec> {
        self.layers[1..].to_vec()
    }

    /// Parse the `kind:arg/kind:arg` plan notation, e.g.
    /// `process_pool:2/process_pool:3` or
    /// `tcp_cluster:127.0.0.1:7777,127.0.0.1:7778`.
    pub fn parse(text: &str) -> Result<Self, FutureError> {
        let mut layers = Vec::new();
        for part in text.split('/') {
            let part = part.trim();
            if part.is_empty() {
                return Err(FutureError::new(format!("empty plan layer in {text:?}")));
            }
            layers.push(parse_spec(part)?);
        }
        Plan::new(layers)
    }
}

fn parse_spec(part: &str) -> Result<BackendSpec, FutureError> {
    let (kind, arg) = match part.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (part, None),
    };
    match kind {
        "sequential" => {
            if arg.is_some() {
                return Err(FutureError::new("sequential takes no argument"));
            }
            Ok(BackendSpec::Sequential)
        }
        "process_pool" => {
            let workers = match arg {
                None | Some("auto") => Workers::Auto,
                Some(n) => Workers::Fixed(n.parse::<usize>().map_err(|_| {
                    FutureError::new(format!("bad worker count {n:?} for process_pool"))
                })?),
            };
            Ok(BackendSpec::ProcessPool { workers })
        }
        "tcp_cluster" => {
            let endpoints: Vec<String> = arg
                .unwrap_or("")
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if endpoints.is_empty() {
                return Err(FutureError::new(
                    "tcp_cluster needs at least one host:port endpoint",
                ));
            }
            Ok(BackendSpec::TcpCluster { endpoints })
        }
        other => Err(FutureError::new(format!("unknown backend kind {other:?}"))),
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.layers.iter().map(|s| s.to_string()).collect();
        write!(f, "{}", parts.join("/"))
    }
}

/// Opaque token binding a launched task to a backend slot, valid from launch
/// until collect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BackendTicket(pub(crate) u64);

/// Result of a non-blocking poll.
#[derive(Debug, Clone)]
pub struct PollStatus {
    pub done: bool,
    /// Immediate-condition records that arrived since the last poll.
    pub immediate: Vec<RelayRecord>,
}

/// The contract every execution backend implements. A backend instance is
/// used by one controller context; implementations tolerate interleaved
/// poll/launch/collect on different tickets.
pub trait Backend: Send {
    /// Start a task. Blocks while no slot is free, never for the task's own
    /// completion.
    fn launch(&mut self, task: TaskSpec) -> Result<BackendTicket, FutureError>;

    /// Non-blocking completion check; drains pending immediate records.
    fn poll(&mut self, ticket: BackendTicket) -> Result<PollStatus, FutureError>;

    /// Block until the task finishes and return its outcome. Consumes the
    /// ticket.
    fn collect(&mut self, ticket: BackendTicket) -> Result<FutureOutcome, FutureError>;

    /// Number of concurrent slots.
    fn capacity(&self) -> usize;

    /// Release workers and channels. Idempotent.
    fn shutdown(&mut self);

    /// Concrete-type access, used for fault injection in tests.
    fn as_any(&mut self) -> &mut dyn std::any::Any;
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    // env-var tests share process state; serialize them
    static ENV_LOCK: Mutex<()> = Mutex::new(());

    #[test]
    fn plan_notation_round_trips() {
        for text in [
            "sequential",
            "process_pool:2",
            "process_pool:auto",
            "process_pool:2/process_pool:3",
            "tcp_cluster:127.0.0.1:7777,127.0.0.1:7778",
            "tcp_cluster:n1.remote.org:7000/sequential",
        ] {
            let plan = Plan::parse(text).unwrap();
            assert_eq!(plan.to_string(), text, "for {text}");
        }
        // bare process_pool reads as auto
        assert_eq!(
            Plan::parse("process_pool").unwrap().to_string(),
            "process_pool:auto"
        );
    }

    #[test]
    fn plan_rejects_garbage() {
        assert!(Plan::parse("").is_err());
        assert!(Plan::parse("quantum:3").is_err());
        assert!(Plan::parse("process_pool:x").is_err());
        assert!(Plan::parse("tcp_cluster").is_err());
        assert!(Plan::parse("sequential//sequential").is_err());
    }

    #[test]
    fn plan_tail_drops_first_layer() {
        let plan = Plan::parse("process_pool:2/process_pool:3").unwrap();
        assert_eq!(plan.tail(), vec![BackendSpec::pool(3)]);
        assert!(Plan::sequential().tail().is_empty());
    }

    #[test]
    fn explicit_workers_beat_environment() {
        let _guard = ENV_LOCK.lock().unwrap();
        std::env::set_var(ENV_WORKERS, "3");
        assert_eq!(BackendSpec::pool(4).resolved_workers(), 4);
        std::env::remove_var(ENV_WORKERS);
    }

    #[test]
    fn env_resolution_order() {
        let _guard = ENV_LOCK.lock().unwrap();
        std::env::set_var(ENV_WORKERS, "3");
        std::env::set_var(ENV_NESTED, "1");
        assert_eq!(available_workers(), 3);
        std::env::remove_var(ENV_WORKERS);
        assert_eq!(available_workers(), 1);
        std::env::remove_var(ENV_NESTED);
        assert!(available_workers() >= 1);
    }
}
