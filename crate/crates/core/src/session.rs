//! The controller session: create futures, query resolution, collect values.
//!
//! One session is one controller context. It owns the active backend, hands
//! out handles, assigns creation ordinals (which drive RNG stream
//! assignment), and replays worker-captured output and conditions through
//! its sinks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use uuid::Uuid;

use crate::backend::{Backend, BackendTicket, Plan};
use crate::backends::build_backend;
use crate::error::{CreateError, EvalError, FutureError, ValueError};
use crate::exprlang::{free_vars, Env, Expr, Registry, Value};
use crate::relay::{replay, RelayKind, RelayRecord, RelaySink, StandardSink};
use crate::rng::stream_for;
use crate::task::{FutureOutcome, OutcomeKind, RngMisusePolicy, TaskSpec};

/// Lifecycle of one future. Lazy futures stay `Created` until first touched
/// by `resolved()` or `value()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FutureState {
    Created,
    Launched,
    Running,
    Resolved,
    Failed,
}

/// Per-future options.
#[derive(Debug, Clone)]
pub struct FutureOpts {
    /// Request a dedicated reproducible RNG stream.
    pub seed: bool,
    /// Defer launching until the future is first queried.
    pub lazy: bool,
    /// Names to capture beyond what static analysis finds.
    pub globals_override: Vec<String>,
    pub stdout_capture: bool,
}

impl Default for FutureOpts {
    fn default() -> Self {
        FutureOpts {
            seed: false,
            lazy: false,
            globals_override: Vec::new(),
            stdout_capture: true,
        }
    }
}

impl FutureOpts {
    pub fn seeded() -> Self {
        FutureOpts {
            seed: true,
            ..Default::default()
        }
    }

    pub fn lazy() -> Self {
        FutureOpts {
            lazy: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// Session seed for RNG stream derivation.
    pub seed: u64,
    pub rng_misuse: RngMisusePolicy,
    /// Reject captured values bound to their creating session. On by
    /// default; can be disabled, in which case a non-exportable capture
    /// fails later, if and when it has to cross a process boundary.
    pub scan_non_exportable: bool,
    /// Worker executable for process pools; defaults to this binary (or
    /// `FW_WORKER_EXE`).
    pub worker_exe: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            seed: 0,
            rng_misuse: RngMisusePolicy::Warn,
            scan_non_exportable: true,
            worker_exe: None,
        }
    }
}

/// Cheap handle to one future. Belongs to the session that created it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FutureHandle {
    id: Uuid,
    ordinal: u64,
}

impl FutureHandle {
    pub fn id(&self) -> Uuid {
        self.id
    }

    /// Creation counter within the session, 0-based.
    pub fn ordinal(&self) -> u64 {
        self.ordinal
    }
}

struct Entry {
    state: FutureState,
    task: TaskSpec,
    ticket: Option<BackendTicket>,
    outcome: Option<FutureOutcome>,
    relayed_immediates: HashSet<u64>,
}

pub struct Session {
    id: Uuid,
    config: SessionConfig,
    plan: Plan,
    backend: Box<dyn Backend>,
    next_ordinal: u64,
    entries: HashMap<Uuid, Entry>,
    sink: Box<dyn RelaySink>,
}

impl Session {
    /// A fresh session on the default sequential plan.
    pub fn new(config: SessionConfig) -> Result<Self, FutureError> {
        let (backend, _) = build_backend(
            crate::backend::Plan::sequential().first(),
            config.worker_exe.as_ref(),
        )?;
        Ok(Session {
            id: Uuid::new_v4(),
            config,
            plan: Plan::sequential(),
            backend,
            next_ordinal: 0,
            entries: HashMap::new(),
            sink: Box::new(StandardSink),
        })
    }

    pub fn with_plan(config: SessionConfig, plan: Plan) -> Result<Self, FutureError> {
        let mut session = Session::new(config)?;
        session.set_plan(plan)?;
        Ok(session)
    }

    /// Drive the session with a caller-supplied backend implementation.
    /// This is the plug-in point for third-party backends; the conformance
    /// kit certifies them against sequential semantics.
    pub fn with_backend(config: SessionConfig, backend: Box<dyn Backend>) -> Self {
        Session {
            id: Uuid::new_v4(),
            config,
            plan: Plan::sequential(),
            backend,
            next_ordinal: 0,
            entries: HashMap::new(),
            sink: Box::new(StandardSink),
        }
    }

    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn set_sink(&mut self, sink: Box<dyn RelaySink>) {
        self.sink = sink;
    }

    /// Install a topology: layer 0 becomes the active backend, the rest
    /// travels inside every launched task. Re-planning with futures still
    /// outstanding is refused.
    pub fn set_plan(&mut self, plan: Plan) -> Result<(), FutureError> {
        let outstanding = self
            .entries
            .values()
            .any(|e| matches!(e.state, FutureState::Launched | FutureState::Running));
        if outstanding {
            return Err(FutureError::new(
                "cannot change the plan while futures are outstanding",
            ));
        }
        let (backend, warnings) = build_backend(plan.first(), self.config.worker_exe.as_ref())?;
        self.backend.shutdown();
        self.backend = backend;
        self.plan = plan;
        for text in warnings {
            self.sink.condition(&RelayRecord {
                kind: RelayKind::Warning,
                seq: 0,
                payload: text,
                class: None,
                data: None,
            });
        }
        Ok(())
    }

    /// Slots the active backend runs concurrently.
    pub fn capacity(&self) -> usize {
        self.backend.capacity()
    }

    /// Claim a block of creation ordinals without creating futures. Used for
    /// per-element stream assignment in chunked maps, so that chunking never
    /// changes which stream an element draws from.
    pub fn reserve_ordinals(&mut self, count: u64) -> u64 {
        let base = self.next_ordinal;
        self.next_ordinal += count;
        base
    }

    /// Direct access for fault injection in tests.
    pub fn backend_mut(&mut self) -> &mut dyn Backend {
        self.backend.as_mut()
    }

    pub fn state(&self, handle: &FutureHandle) -> FutureState {
        self.entry(handle).state
    }

    fn entry(&self, handle: &FutureHandle) -> &Entry {
        self.entries
            .get(&handle.id)
            .expect("handle does not belong to this session")
    }

    fn entry_mut(&mut self, handle: &FutureHandle) -> &mut Entry {
        self.entries
            .get_mut(&handle.id)
            .expect("handle does not belong to this session")
    }

    /// Create a future: capture the body's globals by value, assign an
    /// ordinal (and RNG stream when seeded), and launch unless lazy.
    /// Launching blocks only while every backend slot is taken, never for
    /// the future's own completion.
    pub fn future(
        &mut self,
        body: Expr,
        env: &Env,
        opts: FutureOpts,
    ) -> Result<FutureHandle, CreateError> {
        let mut required = free_vars(&body, Registry::standard());
        for name in &opts.globals_override {
            if !required.contains(name) {
                required.push(name.clone());
            }
        }
        let mut captured = BTreeMap::new();
        for name in &required {
            match env.lookup(name) {
                Some(v) => {
                    captured.insert(name.clone(), v.clone());
                }
                None => return Err(CreateError::MissingGlobal(name.clone())),
            }
        }
        if self.config.scan_non_exportable {
            for (name, v) in &captured {
                if v.find_resource().is_some() {
                    return Err(CreateError::NonExportable(name.clone()));
                }
            }
        }
        let ordinal = self.next_ordinal;
        self.next_ordinal += 1;
        let rng_stream = opts.seed.then(|| stream_for(self.config.seed, ordinal));
        let task = TaskSpec {
            body,
            env: captured,
            seed: opts.seed,
            rng_stream,
            lazy: opts.lazy,
            globals_override: opts.globals_override,
            stdout_capture: opts.stdout_capture,
            plan_tail: self.plan.tail(),
            rng_misuse: self.config.rng_misuse,
        };
        let handle = FutureHandle {
            id: Uuid::new_v4(),
            ordinal,
        };
        let mut entry = Entry {
            state: FutureState::Created,
            task,
            ticket: None,
            outcome: None,
            relayed_immediates: HashSet::new(),
        };
        if !entry.task.lazy {
            let ticket = self.backend.launch(entry.task.clone())?;
            entry.ticket = Some(ticket);
            entry.state = FutureState::Launched;
        }
        self.entries.insert(handle.id, entry);
        if self.entry(&handle).ticket.is_some() {
            // opportunistic drain so immediate conditions surface as early
            // as the creating call itself
            let _ = self.drain_immediates(&handle);
        }
        Ok(handle)
    }

    fn launch_if_created(&mut self, handle: &FutureHandle) -> Result<(), FutureError> {
        let entry = self.entry_mut(handle);
        if entry.state == FutureState::Created {
            let task = entry.task.clone();
            let ticket = self.backend.launch(task)?;
            let entry = self.entry_mut(handle);
            entry.ticket = Some(ticket);
            entry.state = FutureState::Launched;
        }
        Ok(())
    }

    /// Poll the backend and relay any immediate-condition records that
    /// arrived. Returns backend-reported doneness, if a ticket exists.
    fn drain_immediates(&mut self, handle: &FutureHandle) -> Result<Option<bool>, FutureError> {
        let Some(ticket) = self.entry(handle).ticket else {
            return Ok(None);
        };
        if self.entry(handle).outcome.is_some() {
            return Ok(Some(true));
        }
        let status = self.backend.poll(ticket)?;
        let entry = self
            .entries
            .get_mut(&handle.id)
            .expect("entry exists");
        if !status.done && entry.state == FutureState::Launched {
            entry.state = FutureState::Running;
        }
        let mut fresh = Vec::new();
        for record in status.immediate {
            if entry.relayed_immediates.insert(record.seq) {
                fresh.push(record);
            }
        }
        for record in &fresh {
            self.sink.condition(record);
        }
        Ok(Some(status.done))
    }

    /// Non-blocking resolution check. Launches a lazy future (without
    /// waiting for it) and relays pending immediate conditions.
    pub fn resolved(&mut self, handle: &FutureHandle) -> Result<bool, FutureError> {
        if self.entry(handle).outcome.is_some() {
            return Ok(true);
        }
        self.launch_if_created(handle)?;
        Ok(self.drain_immediates(handle)?.unwrap_or(false))
    }

    /// Drive the future to a terminal state, caching the outcome. Backend
    /// infrastructure errors become a cached `InfraFailure` so repeated
    /// calls answer consistently.
    fn ensure_terminal(&mut self, handle: &FutureHandle) {
        if self.entry(handle).outcome.is_some() {
            return;
        }
        if let Err(e) = self.launch_if_created(handle) {
            let entry = self.entry_mut(handle);
            entry.outcome = Some(FutureOutcome::infra(e.message, e.retryable));
            entry.state = FutureState::Failed;
            return;
        }
        let _ = self.drain_immediates(handle);
        let ticket = self.entry(handle).ticket.expect("launched future");
        let collected = self.backend.collect(ticket);
        let entry = self.entry_mut(handle);
        match collected {
            Ok(outcome) => {
                entry.state = match outcome.kind {
                    OutcomeKind::Success(_) => FutureState::Resolved,
                    _ => FutureState::Failed,
                };
                entry.outcome = Some(outcome);
            }
            Err(e) => {
                entry.state = FutureState::Failed;
                entry.outcome = Some(FutureOutcome::infra(e.message, e.retryable));
            }
        }
    }

    fn replay_outcome(&mut self, handle: &FutureHandle) {
        let entry = self.entries.get_mut(&handle.id).expect("entry exists");
        let records = entry
            .outcome
            .as_ref()
            .map(|o| o.relay.clone())
            .unwrap_or_default();
        replay(&records, &mut entry.relayed_immediates, self.sink.as_mut());
    }

    /// Block until the future resolves, replay its captured output and
    /// conditions (on every call), and return the value or re-raise the
    /// original error.
    pub fn value(&mut self, handle: &FutureHandle) -> Result<Value, ValueError> {
        self.ensure_terminal(handle);
        self.replay_outcome(handle);
        let outcome = self.entry(handle).outcome.as_ref().expect("terminal");
        match &outcome.kind {
            OutcomeKind::Success(v) => Ok(v.clone()),
            OutcomeKind::EvalFailure {
                message,
                condition_class,
            } => Err(ValueError::Eval(EvalError::with_class(
                message.clone(),
                condition_class.clone(),
            ))),
            OutcomeKind::InfraFailure { message, retryable } => {
                Err(ValueError::Future(FutureError {
                    message: message.clone(),
                    retryable: *retryable,
                }))
            }
        }
    }

    /// Like `value()` but hands back the whole outcome instead of raising.
    pub fn try_value(&mut self, handle: &FutureHandle) -> FutureOutcome {
        self.ensure_terminal(handle);
        self.replay_outcome(handle);
        self.entry(handle).outcome.clone().expect("terminal")
    }

    pub fn shutdown(&mut self) {
        self.backend.shutdown();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.backend.shutdown();
    }
}
