//! Bridges a task's plan tail to actual nested execution.
//!
//! A worker evaluating a task installs the tail of the controller's plan for
//! any `par_map` the task performs. An exhausted tail means nested futures
//! run sequentially — inline, with no extra machinery — which is the
//! protection against runaway nested parallelism.

use std::path::PathBuf;

use crate::backend::{BackendSpec, Plan};
use crate::error::EvalError;
use crate::exprlang::eval::ParallelHost;
use crate::exprlang::Value;
use crate::mapreduce::{future_map, MapFn, MapOpts};
use crate::relay::{CaptureContext, MemorySink, RelayKind, SinkEvent};
use crate::session::{Session, SessionConfig};
use crate::task::RngMisusePolicy;

pub struct PlanHost {
    plan_tail: Vec<BackendSpec>,
    worker_exe: Option<PathBuf>,
    rng_misuse: RngMisusePolicy,
    session: Option<(Session, MemorySink)>,
}

impl PlanHost {
    pub fn new(
        plan_tail: Vec<BackendSpec>,
        worker_exe: Option<PathBuf>,
        rng_misuse: RngMisusePolicy,
    ) -> Self {
        PlanHost {
            plan_tail,
            worker_exe,
            rng_misuse,
            session: None,
        }
    }

    fn ensure_session(&mut self) -> Result<&mut (Session, MemorySink), EvalError> {
        if self.session.is_none() {
            let plan = Plan::new(self.plan_tail.clone())
                .expect("non-empty tail checked by the caller");
            let config = SessionConfig {
                seed: 0,
                rng_misuse: self.rng_misuse,
                scan_non_exportable: true,
                worker_exe: self.worker_exe.clone(),
            };
            let mut session = Session::with_plan(config, plan)
                .map_err(|e| EvalError::new(format!("nested plan failed to start: {e}")))?;
            let sink = MemorySink::new();
            session.set_sink(Box::new(sink.clone()));
            self.session = Some((session, sink));
        }
        Ok(self.session.as_mut().expect("just set"))
    }

    /// Forward relay events of nested futures into the enclosing capture, so
    /// they bubble up to the controller like any other output.
    fn forward_events(sink: &MemorySink, capture: &mut CaptureContext<'_>) {
        for event in sink.take_events() {
            match event {
                SinkEvent::Stdout(text) => capture.stdout(text),
                SinkEvent::Condition(record) => match record.kind {
                    RelayKind::Message => capture.message(record.payload),
                    RelayKind::Warning => capture.warning(record.payload),
                    RelayKind::Immediate => capture.immediate(
                        record.class.as_deref().unwrap_or("immediate"),
                        record.payload,
                        record.data.unwrap_or(Value::Null),
                    ),
                    RelayKind::Stdout => capture.stdout(record.payload),
                },
            }
        }
    }

    pub fn shutdown(&mut self) {
        if let Some((mut session, _)) = self.session.take() {
            session.shutdown();
        }
    }
}

impl ParallelHost for PlanHost {
    fn par_map(
        &mut self,
        fun: &Value,
        items: &[Value],
        capture: &mut CaptureContext<'_>,
    ) -> Result<Option<Vec<Value>>, EvalError> {
        if self.plan_tail.is_empty() {
            return Ok(None);
        }
        let (session, sink) = self.ensure_session()?;
        let result = future_map(
            session,
            items,
            &MapFn::Closure(fun.clone()),
            &crate::exprlang::Env::new(),
            &MapOpts::default(),
        );
        let sink = sink.clone();
        Self::forward_events(&sink, capture);
        result
            .map(Some)
            .map_err(|e| EvalError::new(format!("nested map failed: {e}")))
    }

    fn available_workers(&mut self) -> usize {
        match self.plan_tail.first() {
            None => 1,
            Some(spec) => spec.resolved_workers(),
        }
    }
}

impl Drop for PlanHost {
    fn drop(&mut self) {
        self.shutdown();
    }
}
