//! The sequential backend: capacity 1, inline evaluation during launch.

use std::collections::HashMap;

use crate::backend::{Backend, BackendTicket, PollStatus};
use crate::error::FutureError;
use crate::host::PlanHost;
use crate::relay::{RelayKind, RelayRecord};
use crate::task::{capture_run, FutureOutcome, TaskSpec};

#[derive(Default)]
pub struct SequentialBackend {
    slots: HashMap<u64, Slot>,
    next_ticket: u64,
    worker_exe: Option<std::path::PathBuf>,
}

struct Slot {
    outcome: Option<FutureOutcome>,
    pending_immediate: Vec<RelayRecord>,
}

impl SequentialBackend {
    pub fn new(worker_exe: Option<std::path::PathBuf>) -> Self {
        SequentialBackend {
            slots: HashMap::new(),
            next_ticket: 0,
            worker_exe,
        }
    }
}

impl Backend for SequentialBackend {
    fn launch(&mut self, task: TaskSpec) -> Result<BackendTicket, FutureError> {
        // evaluation happens right here; immediate records are handed to the
        // controller on its first poll, still within the creating call
        let mut host = PlanHost::new(
            task.plan_tail.clone(),
            self.worker_exe.clone(),
            task.rng_misuse,
        );
        let outcome = capture_run(&task, &mut host, None);
        host.shutdown();
        let pending_immediate: Vec<RelayRecord> = outcome
            .relay
            .iter()
            .filter(|r| r.kind == RelayKind::Immediate)
            .cloned()
            .collect();
        let ticket = BackendTicket(self.next_ticket);
        self.next_ticket += 1;
        self.slots.insert(
            ticket.0,
            Slot {
                outcome: Some(outcome),
                pending_immediate,
            },
        );
        Ok(ticket)
    }

    fn poll(&mut self, ticket: BackendTicket) -> Result<PollStatus, FutureError> {
        let slot = self
            .slots
            .get_mut(&ticket.0)
            .ok_or_else(|| FutureError::new("unknown ticket"))?;
        Ok(PollStatus {
            done: true,
            immediate: std::mem::take(&mut slot.pending_immediate),
        })
    }

    fn collect(&mut self, ticket: BackendTicket) -> Result<FutureOutcome, FutureError> {
        let slot = self
            .slots
            .remove(&ticket.0)
            .ok_or_else(|| FutureError::new("unknown ticket"))?;
        slot.outcome
            .ok_or_else(|| FutureError::new("ticket already collected"))
    }

    fn capacity(&self) -> usize {
        1
    }

    fn shutdown(&mut self) {
        self.slots.clear();
    }

    fn as_any(&mut self) -> &mut dyn std::any::Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::{parse, Value};
    use crate::task::{OutcomeKind, RngMisusePolicy};

    fn spec(body: &str) -> TaskSpec {
        TaskSpec {
            body: parse(body).unwrap(),
            env: Default::default(),
            seed: false,
            rng_stream: None,
            lazy: false,
            globals_override: vec![],
            stdout_capture: true,
            plan_tail: vec![],
            rng_misuse: RngMisusePolicy::Warn,
        }
    }

    #[test]
    fn launch_evaluates_inline_and_poll_is_done() {
        let mut backend = SequentialBackend::new(None);
        let ticket = backend.launch(spec("(+ 20 22)")).unwrap();
        let status = backend.poll(ticket).unwrap();
        assert!(status.done);
        let outcome = backend.collect(ticket).unwrap();
        assert_eq!(outcome.kind, OutcomeKind::Success(Value::Int(42)));
        assert_eq!(backend.capacity(), 1);
    }

    #[test]
    fn immediates_are_drained_once() {
        let mut backend = SequentialBackend::new(None);
        let ticket = backend
            .launch(spec("(begin (progress \"p\") 1)"))
            .unwrap();
        let first = backend.poll(ticket).unwrap();
        assert_eq!(first.immediate.len(), 1);
        let second = backend.poll(ticket).unwrap();
        assert!(second.immediate.is_empty());
    }

    #[test]
    fn collect_consumes_the_ticket() {
        let mut backend = SequentialBackend::new(None);
        let ticket = backend.launch(spec("1")).unwrap();
        backend.collect(ticket).unwrap();
        assert!(backend.collect(ticket).is_err());
    }
}
