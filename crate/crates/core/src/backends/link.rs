//! Shared machinery for channel-based backends: a set of worker links
//! speaking the wire protocol, multiplexed through one event queue.
//!
//! The process pool and the TCP cluster are the same pool over different
//! transports. A reader thread per link turns frames into events; launches
//! write RUN frames directly. Dead links are never reused — the pool
//! shrinks, and the dead link's in-flight ticket fails exactly once.

use std::collections::HashMap;
use std::io::{BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use uuid::Uuid;

use crate::backend::{Backend, BackendTicket, PollStatus, ENV_NESTED, ENV_WORKER_EXE};
use crate::error::FutureError;
use crate::protocol::{read_frame, write_frame, WireMessage, PROTOCOL_VERSION};
use crate::relay::RelayRecord;
use crate::task::{FutureOutcome, TaskSpec};

const COLLECT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinkState {
    Idle,
    Busy,
    Dead,
}

enum Transport {
    Child(Child),
    Tcp(TcpStream),
}

struct Link {
    writer: Box<dyn Write + Send>,
    transport: Transport,
    state: LinkState,
    label: String,
}

enum LinkEvent {
    Relay {
        future_id: Uuid,
        record: RelayRecord,
    },
    Result {
        link: usize,
        future_id: Uuid,
        outcome: FutureOutcome,
    },
    Down {
        link: usize,
        reason: String,
    },
}

enum TicketPhase {
    Pending { link: usize },
    Done(FutureOutcome),
    Failed(FutureError),
}

struct TicketState {
    future_id: Uuid,
    phase: TicketPhase,
    immediates: Vec<RelayRecord>,
}

/// A pool of worker links implementing the backend contract.
pub struct LinkPool {
    links: Vec<Link>,
    events_rx: Receiver<LinkEvent>,
    tickets: HashMap<u64, TicketState>,
    by_future: HashMap<Uuid, u64>,
    next_ticket: u64,
    next_seq: u64,
    /// Pools that spawned their workers send SHUTDOWN and reap; cluster
    /// connections just close, leaving the daemons to serve the next
    /// controller.
    owns_workers: bool,
    down: bool,
}

fn spawn_reader(
    link: usize,
    reader: impl Read + Send + 'static,
    events: Sender<LinkEvent>,
) {
    std::thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            match read_frame(&mut reader) {
                Ok(Some(WireMessage::Relay { future_id, record })) => {
                    if events
                        .send(LinkEvent::Relay { future_id, record })
                        .is_err()
                    {
                        return;
                    }
                }
                Ok(Some(WireMessage::Result {
                    future_id, outcome, ..
                })) => {
                    if events
                        .send(LinkEvent::Result {
                            link,
                            future_id,
                            outcome,
                        })
                        .is_err()
                    {
                        return;
                    }
                }
                Ok(Some(WireMessage::Pong)) => {}
                Ok(Some(other)) => {
                    let _ = events.send(LinkEvent::Down {
                        link,
                        reason: format!("unexpected frame {:?}", other.type_name()),
                    });
                    return;
                }
                Ok(None) => {
                    let _ = events.send(LinkEvent::Down {
                        link,
                        reason: "connection closed".to_string(),
                    });
                    return;
                }
                Err(e) => {
                    let _ = events.send(LinkEvent::Down {
                        link,
                        reason: e.to_string(),
                    });
                    return;
                }
            }
        }
    });
}

/// Synchronous HELLO/HELLO_ACK exchange on a fresh channel.
fn handshake(writer: &mut impl Write, reader: &mut impl Read, label: &str) -> Result<(), FutureError> {
    write_frame(
        writer,
        &WireMessage::Hello {
            protocol: PROTOCOL_VERSION,
        },
    )
    .map_err(|e| FutureError::new(format!("{label}: handshake write failed: {e}")))?;
    match read_frame(reader) {
        Ok(Some(WireMessage::HelloAck { protocol })) if protocol == PROTOCOL_VERSION => Ok(()),
        Ok(Some(WireMessage::HelloAck { protocol })) => Err(FutureError::new(format!(
            "{label}: protocol mismatch (worker speaks {protocol}, controller {PROTOCOL_VERSION})"
        ))),
        Ok(Some(other)) => Err(FutureError::new(format!(
            "{label}: expected hello_ack, got {}",
            other.type_name()
        ))),
        Ok(None) => Err(FutureError::new(format!(
            "{label}: worker closed during handshake"
        ))),
        Err(e) => Err(FutureError::new(format!("{label}: handshake failed: {e}"))),
    }
}

/// Locate the worker executable: explicit path, then `FW_WORKER_EXE`, then
/// this very binary.
pub fn resolve_worker_exe(explicit: Option<&PathBuf>) -> Result<PathBuf, FutureError> {
    if let Some(path) = explicit {
        return Ok(path.clone());
    }
    if let Ok(path) = std::env::var(ENV_WORKER_EXE) {
        if !path.is_empty() {
            return Ok(PathBuf::from(path));
        }
    }
    std::env::current_exe()
        .map_err(|e| FutureError::new(format!("cannot locate the worker executable: {e}")))
}

impl LinkPool {
    /// Spawn `n` worker processes of the framework binary in `worker --stdio`
    /// mode and handshake each.
    pub fn start_pool(n: usize, worker_exe: Option<&PathBuf>) -> Result<Self, FutureError> {
        let exe = resolve_worker_exe(worker_exe)?;
        let (tx, rx) = channel();
        let mut links = Vec::with_capacity(n);
        for i in 0..n {
            let mut child = Command::new(&exe)
                .args(["worker", "--stdio"])
                .env(ENV_NESTED, "1")
                .env(ENV_WORKER_EXE, &exe)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| FutureError::new(format!("failed to spawn worker {i}: {e}")))?;
            let mut writer = child.stdin.take().expect("piped stdin");
            let mut reader = child.stdout.take().expect("piped stdout");
            let label = format!("worker {i} (pid {})", child.id());
            handshake(&mut writer, &mut reader, &label)?;
            spawn_reader(i, reader, tx.clone());
            links.push(Link {
                writer: Box::new(writer),
                transport: Transport::Child(child),
                state: LinkState::Idle,
                label,
            });
        }
        Ok(LinkPool {
            links,
            events_rx: rx,
            tickets: HashMap::new(),
            by_future: HashMap::new(),
            next_ticket: 0,
            next_seq: 0,
            owns_workers: true,
            down: false,
        })
    }

    /// Connect to already-running worker daemons. Unreachable endpoints
    /// degrade capacity and come back as warnings; zero live endpoints is an
    /// error.
    pub fn connect_cluster(endpoints: &[String]) -> Result<(Self, Vec<String>), FutureError> {
        let (tx, rx) = channel();
        let mut links = Vec::new();
        let mut warnings = Vec::new();
        for endpoint in endpoints {
            match connect_endpoint(endpoint) {
                Ok(stream) => {
                    let mut writer = stream
                        .try_clone()
                        .map_err(|e| FutureError::new(format!("{endpoint}: {e}")))?;
                    let mut reader = stream
                        .try_clone()
                        .map_err(|e| FutureError::new(format!("{endpoint}: {e}")))?;
                    stream
                        .set_read_timeout(None)
                        .map_err(|e| FutureError::new(format!("{endpoint}: {e}")))?;
                    match handshake(&mut writer, &mut reader, endpoint) {
                        Ok(()) => {
                            let idx = links.len();
                            spawn_reader(idx, reader, tx.clone());
                            links.push(Link {
                                writer: Box::new(writer),
                                transport: Transport::Tcp(stream),
                                state: LinkState::Idle,
                                label: endpoint.clone(),
                            });
                        }
                        Err(e) => warnings.push(e.message),
                    }
                }
                Err(e) => warnings.push(format!("endpoint {endpoint} unreachable: {e}")),
            }
        }
        if links.is_empty() {
            return Err(FutureError::new(format!(
                "no cluster endpoint completed the handshake ({})",
                warnings.join("; ")
            )));
        }
        Ok((
            LinkPool {
                links,
                events_rx: rx,
                tickets: HashMap::new(),
                by_future: HashMap::new(),
                next_ticket: 0,
                next_seq: 0,
                owns_workers: false,
                down: false,
            },
            warnings,
        ))
    }

    fn live_count(&self) -> usize {
        self.links
            .iter()
            .filter(|l| l.state != LinkState::Dead)
            .count()
    }

    fn apply_event(&mut self, event: LinkEvent) {
        match event {
            LinkEvent::Relay { future_id, record } => {
                if let Some(&ticket) = self.by_future.get(&future_id) {
                    if let Some(state) = self.tickets.get_mut(&ticket) {
                        state.immediates.push(record);
                    }
                }
            }
            LinkEvent::Result {
                link,
                future_id,
                outcome,
            } => {
                if let Some(&ticket) = self.by_future.get(&future_id) {
                    if let Some(state) = self.tickets.get_mut(&ticket) {
                        state.phase = TicketPhase::Done(outcome);
                    }
                }
                if let Some(l) = self.links.get_mut(link) {
                    if l.state == LinkState::Busy {
                        l.state = LinkState::Idle;
                    }
                }
            }
            LinkEvent::Down { link, reason } => {
                let label = self
                    .links
                    .get(link)
                    .map(|l| l.label.clone())
                    .unwrap_or_else(|| format!("link {link}"));
                if let Some(l) = self.links.get_mut(link) {
                    l.state = LinkState::Dead;
                }
                // fail the in-flight ticket of that link, if any
                for state in self.tickets.values_mut() {
                    if matches!(state.phase, TicketPhase::Pending { link: p } if p == link) {
                        state.phase = TicketPhase::Failed(FutureError::retryable(format!(
                            "{label} failed: {reason}"
                        )));
                    }
                }
            }
        }
    }

    fn drain_events(&mut self) {
        while let Ok(event) = self.events_rx.try_recv() {
            self.apply_event(event);
        }
    }

    fn wait_one_event(&mut self, timeout: Duration) -> Result<(), FutureError> {
        match self.events_rx.recv_timeout(timeout) {
            Ok(event) => {
                self.apply_event(event);
                self.drain_events();
                Ok(())
            }
            Err(RecvTimeoutError::Timeout) => Err(FutureError::new(
                "timed out waiting for a worker event",
            )),
            Err(RecvTimeoutError::Disconnected) => {
                Err(FutureError::new("all worker channels are gone"))
            }
        }
    }

    /// Fault-injection and test aid: hard-kill a spawned worker process.
    pub fn kill_worker(&mut self, index: usize) -> bool {
        match self.links.get_mut(index).map(|l| &mut l.transport) {
            Some(Transport::Child(child)) => {
                let _ = child.kill();
                true
            }
            _ => false,
        }
    }

    pub fn worker_pids(&self) -> Vec<Option<u32>> {
        self.links
            .iter()
            .map(|l| match &l.transport {
                Transport::Child(c) => Some(c.id()),
                Transport::Tcp(_) => None,
            })
            .collect()
    }

    /// Worker state census: (idle, busy, dead).
    pub fn state_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for l in &self.links {
            match l.state {
                LinkState::Idle => counts.0 += 1,
                LinkState::Busy => counts.1 += 1,
                LinkState::Dead => counts.2 += 1,
            }
        }
        counts
    }
}

fn connect_endpoint(endpoint: &str) -> std::io::Result<TcpStream> {
    let mut last_err = None;
    for addr in endpoint.to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, Duration::from_secs(3)) {
            Ok(stream) => {
                stream.set_nodelay(true)?;
                return Ok(stream);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::NotFound, "endpoint resolved to no address")
    }))
}

impl Backend for LinkPool {
    fn launch(&mut self, task: TaskSpec) -> Result<BackendTicket, FutureError> {
        // serialize first so a non-exportable capture fails fast, before a
        // worker is tied up
        let future_id = Uuid::new_v4();
        let seq = self.next_seq;
        self.next_seq += 1;
        let run = WireMessage::Run {
            future_id,
            seq,
            task,
        };
        loop {
            self.drain_events();
            if self.live_count() == 0 {
                return Err(FutureError::new("no live workers remain in the pool"));
            }
            let idle = self
                .links
                .iter()
                .position(|l| l.state == LinkState::Idle);
            let Some(idx) = idle else {
                // capacity exhausted: block until some worker finishes or dies
                self.wait_one_event(COLLECT_TIMEOUT)?;
                continue;
            };
            match write_frame(&mut self.links[idx].writer, &run) {
                Ok(()) => {
                    self.links[idx].state = LinkState::Busy;
                    let ticket = BackendTicket(self.next_ticket);
                    self.next_ticket += 1;
                    self.tickets.insert(
                        ticket.0,
                        TicketState {
                            future_id,
                            phase: TicketPhase::Pending { link: idx },
                            immediates: Vec::new(),
                        },
                    );
                    self.by_future.insert(future_id, ticket.0);
                    return Ok(ticket);
                }
                Err(e) => {
                    if e.kind() == std::io::ErrorKind::InvalidInput {
                        // unserializable task — no worker involved
                        return Err(FutureError::new(format!("task not launchable: {e}")));
                    }
                    // the chosen worker is gone; mark it and retry another
                    self.links[idx].state = LinkState::Dead;
                }
            }
        }
    }

    fn poll(&mut self, ticket: BackendTicket) -> Result<PollStatus, FutureError> {
        self.drain_events();
        let state = self
            .tickets
            .get_mut(&ticket.0)
            .ok_or_else(|| FutureError::new("unknown ticket"))?;
        Ok(PollStatus {
            done: !matches!(state.phase, TicketPhase::Pending { .. }),
            immediate: std::mem::take(&mut state.immediates),
        })
    }

    fn collect(&mut self, ticket: BackendTicket) -> Result<FutureOutcome, FutureError> {
        loop {
            self.drain_events();
            let state = self
                .tickets
                .get(&ticket.0)
                .ok_or_else(|| FutureError::new("unknown ticket"))?;
            match &state.phase {
                TicketPhase::Pending { .. } => {
                    self.wait_one_event(COLLECT_TIMEOUT)?;
                }
                TicketPhase::Done(_) | TicketPhase::Failed(_) => break,
            }
        }
        let state = self.tickets.remove(&ticket.0).expect("checked above");
        self.by_future.remove(&state.future_id);
        match state.phase {
            // immediates the controller never polled are still present in
            // the outcome's relay list, so nothing is lost here
            TicketPhase::Done(outcome) => Ok(outcome),
            TicketPhase::Failed(e) => Err(e),
            TicketPhase::Pending { .. } => unreachable!(),
        }
    }

    fn capacity(&self) -> usize {
        self.live_count()
    }

    fn shutdown(&mut self) {
        if self.down {
            return;
        }
        self.down = true;
        for link in &mut self.links {
            if let Transport::Tcp(stream) = &link.transport {
                let _ = stream.shutdown(std::net::Shutdown::Both);
            }
        }
        if self.owns_workers {
            // closing the cluster variant just drops the connections: the
            // daemons stay up for the next controller
            for link in &mut self.links {
                if link.state != LinkState::Dead {
                    let _ = write_frame(&mut link.writer, &WireMessage::Shutdown);
                }
            }
            for link in &mut self.links {
                if let Transport::Child(child) = &mut link.transport {
                    // give the worker a moment to exit on its own
                    let deadline = std::time::Instant::now() + Duration::from_secs(2);
                    loop {
                        match child.try_wait() {
                            Ok(Some(_)) => break,
                            Ok(None) if std::time::Instant::now() < deadline => {
                                std::thread::sleep(Duration::from_millis(5));
                            }
                            _ => {
                                let _ = child.kill();
                                let _ = child.wait();
                                break;
                            }
                        }
                    }
                }
            }
        }
    }

    fn as_any(&mut self) -> &mut dyn std::any::Any {
        self
    }
}

impl Drop for LinkPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}
