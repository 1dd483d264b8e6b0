//! Worker-side entry points: the stdio worker used by process pools, the
//! connect-back worker, and the standalone TCP daemon.
//!
//! A worker handles one RUN at a time (single evaluation context) and
//! streams immediate-condition records as standalone RELAY frames while the
//! task is still running. Exactly one RESULT answers every accepted RUN.

use std::io::{self, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use crate::backend::ENV_NESTED;
use crate::host::PlanHost;
use crate::protocol::{read_frame, write_frame, WireMessage, PROTOCOL_VERSION};
use crate::relay::RelayRecord;
use crate::task::{capture_run, FutureOutcome, OutcomeKind, TaskSpec};

/// Run one task with the nested-plan host wired up. Never raises.
pub fn execute_task(
    task: &TaskSpec,
    immediate_tx: Option<&mut dyn FnMut(&RelayRecord)>,
) -> FutureOutcome {
    let mut host = PlanHost::new(task.plan_tail.clone(), None, task.rng_misuse);
    let outcome = capture_run(task, &mut host, immediate_tx);
    host.shutdown();
    outcome
}

#[derive(Debug, PartialEq, Eq)]
enum ServeEnd {
    Eof,
    Shutdown,
}

fn serve_channel(reader: impl Read, writer: impl Write) -> io::Result<ServeEnd> {
    serve_channel_locked(reader, writer, &Mutex::new(()))
}

/// Serve one controller connection. `run_lock` serializes evaluation when a
/// daemon holds several connections: one RUN at a time, one evaluation
/// context.
fn serve_channel_locked(
    reader: impl Read,
    mut writer: impl Write,
    run_lock: &Mutex<()>,
) -> io::Result<ServeEnd> {
    let mut reader = BufReader::new(reader);
    match read_frame(&mut reader)? {
        Some(WireMessage::Hello { protocol }) if protocol == PROTOCOL_VERSION => {
            write_frame(
                &mut writer,
                &WireMessage::HelloAck {
                    protocol: PROTOCOL_VERSION,
                },
            )?;
        }
        Some(other) => {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("expected hello, got {}", other.type_name()),
            ))
        }
        None => return Ok(ServeEnd::Eof),
    }
    let mut result_seq = 0u64;
    loop {
        match read_frame(&mut reader)? {
            None => return Ok(ServeEnd::Eof),
            Some(WireMessage::Run {
                future_id, task, ..
            }) => {
                let mut outcome = {
                    let _guard = run_lock.lock().unwrap_or_else(|e| e.into_inner());
                    let mut tx = |record: &RelayRecord| {
                        let _ = write_frame(
                            &mut writer,
                            &WireMessage::Relay {
                                future_id,
                                record: record.clone(),
                            },
                        );
                    };
                    execute_task(&task, Some(&mut tx))
                };
                // a value bound to this process cannot travel; report that
                // instead of dying on serialization
                if outcome.to_json().is_err() {
                    outcome.kind = OutcomeKind::EvalFailure {
                        message: "future returned a non-exportable value".to_string(),
                        condition_class: "error".to_string(),
                    };
                }
                write_frame(
                    &mut writer,
                    &WireMessage::Result {
                        future_id,
                        seq: result_seq,
                        outcome,
                    },
                )?;
                result_seq += 1;
            }
            Some(WireMessage::Ping) => write_frame(&mut writer, &WireMessage::Pong)?,
            Some(WireMessage::Shutdown) => return Ok(ServeEnd::Shutdown),
            Some(other) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("unexpected frame {}", other.type_name()),
                ))
            }
        }
    }
}

/// Worker over stdin/stdout, as spawned by the process pool. Returns when
/// the controller closes the pipe or sends SHUTDOWN.
pub fn run_worker_stdio() -> io::Result<()> {
    std::env::set_var(ENV_NESTED, "1");
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_channel(stdin.lock(), stdout.lock()).map(|_| ())
}

/// Worker that dials back to a listening controller.
pub fn run_worker_connect(addr: &str) -> io::Result<()> {
    std::env::set_var(ENV_NESTED, "1");
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    serve_channel(reader, stream).map(|_| ())
}

/// Standalone worker daemon: binds, announces its address on stdout, and
/// accepts controller connections until a SHUTDOWN frame arrives. A
/// controller disconnecting (or violating the protocol) just closes that
/// connection. Connections are served concurrently but tasks evaluate one
/// RUN at a time — a daemon is a single evaluation context.
pub fn serve_worker(listen: &str) -> io::Result<()> {
    std::env::set_var(ENV_NESTED, "1");
    let listener = TcpListener::bind(listen)?;
    println!("listening on {}", listener.local_addr()?);
    io::stdout().flush()?;
    let run_lock = Arc::new(Mutex::new(()));
    loop {
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        let reader = match stream.try_clone() {
            Ok(r) => r,
            Err(_) => continue,
        };
        let run_lock = Arc::clone(&run_lock);
        std::thread::spawn(move || {
            if let Ok(ServeEnd::Shutdown) = serve_channel_locked(reader, stream, &run_lock) {
                std::process::exit(0);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::{parse, Value};
    use crate::task::RngMisusePolicy;
    use std::io::Cursor;
    use uuid::Uuid;

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

    fn roundtrip(messages: Vec<WireMessage>) -> (ServeEnd, Vec<WireMessage>) {
        let mut input = Vec::new();
        for m in &messages {
            write_frame(&mut input, m).unwrap();
        }
        let mut output = Vec::new();
        let end = serve_channel(Cursor::new(input), &mut output).unwrap();
        let mut replies = Vec::new();
        let mut cursor = Cursor::new(output);
        while let Some(m) = read_frame(&mut cursor).unwrap() {
            replies.push(m);
        }
        (end, replies)
    }

    #[test]
    fn run_produces_exactly_one_result() {
        let id = Uuid::new_v4();
        let (end, replies) = roundtrip(vec![
            WireMessage::Hello {
                protocol: PROTOCOL_VERSION,
            },
            WireMessage::Run {
                future_id: id,
                seq: 0,
                task: spec("(+ 1 2)"),
            },
        ]);
        assert_eq!(end, ServeEnd::Eof);
        assert_eq!(replies.len(), 2);
        assert!(matches!(replies[0], WireMessage::HelloAck { .. }));
        match &replies[1] {
            WireMessage::Result {
                future_id, outcome, ..
            } => {
                assert_eq!(*future_id, id);
                assert_eq!(outcome.kind, OutcomeKind::Success(Value::Int(3)));
                assert!(outcome.relay.is_empty());
            }
            other => panic!("expected result, got {other:?}"),
        }
    }

    #[test]
    fn immediate_records_travel_before_the_result() {
        let id = Uuid::new_v4();
        let (_, replies) = roundtrip(vec![
            WireMessage::Hello {
                protocol: PROTOCOL_VERSION,
            },
            WireMessage::Run {
                future_id: id,
                seq: 0,
                task: spec("(begin (progress \"p\") (sleep_ms 10) 1)"),
            },
        ]);
        assert_eq!(replies.len(), 3);
        assert!(matches!(&replies[1], WireMessage::Relay { record, .. }
            if record.payload == "p"));
        assert!(matches!(&replies[2], WireMessage::Result { .. }));
    }

    #[test]
    fn ping_pong_and_shutdown() {
        let (end, replies) = roundtrip(vec![
            WireMessage::Hello {
                protocol: PROTOCOL_VERSION,
            },
            WireMessage::Ping,
            WireMessage::Shutdown,
        ]);
        assert_eq!(end, ServeEnd::Shutdown);
        assert!(matches!(replies[1], WireMessage::Pong));
    }

    #[test]
    fn missing_hello_is_a_protocol_violation() {
        let mut input = Vec::new();
        write_frame(&mut input, &WireMessage::Ping).unwrap();
        let mut output = Vec::new();
        let err = serve_channel(Cursor::new(input), &mut output).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
    }

    #[test]
    fn non_exportable_return_is_reported_not_fatal() {
        let id = Uuid::new_v4();
        let (_, replies) = roundtrip(vec![
            WireMessage::Hello {
                protocol: PROTOCOL_VERSION,
            },
            WireMessage::Run {
                future_id: id,
                seq: 0,
                task: spec("(make_resource \"conn\")"),
            },
        ]);
        match &replies[1] {
            WireMessage::Result { outcome, .. } => match &outcome.kind {
                OutcomeKind::EvalFailure { message, .. } => {
                    assert!(message.contains("non-exportable"))
                }
                other => panic!("expected failure, got {other:?}"),
            },
            other => panic!("expected result, got {other:?}"),
        }
    }
}
