//! The controller↔worker wire protocol: length-prefixed JSON frames.
//!
//! Framing is `<4-byte big-endian unsigned length><UTF-8 JSON body>`. The
//! first message in each direction is HELLO / HELLO_ACK carrying the protocol
//! version. RELAY messages for a future always precede its RESULT, and every
//! accepted RUN produces exactly one RESULT (or the connection closes).

use std::io::{self, Read, Write};

use serde_json::{json, Value as Json};
use uuid::Uuid;

use crate::relay::RelayRecord;
use crate::task::{FutureOutcome, TaskSpec};

pub const PROTOCOL_VERSION: u64 = 1;

/// Upper bound on a single frame; anything larger is a protocol violation.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello { protocol: u64 },
    HelloAck { protocol: u64 },
    Run { future_id: Uuid, seq: u64, task: TaskSpec },
    Relay { future_id: Uuid, record: RelayRecord },
    Result { future_id: Uuid, seq: u64, outcome: FutureOutcome },
    Ping,
    Pong,
    Shutdown,
}

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "hello",
            WireMessage::HelloAck { .. } => "hello_ack",
            WireMessage::Run { .. } => "run",
            WireMessage::Relay { .. } => "relay",
            WireMessage::Result { .. } => "result",
            WireMessage::Ping => "ping",
            WireMessage::Pong => "pong",
            WireMessage::Shutdown => "shutdown",
        }
    }

    fn to_json(&self) -> io::Result<Json> {
        Ok(match self {
            WireMessage::Hello { protocol } => json!({"type": "hello", "protocol": protocol}),
            WireMessage::HelloAck { protocol } => {
                json!({"type": "hello_ack", "protocol": protocol})
            }
            WireMessage::Run {
                future_id,
                seq,
                task,
            } => {
                let task = task
                    .to_json()
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.message))?;
                json!({"type": "run", "future_id": future_id.to_string(), "seq": seq, "payload": task})
            }
            WireMessage::Relay { future_id, record } => {
                let mut obj = record.to_json();
                obj["future_id"] = json!(future_id.to_string());
                obj
            }
            WireMessage::Result {
                future_id,
                seq,
                outcome,
            } => {
                let outcome = outcome
                    .to_json()
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.message))?;
                json!({"type": "result", "future_id": future_id.to_string(), "seq": seq, "payload": outcome})
            }
            WireMessage::Ping => json!({"type": "ping"}),
            WireMessage::Pong => json!({"type": "pong"}),
            WireMessage::Shutdown => json!({"type": "shutdown"}),
        })
    }

    fn from_json(json: &Json) -> Result<Self, String> {
        let ty = json
            .get("type")
            .and_then(Json::as_str)
            .ok_or("frame missing type")?;
        let future_id = || -> Result<Uuid, String> {
            let s = json
                .get("future_id")
                .and_then(Json::as_str)
                .ok_or("frame missing future_id")?;
            Uuid::parse_str(s).map_err(|e| format!("bad future_id: {e}"))
        };
        let protocol = || {
            json.get("protocol")
                .and_then(Json::as_u64)
                .ok_or("frame missing protocol")
        };
        Ok(match ty {
            "hello" => WireMessage::Hello {
                protocol: protocol()?,
            },
            "hello_ack" => WireMessage::HelloAck {
                protocol: protocol()?,
            },
            "run" => WireMessage::Run {
                future_id: future_id()?,
                seq: json.get("seq").and_then(Json::as_u64).unwrap_or(0),
                task: TaskSpec::from_json(json.get("payload").ok_or("run missing payload")?)?,
            },
            "relay" => WireMessage::Relay {
                future_id: future_id()?,
                record: RelayRecord::from_json(json)?,
            },
            "result" => WireMessage::Result {
                future_id: future_id()?,
                seq: json.get("seq").and_then(Json::as_u64).unwrap_or(0),
                outcome: FutureOutcome::from_json(
                    json.get("payload").ok_or("result missing payload")?,
                )?,
            },
            "ping" => WireMessage::Ping,
            "pong" => WireMessage::Pong,
            "shutdown" => WireMessage::Shutdown,
            other => return Err(format!("unknown frame type {other:?}")),
        })
    }
}

pub fn write_frame(writer: &mut impl Write, msg: &WireMessage) -> io::Result<()> {
    let body = serde_json::to_vec(&msg.to_json()?)?;
    if body.len() as u64 > MAX_FRAME_LEN as u64 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "frame exceeds the maximum length",
        ));
    }
    writer.write_all(&(body.len() as u32).to_be_bytes())?;
    writer.write_all(&body)?;
    writer.flush()
}

/// Read one frame. `Ok(None)` means clean EOF at a frame boundary; malformed
/// frames surface as `InvalidData`.
pub fn read_frame(reader: &mut impl Read) -> io::Result<Option<WireMessage>> {
    let mut len_buf = [0u8; 4];
    match reader.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len} exceeds the maximum"),
        ));
    }
    let mut body = vec![0u8; len as usize];
    reader.read_exact(&mut body)?;
    let json: Json = serde_json::from_slice(&body)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("bad frame JSON: {e}")))?;
    let msg = WireMessage::from_json(&json)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok(Some(msg))
}
