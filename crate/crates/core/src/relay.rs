//! Capture of standard output and conditions on the worker, and their
//! ordered replay at the controller.
//!
//! The ordering rule: on replay, all captured stdout comes first, then
//! messages and warnings in the order they were signaled. Immediate
//! conditions are the exception — they may travel early (mid-evaluation on
//! live transports) and are delivered at most once per future lifetime,
//! as early as possible.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value as Json};

use crate::exprlang::value::{value_from_json, value_to_json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelayKind {
    Stdout,
    Message,
    Warning,
    Immediate,
}

impl RelayKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelayKind::Stdout => "stdout",
            RelayKind::Message => "message",
            RelayKind::Warning => "warning",
            RelayKind::Immediate => "immediate",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "stdout" => RelayKind::Stdout,
            "message" => RelayKind::Message,
            "warning" => RelayKind::Warning,
            "immediate" => RelayKind::Immediate,
            _ => return None,
        })
    }
}

/// One captured stdout chunk or condition. `seq` is the capture order within
/// one future, 0-based and strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayRecord {
    pub kind: RelayKind,
    pub seq: u64,
    /// For `Stdout`, exactly the captured text including its trailing
    /// newline.
    pub payload: String,
    /// Condition class; present on `Immediate` records.
    pub class: Option<String>,
    /// Structured payload; present on `Immediate` records.
    pub data: Option<Value>,
}

impl RelayRecord {
    pub fn to_json(&self) -> Json {
        let mut obj = json!({
            "type": "relay",
            "kind": self.kind.as_str(),
            "seq": self.seq,
            "payload": self.payload,
        });
        if let Some(class) = &self.class {
            obj["class"] = json!(class);
        }
        if let Some(data) = &self.data {
            // immediate payloads are plain data; resources cannot appear
            obj["data"] = value_to_json(data).unwrap_or(json!({"t": "null"}));
        }
        obj
    }

    pub fn from_json(json: &Json) -> Result<Self, String> {
        let kind = json
            .get("kind")
            .and_then(Json::as_str)
            .and_then(RelayKind::from_name)
            .ok_or("relay record missing kind")?;
        let seq = json
            .get("seq")
            .and_then(Json::as_u64)
            .ok_or("relay record missing seq")?;
        let payload = json
            .get("payload")
            .and_then(Json::as_str)
            .ok_or("relay record missing payload")?
            .to_string();
        let class = json
            .get("class")
            .and_then(Json::as_str)
            .map(str::to_string);
        let data = match json.get("data") {
            Some(d) => Some(value_from_json(d)?),
            None => None,
        };
        Ok(RelayRecord {
            kind,
            seq,
            payload,
            class,
            data,
        })
    }
}

// ---------------------------------------------------------------------------
// Worker-side capture
// ---------------------------------------------------------------------------

/// The ambient capture context installed for one evaluation. Strictly
/// single-threaded; `immediate_tx`, when present, pushes immediate records
/// onto a live transport as they are signaled.
pub struct CaptureContext<'a> {
    records: Vec<RelayRecord>,
    next_seq: u64,
    stdout_enabled: bool,
    immediate_tx: Option<&'a mut dyn FnMut(&RelayRecord)>,
}

impl<'a> CaptureContext<'a> {
    pub fn new(
        stdout_enabled: bool,
        immediate_tx: Option<&'a mut dyn FnMut(&RelayRecord)>,
    ) -> Self {
        CaptureContext {
            records: Vec::new(),
            next_seq: 0,
            stdout_enabled,
            immediate_tx,
        }
    }

    fn push(&mut self, kind: RelayKind, payload: String, class: Option<String>, data: Option<Value>) {
        let record = RelayRecord {
            kind,
            seq: self.next_seq,
            payload,
            class,
            data,
        };
        self.next_seq += 1;
        if kind == RelayKind::Immediate {
            if let Some(tx) = self.immediate_tx.as_mut() {
                tx(&record);
            }
        }
        self.records.push(record);
    }

    /// Record captured stdout text (the text carries its own newline). When
    /// stdout capture is disabled the text is discarded, like writes to the
    /// worker's standard error.
    pub fn stdout(&mut self, text: String) {
        if self.stdout_enabled {
            self.push(RelayKind::Stdout, text, None, None);
        }
    }

    pub fn message(&mut self, text: String) {
        self.push(RelayKind::Message, text, None, None);
    }

    pub fn warning(&mut self, text: String) {
        self.push(RelayKind::Warning, text, None, None);
    }

    pub fn immediate(&mut self, class: &str, payload: String, data: Value) {
        self.push(
            RelayKind::Immediate,
            payload,
            Some(class.to_string()),
            Some(data),
        );
    }

    pub fn into_records(self) -> Vec<RelayRecord> {
        self.records
    }

    pub fn records(&self) -> &[RelayRecord] {
        &self.records
    }
}

// ---------------------------------------------------------------------------
// Controller-side replay
// ---------------------------------------------------------------------------

/// Where relayed output and conditions land at the controller.
pub trait RelaySink {
    fn stdout(&mut self, text: &str);
    fn condition(&mut self, record: &RelayRecord);
}

/// Replay one future's records: immediate records not yet seen go first (and
/// are recorded into `seen_immediates` so they are never replayed again),
/// then all stdout in capture order, then messages and warnings in signal
/// order.
pub fn replay(
    records: &[RelayRecord],
    seen_immediates: &mut HashSet<u64>,
    sink: &mut dyn RelaySink,
) {
    for r in records {
        if r.kind == RelayKind::Immediate && seen_immediates.insert(r.seq) {
            sink.condition(r);
        }
    }
    for r in records {
        if r.kind == RelayKind::Stdout {
            sink.stdout(&r.payload);
        }
    }
    for r in records {
        if matches!(r.kind, RelayKind::Message | RelayKind::Warning) {
            sink.condition(r);
        }
    }
}

/// Default sink: stdout text goes to the process stdout, conditions to
/// standard error.
#[derive(Debug, Default)]
pub struct StandardSink;

impl RelaySink for StandardSink {
    fn stdout(&mut self, text: &str) {
        print!("{text}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
    }

    fn condition(&mut self, record: &RelayRecord) {
        match record.kind {
            RelayKind::Message => eprintln!("{}", record.payload),
            RelayKind::Warning => eprintln!("Warning: {}", record.payload),
            RelayKind::Immediate => eprintln!(
                "[{}] {}",
                record.class.as_deref().unwrap_or("immediate"),
                record.payload
            ),
            RelayKind::Stdout => eprintln!("{}", record.payload),
        }
    }
}

/// A capturing sink for tests, fingerprints, and nested relay forwarding.
#[derive(Debug, Clone, PartialEq)]
pub enum SinkEvent {
    Stdout(String),
    Condition(RelayRecord),
}

#[derive(Clone, Default)]
pub struct MemorySink {
    events: Arc<Mutex<Vec<SinkEvent>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<SinkEvent> {
        self.events.lock().expect("sink lock").clone()
    }

    pub fn take_events(&self) -> Vec<SinkEvent> {
        std::mem::take(&mut *self.events.lock().expect("sink lock"))
    }

    /// All stdout text, concatenated in arrival order.
    pub fn stdout_text(&self) -> String {
        self.events()
            .iter()
            .filter_map(|e| match e {
                SinkEvent::Stdout(t) => Some(t.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn conditions(&self) -> Vec<RelayRecord> {
        self.events()
            .into_iter()
            .filter_map(|e| match e {
                SinkEvent::Condition(r) => Some(r),
                _ => None,
            })
            .collect()
    }

    pub fn push_event(&self, event: SinkEvent) {
        self.events.lock().expect("sink lock").push(event);
    }
}

impl RelaySink for MemorySink {
    fn stdout(&mut self, text: &str) {
        self.push_event(SinkEvent::Stdout(text.to_string()));
    }

    fn condition(&mut self, record: &RelayRecord) {
        self.push_event(SinkEvent::Condition(record.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(kind: RelayKind, seq: u64, payload: &str) -> RelayRecord {
        RelayRecord {
            kind,
            seq,
            payload: payload.to_string(),
            class: None,
            data: None,
        }
    }

    #[test]
    fn capture_orders_and_numbers_records() {
        let mut ctx = CaptureContext::new(true, None);
        ctx.stdout("Hello world\n".to_string());
        ctx.message("The sum of 'x' is 55".to_string());
        ctx.warning("Missing values were omitted".to_string());
        ctx.stdout("Bye bye\n".to_string());
        let records = ctx.into_records();
        let seqs: Vec<u64> = records.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2, 3]);
        assert_eq!(records[0].kind, RelayKind::Stdout);
        assert_eq!(records[3].payload, "Bye bye\n");
    }

    #[test]
    fn stdout_disabled_discards_but_conditions_survive() {
        let mut ctx = CaptureContext::new(false, None);
        ctx.stdout("gone\n".to_string());
        ctx.message("kept".to_string());
        let records = ctx.into_records();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].kind, RelayKind::Message);
    }

    #[test]
    fn replay_stdout_before_conditions() {
        let records = vec![
            rec(RelayKind::Stdout, 0, "Hello world\n"),
            rec(RelayKind::Message, 1, "The sum of 'x' is 55"),
            rec(RelayKind::Warning, 2, "Missing values were omitted"),
            rec(RelayKind::Stdout, 3, "Bye bye\n"),
        ];
        let sink = MemorySink::new();
        let mut seen = HashSet::new();
        replay(&records, &mut seen, &mut sink.clone());
        assert_eq!(sink.stdout_text(), "Hello world\nBye bye\n");
        let events = sink.events();
        assert_eq!(events.len(), 4);
        assert!(matches!(&events[0], SinkEvent::Stdout(t) if t == "Hello world\n"));
        assert!(matches!(&events[1], SinkEvent::Stdout(t) if t == "Bye bye\n"));
        assert!(matches!(&events[2], SinkEvent::Condition(r) if r.kind == RelayKind::Message));
        assert!(matches!(&events[3], SinkEvent::Condition(r) if r.kind == RelayKind::Warning));
    }

    #[test]
    fn replay_empty_is_silent() {
        let sink = MemorySink::new();
        replay(&[], &mut HashSet::new(), &mut sink.clone());
        assert!(sink.events().is_empty());
    }

    #[test]
    fn immediates_replayed_once_and_first() {
        let records = vec![
            rec(RelayKind::Stdout, 0, "a\n"),
            RelayRecord {
                kind: RelayKind::Immediate,
                seq: 1,
                payload: "50%".to_string(),
                class: Some("progress".to_string()),
                data: Some(Value::Null),
            },
        ];
        let sink = MemorySink::new();
        let mut seen = HashSet::new();
        replay(&records, &mut seen, &mut sink.clone());
        replay(&records, &mut seen, &mut sink.clone());
        let events = sink.events();
        // first replay: immediate first, then stdout; second: stdout only
        assert_eq!(events.len(), 3);
        assert!(matches!(&events[0], SinkEvent::Condition(r) if r.kind == RelayKind::Immediate));
        assert!(matches!(&events[1], SinkEvent::Stdout(_)));
        assert!(matches!(&events[2], SinkEvent::Stdout(_)));
    }

    #[test]
    fn immediate_pushes_live_when_transport_present() {
        let mut live: Vec<RelayRecord> = Vec::new();
        let mut tx = |r: &RelayRecord| live.push(r.clone());
        let mut ctx = CaptureContext::new(true, Some(&mut tx));
        ctx.immediate("progress", "p".to_string(), Value::Null);
        ctx.message("m".to_string());
        assert_eq!(ctx.records().len(), 2);
        drop(ctx);
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].payload, "p");
    }

    #[test]
    fn record_json_round_trip() {
        let r = RelayRecord {
            kind: RelayKind::Immediate,
            seq: 7,
            payload: "50%".to_string(),
            class: Some("progress".to_string()),
            data: Some(Value::Int(5)),
        };
        let back = RelayRecord::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
