//! The serializable unit a backend executes, the outcome it reports back,
//! and the worker-side evaluation wrapper.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde_json::{json, Map as JsonMap, Value as Json};

use crate::backend::BackendSpec;
use crate::error::EvalError;
use crate::exprlang::eval::{eval, EvalContext, ParallelHost};
use crate::exprlang::value::{value_from_json, value_to_json, Env, Value};
use crate::exprlang::{parse, Expr, Registry};
use crate::relay::{CaptureContext, RelayRecord};
use crate::rng::{RngCursor, RngState};

/// What to do when a future draws random numbers without asking for a
/// reproducible stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RngMisusePolicy {
    #[default]
    Warn,
    Error,
    Ignore,
}

impl RngMisusePolicy {
    fn as_str(&self) -> &'static str {
        match self {
            RngMisusePolicy::Warn => "warn",
            RngMisusePolicy::Error => "error",
            RngMisusePolicy::Ignore => "ignore",
        }
    }

    fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "warn" => RngMisusePolicy::Warn,
            "error" => RngMisusePolicy::Error,
            "ignore" => RngMisusePolicy::Ignore,
            _ => return None,
        })
    }
}

pub const RNG_MISUSE_TEXT: &str =
    "random numbers were drawn without seed = true; results may not be reproducible";

/// Expression + captured environment + options: everything a worker needs to
/// resolve one future. Serializing and deserializing is identity on all
/// fields.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub body: Expr,
    /// Captured globals, by value, flat.
    pub env: BTreeMap<String, Value>,
    /// Parallel RNG stream requested.
    pub seed: bool,
    /// Present iff `seed`.
    pub rng_stream: Option<RngState>,
    pub lazy: bool,
    pub globals_override: Vec<String>,
    pub stdout_capture: bool,
    /// Plan layers the executing worker installs for nested futures.
    pub plan_tail: Vec<BackendSpec>,
    pub rng_misuse: RngMisusePolicy,
}

impl TaskSpec {
    /// Wire form. Fails if the captured environment holds a non-exportable
    /// value.
    pub fn to_json(&self) -> Result<Json, EvalError> {
        let mut env = JsonMap::new();
        for (k, v) in &self.env {
            env.insert(k.clone(), value_to_json(v)?);
        }
        let tail: Vec<String> = self.plan_tail.iter().map(|s| s.to_string()).collect();
        let mut obj = json!({
            "body": self.body.to_string(),
            "env": env,
            "seed": self.seed,
            "lazy": self.lazy,
            "globals_override": self.globals_override,
            "stdout_capture": self.stdout_capture,
            "plan_tail": tail,
            "rng_misuse": self.rng_misuse.as_str(),
        });
        if let Some(stream) = &self.rng_stream {
            obj["rng_stream"] = json!(stream.words());
        }
        Ok(obj)
    }

    pub fn from_json(json: &Json) -> Result<Self, String> {
        let body_src = json
            .get("body")
            .and_then(Json::as_str)
            .ok_or("task missing body")?;
        let body = parse(body_src).map_err(|e| format!("task body failed to parse: {e}"))?;
        let mut env = BTreeMap::new();
        for (k, v) in json
            .get("env")
            .and_then(Json::as_object)
            .ok_or("task missing env")?
        {
            env.insert(k.clone(), value_from_json(v)?);
        }
        let seed = json
            .get("seed")
            .and_then(Json::as_bool)
            .ok_or("task missing seed")?;
        let rng_stream = match json.get("rng_stream") {
            Some(words) => {
                let words: Vec<u64> = words
                    .as_array()
                    .ok_or("rng_stream must be an array")?
                    .iter()
                    .map(|w| w.as_u64().ok_or("rng_stream word"))
                    .collect::<Result<_, _>>()?;
                if words.len() != 6 {
                    return Err("rng_stream needs six words".to_string());
                }
                Some(
                    RngState::from_words([
                        words[0], words[1], words[2], words[3], words[4], words[5],
                    ])?,
                )
            }
            None => None,
        };
        if seed != rng_stream.is_some() {
            return Err("rng_stream must be present exactly when seed is set".to_string());
        }
        let lazy = json
            .get("lazy")
            .and_then(Json::as_bool)
            .ok_or("task missing lazy")?;
        let globals_override: Vec<String> = json
            .get("globals_override")
            .and_then(Json::as_array)
            .ok_or("task missing globals_override")?
            .iter()
            .map(|j| j.as_str().map(str::to_string).ok_or("override name"))
            .collect::<Result<_, _>>()?;
        let stdout_capture = json
            .get("stdout_capture")
            .and_then(Json::as_bool)
            .ok_or("task missing stdout_capture")?;
        let plan_tail: Vec<BackendSpec> = json
            .get("plan_tail")
            .and_then(Json::as_array)
            .ok_or("task missing plan_tail")?
            .iter()
            .map(|j| {
                let text = j.as_str().ok_or_else(|| "plan layer".to_string())?;
                crate::backend::Plan::parse(text)
                    .map(|p| p.first().clone())
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        let rng_misuse = json
            .get("rng_misuse")
            .and_then(Json::as_str)
            .and_then(RngMisusePolicy::from_str)
            .ok_or("task missing rng_misuse")?;
        Ok(TaskSpec {
            body,
            env,
            seed,
            rng_stream,
            lazy,
            globals_override,
            stdout_capture,
            plan_tail,
            rng_misuse,
        })
    }
}

/// How a resolved future ended.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeKind {
    Success(Value),
    /// The task's own error, relayed as-is.
    EvalFailure {
        message: String,
        condition_class: String,
    },
    /// The machinery failed: dead worker, lost connection.
    InfraFailure {
        message: String,
        retryable: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FutureOutcome {
    pub kind: OutcomeKind,
    pub relay: Vec<RelayRecord>,
    pub rng_used: bool,
    pub wall_time_ms: u64,
}

impl FutureOutcome {
    pub fn infra(message: impl Into<String>, retryable: bool) -> Self {
        FutureOutcome {
            kind: OutcomeKind::InfraFailure {
                message: message.into(),
                retryable,
            },
            relay: Vec::new(),
            rng_used: false,
            wall_time_ms: 0,
        }
    }

    pub fn to_json(&self) -> Result<Json, EvalError> {
        let kind = match &self.kind {
            OutcomeKind::Success(v) => json!({"t": "success", "value": value_to_json(v)?}),
            OutcomeKind::EvalFailure {
                message,
                condition_class,
            } => json!({"t": "eval_failure", "message": message, "class": condition_class}),
            OutcomeKind::InfraFailure { message, retryable } => {
                json!({"t": "infra_failure", "message": message, "retryable": retryable})
            }
        };
        let relay: Vec<Json> = self.relay.iter().map(|r| r.to_json()).collect();
        Ok(json!({
            "kind": kind,
            "relay": relay,
            "rng_used": self.rng_used,
            "wall_time_ms": self.wall_time_ms,
        }))
    }

    pub fn from_json(json: &Json) -> Result<Self, String> {
        let kind_obj = json.get("kind").ok_or("outcome missing kind")?;
        let tag = kind_obj
            .get("t")
            .and_then(Json::as_str)
            .ok_or("outcome kind missing tag")?;
        let kind = match tag {
            "success" => OutcomeKind::Success(value_from_json(
                kind_obj.get("value").ok_or("success missing value")?,
            )?),
            "eval_failure" => OutcomeKind::EvalFailure {
                message: kind_obj
                    .get("message")
                    .and_then(Json::as_str)
                    .ok_or("eval_failure message")?
                    .to_string(),
                condition_class: kind_obj
                    .get("class")
                    .and_then(Json::as_str)
                    .ok_or("eval_failure class")?
                    .to_string(),
            },
            "infra_failure" => OutcomeKind::InfraFailure {
                message: kind_obj
                    .get("message")
                    .and_then(Json::as_str)
                    .ok_or("infra_failure message")?
                    .to_string(),
                retryable: kind_obj
                    .get("retryable")
                    .and_then(Json::as_bool)
                    .ok_or("infra_failure retryable")?,
            },
            other => return Err(format!("unknown outcome tag {other:?}")),
        };
        let relay: Vec<RelayRecord> = json
            .get("relay")
            .and_then(Json::as_array)
            .ok_or("outcome missing relay")?
            .iter()
            .map(RelayRecord::from_json)
            .collect::<Result<_, _>>()?;
        Ok(FutureOutcome {
            kind,
            relay,
            rng_used: json
                .get("rng_used")
                .and_then(Json::as_bool)
                .ok_or("outcome missing rng_used")?,
            wall_time_ms: json
                .get("wall_time_ms")
                .and_then(Json::as_u64)
                .ok_or("outcome missing wall_time_ms")?,
        })
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeKind::Success(v) => write!(f, "success: {v}"),
            OutcomeKind::EvalFailure { message, .. } => write!(f, "error: {message}"),
            OutcomeKind::InfraFailure { message, .. } => write!(f, "infrastructure: {message}"),
        }
    }
}

/// Evaluate a task under a fresh capture context. Never raises: every
/// failure is encoded in the outcome. `immediate_tx`, when given, receives
/// immediate-condition records the moment they are signaled.
pub fn capture_run(
    task: &TaskSpec,
    host: &mut dyn ParallelHost,
    immediate_tx: Option<&mut dyn FnMut(&RelayRecord)>,
) -> FutureOutcome {
    let started = Instant::now();
    let mut capture = CaptureContext::new(task.stdout_capture, immediate_tx);
    let rng = task.rng_stream.map(RngCursor::new);
    let mut ctx = EvalContext::new(Registry::standard(), &mut capture, rng, Some(host));
    let mut env = Env::from_map(task.env.clone());
    let result = eval(&task.body, &mut env, &mut ctx);

    let rng_used = ctx.rng_used;
    let scratch_used = ctx.scratch_used;

    let mut kind = match result {
        Ok(v) => OutcomeKind::Success(v),
        Err(e) => OutcomeKind::EvalFailure {
            message: e.message,
            condition_class: e.class,
        },
    };
    if scratch_used {
        match task.rng_misuse {
            RngMisusePolicy::Warn => capture.warning(RNG_MISUSE_TEXT.to_string()),
            RngMisusePolicy::Error => {
                if matches!(kind, OutcomeKind::Success(_)) {
                    kind = OutcomeKind::EvalFailure {
                        message: RNG_MISUSE_TEXT.to_string(),
                        condition_class: "rng_misuse".to_string(),
                    };
                }
            }
            RngMisusePolicy::Ignore => {}
        }
    }
    FutureOutcome {
        kind,
        relay: capture.into_records(),
        rng_used,
        wall_time_ms: started.elapsed().as_millis() as u64,
    }
}
