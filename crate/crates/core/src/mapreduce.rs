//! Higher-level constructs built only on the three primitives: chunked
//! parallel map, collection-valued collection, and first-finisher selection.

use std::time::Duration;

use thiserror::Error;

use crate::error::{CreateError, EvalError, FutureError, ValueError};
use crate::exprlang::value::ClosureData;
use crate::exprlang::{free_vars, Env, Expr, NumVec, Registry, Value};
use crate::rng::{next_stream, stream_for, RngState};
use crate::session::{FutureHandle, FutureOpts, Session};
use crate::task::OutcomeKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error(transparent)]
    Create(#[from] CreateError),
    #[error(transparent)]
    Value(#[from] ValueError),
}

/// The mapped function: a ready closure, or an expression with one named
/// free slot (other free names are captured from `env` at map time).
#[derive(Debug, Clone)]
pub enum MapFn {
    Closure(Value),
    Expr { body: Expr, slot: String },
}

#[derive(Debug, Clone, Default)]
pub struct MapOpts {
    /// Number of chunks; `None` means one chunk per available worker.
    pub chunks: Option<usize>,
    /// Assign a reproducible RNG stream per element (by element index, so
    /// results are chunk-invariant).
    pub seed: bool,
}

fn normalize_fn(map_fn: &MapFn, env: &Env) -> Result<Value, MapError> {
    match map_fn {
        MapFn::Closure(v @ Value::Closure(_)) => Ok(v.clone()),
        MapFn::Closure(other) => Err(MapError::Create(CreateError::Backend(FutureError::new(
            format!("future_map expects a closure, got {}", other.type_name()),
        )))),
        MapFn::Expr { body, slot } => {
            let mut captured = std::collections::BTreeMap::new();
            for name in free_vars(body, Registry::standard()) {
                if &name == slot {
                    continue;
                }
                match env.lookup(&name) {
                    Some(v) => {
                        captured.insert(name, v.clone());
                    }
                    None => return Err(MapError::Create(CreateError::MissingGlobal(name))),
                }
            }
            Ok(Value::Closure(Box::new(ClosureData {
                params: vec![slot.clone()],
                body: body.clone(),
                env: captured,
            })))
        }
    }
}

/// Contiguous chunk sizes differing by at most one.
fn balanced_sizes(n: usize, chunks: usize) -> Vec<usize> {
    let chunks = chunks.clamp(1, n.max(1));
    let base = n / chunks;
    let extra = n % chunks;
    (0..chunks)
        .map(|i| base + usize::from(i < extra))
        .collect()
}

fn state_value(state: &RngState) -> Value {
    Value::Vec(NumVec::Int(state.words().iter().map(|&w| w as i64).collect()))
}

/// Partition `items` into contiguous chunks, one future per chunk, and
/// flatten the results back in positional order. With `seed`, element `i`
/// draws from its own stream keyed by element index, so the chunking never
/// changes the result.
pub fn future_map(
    session: &mut Session,
    items: &[Value],
    map_fn: &MapFn,
    env: &Env,
    opts: &MapOpts,
) -> Result<Vec<Value>, MapError> {
    let closure = normalize_fn(map_fn, env)?;
    let n = items.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let chunk_count = match opts.chunks {
        Some(c) => c.clamp(1, n),
        None => session.capacity().clamp(1, n),
    };
    let sizes = balanced_sizes(n, chunk_count);

    let streams: Option<Vec<RngState>> = if opts.seed {
        let base = session.reserve_ordinals(n as u64);
        let mut out = Vec::with_capacity(n);
        let mut state = stream_for(session.config().seed, base);
        out.push(state);
        for _ in 1..n {
            state = next_stream(&state);
            out.push(state);
        }
        Some(out)
    } else {
        None
    };

    let mut handles = Vec::with_capacity(sizes.len());
    let mut offset = 0usize;
    for size in sizes {
        let chunk_items = items[offset..offset + size].to_vec();
        let chunk_streams = match &streams {
            Some(all) => Value::List(all[offset..offset + size].iter().map(state_value).collect()),
            None => Value::Null,
        };
        let mut chunk_env = Env::new();
        chunk_env.define("fm_fn", closure.clone());
        chunk_env.define("fm_xs", Value::List(chunk_items));
        chunk_env.define("fm_streams", chunk_streams);
        let body = Expr::Call(
            "map_chunk".to_string(),
            vec![
                Expr::Var("fm_fn".to_string()),
                Expr::Var("fm_xs".to_string()),
                Expr::Var("fm_streams".to_string()),
            ],
        );
        let handle = session.future(body, &chunk_env, FutureOpts::default())?;
        handles.push(handle);
        offset += size;
    }

    let chunk_values = value_all(session, &handles)?;
    let mut out = Vec::with_capacity(n);
    for value in chunk_values {
        match value {
            Value::List(items) => out.extend(items),
            other => {
                return Err(MapError::Value(ValueError::Eval(EvalError::new(format!(
                    "map chunk returned {} instead of a list",
                    other.type_name()
                )))))
            }
        }
    }
    Ok(out)
}

/// Collect every handle, in handle order, taking each as soon as it
/// resolves (which also replays its relay records at that moment). Failures
/// are aggregated; the first by handle order is raised after all handles
/// reach a terminal state.
pub fn value_all(
    session: &mut Session,
    handles: &[FutureHandle],
) -> Result<Vec<Value>, ValueError> {
    let mut outcomes: Vec<Option<OutcomeKind>> = (0..handles.len()).map(|_| None).collect();
    let mut remaining = handles.len();
    while remaining > 0 {
        let mut progressed = false;
        for (i, handle) in handles.iter().enumerate() {
            if outcomes[i].is_some() {
                continue;
            }
            let done = session.resolved(handle).unwrap_or(true);
            if done {
                outcomes[i] = Some(session.try_value(handle).kind);
                remaining -= 1;
                progressed = true;
            }
        }
        if remaining > 0 && !progressed {
            std::thread::sleep(Duration::from_millis(2));
        }
    }
    let mut values = Vec::with_capacity(handles.len());
    for kind in outcomes.into_iter().flatten() {
        match kind {
            OutcomeKind::Success(v) => values.push(v),
            OutcomeKind::EvalFailure {
                message,
                condition_class,
            } => {
                return Err(ValueError::Eval(EvalError::with_class(
                    message,
                    condition_class,
                )))
            }
            OutcomeKind::InfraFailure { message, retryable } => {
                return Err(ValueError::Future(FutureError { message, retryable }))
            }
        }
    }
    Ok(values)
}

/// Launch every expression and return the value of the first future to
/// resolve. The rest are abandoned: left to finish, results discarded. A
/// failed first finisher raises its error.
pub fn future_either(
    session: &mut Session,
    bodies: Vec<Expr>,
    env: &Env,
) -> Result<Value, MapError> {
    if bodies.is_empty() {
        return Err(MapError::Create(CreateError::Backend(FutureError::new(
            "future_either needs at least one expression",
        ))));
    }
    let mut handles = Vec::with_capacity(bodies.len());
    for body in bodies {
        handles.push(session.future(body, env, FutureOpts::default())?);
    }
    loop {
        for handle in &handles {
            if session.resolved(handle).unwrap_or(true) {
                return match session.try_value(handle).kind {
                    OutcomeKind::Success(v) => Ok(v),
                    OutcomeKind::EvalFailure {
                        message,
                        condition_class,
                    } => Err(MapError::Value(ValueError::Eval(EvalError::with_class(
                        message,
                        condition_class,
                    )))),
                    OutcomeKind::InfraFailure { message, retryable } => Err(MapError::Value(
                        ValueError::Future(FutureError { message, retryable }),
                    )),
                };
            }
        }
        std::thread::sleep(Duration::from_millis(2));
    }
}
