//! The check corpus. At least one check per framework feature: capture
//! immutability, blocking at capacity, error relay, output/condition
//! ordering, immediate-condition delivery, missing-global failure, globals
//! override, non-exportable rejection, seeded RNG reproducibility, RNG
//! misuse warning, nested-plan sequential default, lazy futures, value
//! idempotence, map equivalence, and first-finisher selection.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::{CheckCtx, CheckKind, ConformanceCheck};
use crate::error::{CreateError, ValueError};
use crate::exprlang::value::ResourceData;
use crate::exprlang::{parse, Env, Expr, Value};
use crate::mapreduce::{future_either, future_map, value_all, MapError, MapFn, MapOpts};
use crate::relay::{RelayKind, SinkEvent};
use crate::session::{FutureOpts, FutureState, SessionConfig};
use crate::task::RngMisusePolicy;

fn cfg_default() -> SessionConfig {
    SessionConfig {
        seed: 42,
        ..SessionConfig::default()
    }
}

fn cfg_misuse_error() -> SessionConfig {
    SessionConfig {
        rng_misuse: RngMisusePolicy::Error,
        ..cfg_default()
    }
}

fn cfg_misuse_ignore() -> SessionConfig {
    SessionConfig {
        rng_misuse: RngMisusePolicy::Ignore,
        ..cfg_default()
    }
}

fn body(src: &str) -> Expr {
    parse(src).unwrap_or_else(|e| panic!("corpus body failed to parse: {e}\n{src}"))
}

fn env_of(pairs: &[(&str, Value)]) -> Env {
    let mut env = Env::new();
    for (k, v) in pairs {
        env.define(*k, v.clone());
    }
    env
}

fn ints(range: std::ops::RangeInclusive<i64>) -> Vec<Value> {
    range.map(Value::Int).collect()
}

fn note_outcome(ctx: &mut CheckCtx<'_>, label: &str, result: Result<Value, ValueError>) {
    match result {
        Ok(v) => ctx.note_value(label, &v),
        Err(ValueError::Eval(e)) => ctx.note_error(label, &e.class, &e.message),
        Err(ValueError::Future(e)) => ctx.note_error(label, "future_error", &e.message),
    }
}

fn note_create_err(ctx: &mut CheckCtx<'_>, label: &str, err: &CreateError) {
    let class = match err {
        CreateError::MissingGlobal(_) => "missing_global",
        CreateError::NonExportable(_) => "non_exportable",
        CreateError::Backend(_) => "future_error",
    };
    ctx.note_error(label, class, &err.to_string());
}

fn note_map_result(ctx: &mut CheckCtx<'_>, label: &str, result: Result<Vec<Value>, MapError>) {
    match result {
        Ok(values) => ctx.note_value(label, &Value::List(values)),
        Err(MapError::Value(e)) => note_outcome(ctx, label, Err(e)),
        Err(MapError::Create(e)) => note_create_err(ctx, label, &e),
    }
}

/// Wait (politely) until a future reports resolved, then hand back.
fn spin_resolved(ctx: &mut CheckCtx<'_>, handle: &crate::session::FutureHandle) -> Result<(), String> {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        match ctx.session.resolved(handle) {
            Ok(true) => return Ok(()),
            Ok(false) => {
                if Instant::now() > deadline {
                    return Err("timed out waiting for resolution".to_string());
                }
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(format!("resolved() failed: {e}")),
        }
    }
}

macro_rules! det {
    ($id:literal, $f:expr) => {
        ConformanceCheck {
            id: $id,
            kind: CheckKind::Deterministic,
            min_capacity: 1,
            needs_live_relay: false,
            config: cfg_default,
            run: $f,
        }
    };
    ($id:literal, $cfg:expr, $f:expr) => {
        ConformanceCheck {
            id: $id,
            kind: CheckKind::Deterministic,
            min_capacity: 1,
            needs_live_relay: false,
            config: $cfg,
            run: $f,
        }
    };
}

/// The full corpus, in a stable order.
pub fn corpus() -> Vec<ConformanceCheck> {
    vec![
        // --- plain values -------------------------------------------------
        det!("value-basic", |ctx| {
            let h = ctx
                .session
                .future(body("(+ 40 2)"), &Env::new(), FutureOpts::default())
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        det!("value-idempotent", |ctx| {
            let h = ctx
                .session
                .future(
                    body("(begin (print \"tick\") (* 6 7))"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            let first = ctx.session.value(&h);
            note_outcome(ctx, "first", first.clone());
            let second = ctx.session.value(&h);
            if first != second {
                return Err("value() was not idempotent".to_string());
            }
            note_outcome(ctx, "second", second);
            Ok(())
        }),
        det!("value-capture-immutable", |ctx| {
            let mut env = env_of(&[("x", Value::Int(1))]);
            let h = ctx
                .session
                .future(body("(* x 10)"), &env, FutureOpts::default())
                .map_err(|e| e.to_string())?;
            env.define("x", Value::Int(2));
            let v = ctx.session.value(&h);
            note_outcome(ctx, "v", v.clone());
            if v != Ok(Value::Int(10)) {
                return Err(format!("capture was not by value: {v:?}"));
            }
            Ok(())
        }),
        det!("value-closure-returned", |ctx| {
            let env = env_of(&[("m", Value::Int(6))]);
            let h = ctx
                .session
                .future(body("(lambda (a) (* a m))"), &env, FutureOpts::default())
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            note_outcome(ctx, "closure", v);
            Ok(())
        }),
        det!("value-compound-data", |ctx| {
            let h = ctx
                .session
                .future(
                    body("(list (vec 1 2 3) (vec 0.5 (/ 1 3)) \"text\" null true (sort (vec 3.5 1.25 2.75)))"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        // --- relay of output and conditions -------------------------------
        det!("relay-ordering", |ctx| {
            let mut items = ints(1..=10);
            items.push(Value::Null);
            let env = env_of(&[("x", Value::List(items))]);
            let h = ctx
                .session
                .future(
                    body(
                        "(begin \
                           (print \"Hello world\") \
                           (set! y (sum x)) \
                           (message \"The sum of 'x' is \" y) \
                           (if (has_null x) (warning \"Missing values were omitted\") null) \
                           (print \"Bye bye\") \
                           y)",
                    ),
                    &env,
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            if v != Ok(Value::Int(55)) {
                return Err(format!("expected 55, got {v:?}"));
            }
            // the capturing wrapper must observe stdout before conditions
            let events = ctx.sink_events();
            let stdout: Vec<String> = events
                .iter()
                .filter_map(|e| match e {
                    SinkEvent::Stdout(t) => Some(t.clone()),
                    _ => None,
                })
                .collect();
            if stdout != ["Hello world\n", "Bye bye\n"] {
                return Err(format!("stdout wrapper saw {stdout:?}"));
            }
            let last_stdout = events
                .iter()
                .rposition(|e| matches!(e, SinkEvent::Stdout(_)))
                .unwrap_or(0);
            let first_condition = events
                .iter()
                .position(|e| matches!(e, SinkEvent::Condition(_)))
                .unwrap_or(usize::MAX);
            if last_stdout > first_condition {
                return Err("conditions were relayed before all stdout".to_string());
            }
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        det!("relay-empty", |ctx| {
            let h = ctx
                .session
                .future(body("(+ 1 2)"), &Env::new(), FutureOpts::default())
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            if !ctx.sink_events().is_empty() {
                return Err("records appeared for a silent body".to_string());
            }
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        det!("relay-replays-each-value-call", |ctx| {
            let h = ctx
                .session
                .future(
                    body("(begin (print \"out\") (message \"cond\") 7)"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            let _ = ctx.session.value(&h);
            let _ = ctx.session.value(&h);
            let events = ctx.sink_events();
            let stdout_count = events
                .iter()
                .filter(|e| matches!(e, SinkEvent::Stdout(_)))
                .count();
            if stdout_count != 2 {
                return Err(format!("expected stdout twice, saw {stdout_count}"));
            }
            ctx.note_text("replayed", "twice");
            Ok(())
        }),
        det!("relay-stdout-capture-off", |ctx| {
            let h = ctx
                .session
                .future(
                    body("(begin (print \"lost\") (message \"kept\") 3)"),
                    &Env::new(),
                    FutureOpts {
                        stdout_capture: false,
                        ..Default::default()
                    },
                )
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            if !ctx.session.try_value(&h).relay.iter().all(|r| r.kind != RelayKind::Stdout) {
                return Err("stdout was captured despite being disabled".to_string());
            }
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        det!("relay-immediate-once", |ctx| {
            let h = ctx
                .session
                .future(
                    body("(begin (progress \"50%\") (print \"after\") (+ 1 2))"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            let _ = ctx.session.value(&h);
            let immediates = ctx
                .sink_events()
                .iter()
                .filter(|e| {
                    matches!(e, SinkEvent::Condition(r) if r.kind == RelayKind::Immediate)
                })
                .count();
            if immediates != 1 {
                return Err(format!("immediate relayed {immediates} times"));
            }
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        // --- error taxonomy ------------------------------------------------
        det!("error-eval-log", |ctx| {
            let env = env_of(&[("x", Value::Str("24".to_string()))]);
            let h = ctx
                .session
                .future(body("(log x)"), &env, FutureOpts::default())
                .map_err(|e| e.to_string())?;
            match ctx.session.value(&h) {
                Err(ValueError::Eval(e))
                    if e.message == "non-numeric argument to mathematical function" =>
                {
                    ctx.note_error("v", &e.class, &e.message);
                    Ok(())
                }
                other => Err(format!("wrong error: {other:?}")),
            }
        }),
        det!("error-custom-message", |ctx| {
            let h = ctx
                .session
                .future(
                    body("(begin (print \"before\") (error \"boom\"))"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        det!("error-try-value-kinds", |ctx| {
            let ok = ctx
                .session
                .future(body("(+ 1 1)"), &Env::new(), FutureOpts::default())
                .map_err(|e| e.to_string())?;
            let bad = ctx
                .session
                .future(body("(error \"nope\")"), &Env::new(), FutureOpts::default())
                .map_err(|e| e.to_string())?;
            let ok_outcome = ctx.session.try_value(&ok);
            let bad_outcome = ctx.session.try_value(&bad);
            ctx.note_text("ok-kind", format!("{}", ok_outcome.kind));
            ctx.note_text("bad-kind", format!("{}", bad_outcome.kind));
            Ok(())
        }),
        // --- globals --------------------------------------------------------
        det!("globals-missing-fails-at-create", |ctx| {
            match ctx.session.future(
                body("(+ x y)"),
                &env_of(&[("x", Value::Int(1))]),
                FutureOpts::default(),
            ) {
                Err(e) => {
                    note_create_err(ctx, "create", &e);
                    Ok(())
                }
                Ok(_) => Err("creation should have failed".to_string()),
            }
        }),
        det!("globals-lookup-dynamic-failure", |ctx| {
            let env = env_of(&[("k", Value::Int(42))]);
            let h = ctx
                .session
                .future(body("(lookup \"k\")"), &env, FutureOpts::default())
                .map_err(|e| e.to_string())?;
            match ctx.session.value(&h) {
                Err(ValueError::Eval(e)) if e.message == "object 'k' not found" => {
                    ctx.note_error("v", &e.class, &e.message);
                    Ok(())
                }
                other => Err(format!("wrong outcome: {other:?}")),
            }
        }),
        det!("globals-override-rescues-lookup", |ctx| {
            let env = env_of(&[("k", Value::Int(42))]);
            let h = ctx
                .session
                .future(
                    body("(lookup \"k\")"),
                    &env,
                    FutureOpts {
                        globals_override: vec!["k".to_string()],
                        ..Default::default()
                    },
                )
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            if v != Ok(Value::Int(42)) {
                return Err(format!("override did not rescue lookup: {v:?}"));
            }
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        det!("globals-conditional-assign-optimistic", |ctx| {
            // w is captured even though one branch assigns it
            let env = env_of(&[("c", Value::Bool(false)), ("w", Value::Int(9))]);
            let h = ctx
                .session
                .future(
                    body("(begin (if c (set! w 1) null) w)"),
                    &env,
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            {
                let v = ctx.session.value(&h);
                note_outcome(ctx, "else-path", v);
            };
            let env = env_of(&[("c", Value::Bool(true)), ("w", Value::Int(9))]);
            let h = ctx
                .session
                .future(
                    body("(begin (if c (set! w 1) null) w)"),
                    &env,
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            {
                let v = ctx.session.value(&h);
                note_outcome(ctx, "then-path", v);
            };
            Ok(())
        }),
        det!("globals-let-shadows", |ctx| {
            let env = env_of(&[("z", Value::Int(40))]);
            let h = ctx
                .session
                .future(body("(let ((y 2)) (+ y z))"), &env, FutureOpts::default())
                .map_err(|e| e.to_string())?;
            {
                let v = ctx.session.value(&h);
                note_outcome(ctx, "v", v);
            };
            Ok(())
        }),
        det!("globals-assign-binds-rest", |ctx| {
            // t is created by the body itself; nothing to capture
            let h = ctx
                .session
                .future(
                    body("(begin (set! t 5) (+ t 2))"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            {
                let v = ctx.session.value(&h);
                note_outcome(ctx, "v", v);
            };
            Ok(())
        }),
        det!("globals-non-exportable-rejected", |ctx| {
            let resource = Value::Resource(ResourceData {
                session: uuid::Uuid::nil(),
                tag: "conn".to_string(),
            });
            match ctx.session.future(
                body("r"),
                &env_of(&[("r", resource)]),
                FutureOpts::default(),
            ) {
                Err(e @ CreateError::NonExportable(_)) => {
                    note_create_err(ctx, "create", &e);
                    Ok(())
                }
                other => Err(format!("expected non-exportable rejection, got {other:?}")),
            }
        }),
        // --- lazy futures ----------------------------------------------------
        det!("lazy-value-launches", |ctx| {
            let h = ctx
                .session
                .future(body("(* 3 9)"), &Env::new(), FutureOpts::lazy())
                .map_err(|e| e.to_string())?;
            if ctx.session.state(&h) != FutureState::Created {
                return Err("lazy future launched eagerly".to_string());
            }
            {
                let v = ctx.session.value(&h);
                note_outcome(ctx, "v", v);
            };
            Ok(())
        }),
        det!("lazy-resolved-launches", |ctx| {
            let h = ctx
                .session
                .future(body("(* 4 9)"), &Env::new(), FutureOpts::lazy())
                .map_err(|e| e.to_string())?;
            if ctx.session.state(&h) != FutureState::Created {
                return Err("lazy future launched eagerly".to_string());
            }
            spin_resolved(ctx, &h)?;
            if ctx.session.state(&h) == FutureState::Created {
                return Err("resolved() did not launch the lazy future".to_string());
            }
            {
                let v = ctx.session.value(&h);
                note_outcome(ctx, "v", v);
            };
            Ok(())
        }),
        // --- parallel RNG ------------------------------------------------------
        det!("rng-seeded-normals-reproduce", |ctx| {
            let h = ctx
                .session
                .future(body("(rnorm 5)"), &Env::new(), FutureOpts::seeded())
                .map_err(|e| e.to_string())?;
            {
                let v = ctx.session.value(&h);
                note_outcome(ctx, "draws", v);
            };
            Ok(())
        }),
        det!("rng-seeded-uniforms-by-ordinal", |ctx| {
            let h0 = ctx
                .session
                .future(body("(runif 4)"), &Env::new(), FutureOpts::seeded())
                .map_err(|e| e.to_string())?;
            let h1 = ctx
                .session
                .future(body("(runif 4)"), &Env::new(), FutureOpts::seeded())
                .map_err(|e| e.to_string())?;
            let v0 = ctx.session.value(&h0);
            let v1 = ctx.session.value(&h1);
            if v0 == v1 {
                return Err("distinct ordinals drew identical streams".to_string());
            }
            note_outcome(ctx, "first", v0);
            note_outcome(ctx, "second", v1);
            Ok(())
        }),
        det!("rng-misuse-warns", |ctx| {
            let h = ctx
                .session
                .future(
                    body("(begin (runif 2) null)"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            let warned = ctx.sink_events().iter().any(|e| {
                matches!(e, SinkEvent::Condition(r)
                    if r.kind == RelayKind::Warning && r.payload.contains("seed = true"))
            });
            if !warned {
                return Err("no misuse warning was relayed".to_string());
            }
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        det!("rng-misuse-escalates", cfg_misuse_error, |ctx| {
            let h = ctx
                .session
                .future(
                    body("(begin (runif 2) null)"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            match ctx.session.value(&h) {
                Err(ValueError::Eval(e)) if e.class == "rng_misuse" => {
                    ctx.note_error("v", &e.class, &e.message);
                    Ok(())
                }
                other => Err(format!("expected escalation, got {other:?}")),
            }
        }),
        det!("rng-misuse-disabled", cfg_misuse_ignore, |ctx| {
            let h = ctx
                .session
                .future(
                    body("(begin (runif 2) null)"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            if !ctx.sink_events().is_empty() {
                return Err("the disabled check still relayed something".to_string());
            }
            note_outcome(ctx, "v", v);
            Ok(())
        }),
        // --- nested parallelism -------------------------------------------------
        det!("nested-default-is-sequential", |ctx| {
            // single-layer plan: the worker's own available workers is 1
            let h = ctx
                .session
                .future(body("(nworkers)"), &Env::new(), FutureOpts::default())
                .map_err(|e| e.to_string())?;
            let v = ctx.session.value(&h);
            if v != Ok(Value::Int(1)) {
                return Err(format!("nested default was not sequential: {v:?}"));
            }
            note_outcome(ctx, "workers", v);
            Ok(())
        }),
        det!("nested-par-map-inline", |ctx| {
            let h = ctx
                .session
                .future(
                    body("(par_map (lambda (v) (* v v)) (list 1 2 3 4))"),
                    &Env::new(),
                    FutureOpts::default(),
                )
                .map_err(|e| e.to_string())?;
            {
                let v = ctx.session.value(&h);
                note_outcome(ctx, "squares", v);
            };
            Ok(())
        }),
        // --- map-reduce -----------------------------------------------------------
        det!("map-matches-sequential-map", |ctx| {
            let out = future_map(
                &mut ctx.session,
                &ints(1..=10),
                &MapFn::Expr {
                    body: body("(* x 2)"),
                    slot: "x".to_string(),
                },
                &Env::new(),
                &MapOpts::default(),
            );
            note_map_result(ctx, "mapped", out);
            Ok(())
        }),
        det!("map-chunk-invariant-unseeded", |ctx| {
            let mut outputs = Vec::new();
            for chunks in [1usize, 2, 5, 10] {
                let mut sibling = ctx.fresh_session()?;
                let out = future_map(
                    &mut sibling,
                    &ints(1..=10),
                    &MapFn::Expr {
                        body: body("(+ x 100)"),
                        slot: "x".to_string(),
                    },
                    &Env::new(),
                    &MapOpts {
                        chunks: Some(chunks),
                        seed: false,
                    },
                )
                .map_err(|e| e.to_string())?;
                outputs.push(out);
            }
            if !outputs.windows(2).all(|w| w[0] == w[1]) {
                return Err("chunking changed the result".to_string());
            }
            let first = outputs.into_iter().next().unwrap();
            ctx.note_value("mapped", &Value::List(first));
            Ok(())
        }),
        det!("map-chunk-invariant-seeded", |ctx| {
            // 25 elements x 4 draws = 100 seeded normal draws
            let mut outputs = Vec::new();
            for chunks in [1usize, 2, 5, 10] {
                let mut sibling = ctx.fresh_session()?;
                let out = future_map(
                    &mut sibling,
                    &ints(1..=25),
                    &MapFn::Expr {
                        body: body("(rnorm 4)"),
                        slot: "x".to_string(),
                    },
                    &Env::new(),
                    &MapOpts {
                        chunks: Some(chunks),
                        seed: true,
                    },
                )
                .map_err(|e| e.to_string())?;
                outputs.push(out);
            }
            if !outputs.windows(2).all(|w| w[0] == w[1]) {
                return Err("seeded map was not chunk-invariant".to_string());
            }
            let first = outputs.into_iter().next().unwrap();
            ctx.note_value("draws", &Value::List(first));
            Ok(())
        }),
        det!("map-empty-input", |ctx| {
            let out = future_map(
                &mut ctx.session,
                &[],
                &MapFn::Expr {
                    body: body("(* x 2)"),
                    slot: "x".to_string(),
                },
                &Env::new(),
                &MapOpts::default(),
            );
            note_map_result(ctx, "mapped", out);
            Ok(())
        }),
        det!("map-first-error-wins", |ctx| {
            let out = future_map(
                &mut ctx.session,
                &ints(1..=6),
                &MapFn::Expr {
                    body: body("(if (>= x 4) (error \"element \" x \" failed\") x)"),
                    slot: "x".to_string(),
                },
                &Env::new(),
                &MapOpts {
                    chunks: Some(3),
                    seed: false,
                },
            );
            note_map_result(ctx, "mapped", out);
            Ok(())
        }),
        det!("value-all-handle-order", |ctx| {
            let handles: Vec<_> = [30, 20, 10]
                .iter()
                .map(|i| {
                    ctx.session
                        .future(
                            body(&format!("(+ {i} 1)")),
                            &Env::new(),
                            FutureOpts::default(),
                        )
                        .map_err(|e| e.to_string())
                })
                .collect::<Result<_, _>>()?;
            let values = value_all(&mut ctx.session, &handles);
            note_outcome(
                ctx,
                "all",
                values.map(Value::List),
            );
            let empty = value_all(&mut ctx.session, &[]);
            note_outcome(ctx, "empty", empty.map(Value::List));
            Ok(())
        }),
        det!("value-all-first-failure", |ctx| {
            let h0 = ctx
                .session
                .future(body("(error \"first\")"), &Env::new(), FutureOpts::default())
                .map_err(|e| e.to_string())?;
            let h1 = ctx
                .session
                .future(body("(error \"second\")"), &Env::new(), FutureOpts::default())
                .map_err(|e| e.to_string())?;
            let out = value_all(&mut ctx.session, &[h0, h1]);
            note_outcome(ctx, "err", out.map(Value::List));
            Ok(())
        }),
        det!("either-single-body", |ctx| {
            let out = future_either(&mut ctx.session, vec![body("(sum (seq 1 10))")], &Env::new());
            match out {
                Ok(v) => ctx.note_value("v", &v),
                Err(e) => ctx.note_error("v", "error", &e.to_string()),
            }
            Ok(())
        }),
        // --- behavioral: concurrency, blocking, liveness ------------------------
        ConformanceCheck {
            id: "blocking-at-capacity",
            kind: CheckKind::Behavioral,
            min_capacity: 2,
            needs_live_relay: false,
            config: cfg_default,
            run: |ctx| {
                let capacity = ctx.session.capacity();
                let latches: Vec<String> = (0..capacity).map(|_| ctx.latch_path()).collect();
                let mut handles = Vec::new();
                for latch in &latches {
                    let env = env_of(&[("gate", Value::Str(latch.clone()))]);
                    let h = ctx
                        .session
                        .future(
                            body("(begin (await_file gate) 1)"),
                            &env,
                            FutureOpts::default(),
                        )
                        .map_err(|e| e.to_string())?;
                    handles.push(h);
                }
                // all slots are gated shut; the next creation must block
                // until the releasing thread opens one
                let release_at = Arc::new(Mutex::new(None::<Instant>));
                let releaser = {
                    let release_at = Arc::clone(&release_at);
                    let first = latches[0].clone();
                    std::thread::spawn(move || {
                        std::thread::sleep(Duration::from_millis(300));
                        *release_at.lock().unwrap() = Some(Instant::now());
                        std::fs::write(&first, b"go").expect("latch");
                    })
                };
                let extra = ctx
                    .session
                    .future(body("2"), &Env::new(), FutureOpts::default())
                    .map_err(|e| e.to_string())?;
                let returned_at = Instant::now();
                releaser.join().map_err(|_| "release thread panicked")?;
                let released_at = release_at
                    .lock()
                    .unwrap()
                    .ok_or("latch was never released")?;
                if returned_at < released_at {
                    return Err(
                        "future() returned before any worker was freed".to_string()
                    );
                }
                for latch in &latches[1..] {
                    ctx.release_latch(latch);
                }
                handles.push(extra);
                value_all(&mut ctx.session, &handles).map_err(|e| e.to_string())?;
                Ok(())
            },
        },
        ConformanceCheck {
            id: "resolved-nonblocking",
            kind: CheckKind::Behavioral,
            min_capacity: 1,
            needs_live_relay: true,
            config: cfg_default,
            run: |ctx| {
                let h = ctx
                    .session
                    .future(
                        body("(begin (sleep_ms 250) 5)"),
                        &Env::new(),
                        FutureOpts::default(),
                    )
                    .map_err(|e| e.to_string())?;
                let t0 = Instant::now();
                let done = ctx.session.resolved(&h).map_err(|e| e.to_string())?;
                if t0.elapsed() > Duration::from_millis(150) {
                    return Err("resolved() blocked".to_string());
                }
                if done {
                    return Err("a 250ms task resolved instantly".to_string());
                }
                spin_resolved(ctx, &h)?;
                let v = ctx.session.value(&h).map_err(|e| e.to_string())?;
                if v != Value::Int(5) {
                    return Err(format!("wrong value {v:?}"));
                }
                Ok(())
            },
        },
        ConformanceCheck {
            id: "immediate-live-delivery",
            kind: CheckKind::Behavioral,
            min_capacity: 1,
            needs_live_relay: true,
            config: cfg_default,
            run: |ctx| {
                let gate = ctx.latch_path();
                let env = env_of(&[("gate", Value::Str(gate.clone()))]);
                let h = ctx
                    .session
                    .future(
                        body("(begin (progress \"live\") (await_file gate) 42)"),
                        &env,
                        FutureOpts::default(),
                    )
                    .map_err(|e| e.to_string())?;
                // the progress record must arrive while the future is still
                // held open by the latch
                let deadline = Instant::now() + Duration::from_secs(10);
                loop {
                    let done = ctx.session.resolved(&h).map_err(|e| e.to_string())?;
                    let live = ctx.sink_events().iter().any(|e| {
                        matches!(e, SinkEvent::Condition(r) if r.kind == RelayKind::Immediate)
                    });
                    if live {
                        if done {
                            return Err("immediate arrived only at resolution".to_string());
                        }
                        break;
                    }
                    if done {
                        return Err("future resolved before its immediate arrived".to_string());
                    }
                    if Instant::now() > deadline {
                        return Err("timed out waiting for the live immediate".to_string());
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                ctx.release_latch(&gate);
                let v = ctx.session.value(&h).map_err(|e| e.to_string())?;
                if v != Value::Int(42) {
                    return Err(format!("wrong value {v:?}"));
                }
                let immediates = ctx
                    .sink_events()
                    .iter()
                    .filter(|e| {
                        matches!(e, SinkEvent::Condition(r) if r.kind == RelayKind::Immediate)
                    })
                    .count();
                if immediates != 1 {
                    return Err(format!("immediate relayed {immediates} times"));
                }
                Ok(())
            },
        },
        ConformanceCheck {
            id: "either-fast-finisher-wins",
            kind: CheckKind::Behavioral,
            min_capacity: 2,
            needs_live_relay: false,
            config: cfg_default,
            run: |ctx| {
                let out = future_either(
                    &mut ctx.session,
                    vec![
                        body("(begin (sleep_ms 400) 1)"),
                        body("(begin (sleep_ms 20) 2)"),
                    ],
                    &Env::new(),
                )
                .map_err(|e| e.to_string())?;
                if out != Value::Int(2) {
                    return Err(format!("slow branch won: {out:?}"));
                }
                Ok(())
            },
        },
    ]
}
