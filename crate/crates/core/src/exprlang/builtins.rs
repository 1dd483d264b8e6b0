//! The builtin function registry. Registry names are never treated as
//! globals by the free-variable analysis, and user bindings cannot shadow
//! them.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::EvalError;
use crate::exprlang::eval::{apply_closure, EvalContext};
use crate::exprlang::value::{Env, NumVec, ResourceData, Value};
use crate::rng::{probit, RngCursor, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    VecOf,
    ListOf,
    Sum,
    Sort,
    Seq,
    Log,
    Lookup,
    Print,
    Message,
    Warning,
    Progress,
    Fail,
    SleepMs,
    NowMs,
    AwaitFile,
    Runif,
    Rnorm,
    MakeResource,
    HasNull,
    ParMap,
    NWorkers,
    MapChunk,
}

/// Name → builtin table. One standard instance serves the whole process.
pub struct Registry {
    table: BTreeMap<&'static str, Builtin>,
}

impl Registry {
    pub fn standard() -> &'static Registry {
        static STANDARD: OnceLock<Registry> = OnceLock::new();
        STANDARD.get_or_init(|| {
            use Builtin::*;
            let entries: &[(&'static str, Builtin)] = &[
                ("+", Add),
                ("-", Sub),
                ("*", Mul),
                ("/", Div),
                ("<", Lt),
                ("<=", Le),
                (">", Gt),
                (">=", Ge),
                ("==", Eq),
                ("!=", Ne),
                ("vec", VecOf),
                ("list", ListOf),
                ("sum", Sum),
                ("sort", Sort),
                ("seq", Seq),
                ("log", Log),
                ("get", Lookup),
                ("lookup", Lookup),
                ("print", Print),
                ("message", Message),
                ("warning", Warning),
                ("progress", Progress),
                ("error", Fail),
                ("sleep_ms", SleepMs),
                ("now_ms", NowMs),
                ("await_file", AwaitFile),
                ("runif", Runif),
                ("rnorm", Rnorm),
                ("make_resource", MakeResource),
                ("has_null", HasNull),
                ("par_map", ParMap),
                ("nworkers", NWorkers),
                ("map_chunk", MapChunk),
            ];
            Registry {
                table: entries.iter().copied().collect(),
            }
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.table.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<Builtin> {
        self.table.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.table.keys().copied()
    }
}

enum Num {
    I(i64),
    R(f64),
}

fn as_num(v: &Value, err_msg: &str) -> Result<Num, EvalError> {
    match v {
        Value::Int(i) => Ok(Num::I(*i)),
        Value::Real(r) => Ok(Num::R(*r)),
        _ => Err(EvalError::new(err_msg)),
    }
}

fn as_f64(v: &Value, err_msg: &str) -> Result<f64, EvalError> {
    match as_num(v, err_msg)? {
        Num::I(i) => Ok(i as f64),
        Num::R(r) => Ok(r),
    }
}

const OP_NUM_MSG: &str = "non-numeric argument to binary operator";
const MATH_NUM_MSG: &str = "non-numeric argument to mathematical function";

fn arity(name: &str, args: &[Value], expected: usize) -> Result<(), EvalError> {
    if args.len() != expected {
        return Err(EvalError::new(format!(
            "'{name}' expects {expected} argument(s), got {}",
            args.len()
        )));
    }
    Ok(())
}

fn fold_arith(
    name: &str,
    args: &[Value],
    int_op: fn(i64, i64) -> Option<i64>,
    real_op: fn(f64, f64) -> f64,
) -> Result<Value, EvalError> {
    if args.is_empty() {
        return Err(EvalError::new(format!("'{name}' expects at least 1 argument")));
    }
    let mut acc = as_num(&args[0], OP_NUM_MSG)?;
    for v in &args[1..] {
        let rhs = as_num(v, OP_NUM_MSG)?;
        acc = match (acc, rhs) {
            (Num::I(a), Num::I(b)) => Num::I(
                int_op(a, b).ok_or_else(|| EvalError::new("integer overflow"))?,
            ),
            (a, b) => {
                let (a, b) = (num_to_f64(a), num_to_f64(b));
                Num::R(real_op(a, b))
            }
        };
    }
    Ok(match acc {
        Num::I(i) => Value::Int(i),
        Num::R(r) => Value::Real(r),
    })
}

fn num_to_f64(n: Num) -> f64 {
    match n {
        Num::I(i) => i as f64,
        Num::R(r) => r,
    }
}

fn compare(name: &str, args: &[Value], cmp: fn(std::cmp::Ordering) -> bool) -> Result<Value, EvalError> {
    arity(name, args, 2)?;
    let ord = match (&args[0], &args[1]) {
        (Value::Str(a), Value::Str(b)) => a.cmp(b),
        (a, b) => {
            let a = as_f64(a, OP_NUM_MSG)?;
            let b = as_f64(b, OP_NUM_MSG)?;
            a.partial_cmp(&b)
                .ok_or_else(|| EvalError::new("comparison with NaN is undefined"))?
        }
    };
    Ok(Value::Bool(cmp(ord)))
}

fn concat_display(args: &[Value]) -> String {
    args.iter().map(|v| v.display_string()).collect()
}

fn build_vec(args: &[Value]) -> Result<Value, EvalError> {
    let mut any_real = false;
    for v in args {
        match v {
            Value::Int(_) => {}
            Value::Real(_) => any_real = true,
            _ => return Err(EvalError::new("vec elements must be numeric")),
        }
    }
    if any_real {
        let items: Vec<f64> = args
            .iter()
            .map(|v| match v {
                Value::Int(i) => *i as f64,
                Value::Real(r) => *r,
                _ => unreachable!(),
            })
            .collect();
        Ok(Value::Vec(NumVec::Real(items)))
    } else {
        let items: Vec<i64> = args
            .iter()
            .map(|v| match v {
                Value::Int(i) => *i,
                _ => unreachable!(),
            })
            .collect();
        Ok(Value::Vec(NumVec::Int(items)))
    }
}

fn sum_into(v: &Value, int_acc: &mut i64, real_acc: &mut f64, any_real: &mut bool) -> Result<(), EvalError> {
    match v {
        Value::Null => Ok(()),
        Value::Int(i) => {
            *int_acc = int_acc
                .checked_add(*i)
                .ok_or_else(|| EvalError::new("integer overflow"))?;
            Ok(())
        }
        Value::Real(r) => {
            *any_real = true;
            *real_acc += r;
            Ok(())
        }
        Value::Vec(NumVec::Int(items)) => {
            for i in items {
                *int_acc = int_acc
                    .checked_add(*i)
                    .ok_or_else(|| EvalError::new("integer overflow"))?;
            }
            Ok(())
        }
        Value::Vec(NumVec::Real(items)) => {
            *any_real = true;
            *real_acc += items.iter().sum::<f64>();
            Ok(())
        }
        Value::List(items) => {
            for item in items {
                sum_into(item, int_acc, real_acc, any_real)?;
            }
            Ok(())
        }
        _ => Err(EvalError::new("non-numeric argument to sum")),
    }
}

fn stream_from_value(v: &Value) -> Result<RngState, EvalError> {
    let words: Vec<u64> = match v {
        Value::Vec(NumVec::Int(items)) if items.len() == 6 => {
            items.iter().map(|&i| i as u64).collect()
        }
        _ => return Err(EvalError::new("rng stream must be a 6-word integer vector")),
    };
    RngState::from_words([words[0], words[1], words[2], words[3], words[4], words[5]])
        .map_err(EvalError::new)
}

pub(crate) fn apply(
    builtin: Builtin,
    name: &str,
    args: Vec<Value>,
    env: &mut Env,
    ctx: &mut EvalContext<'_, '_>,
) -> Result<Value, EvalError> {
    use Builtin::*;
    match builtin {
        Add => fold_arith(name, &args, i64::checked_add, |a, b| a + b),
        Mul => fold_arith(name, &args, i64::checked_mul, |a, b| a * b),
        Sub => {
            if args.len() == 1 {
                return match as_num(&args[0], OP_NUM_MSG)? {
                    Num::I(i) => i
                        .checked_neg()
                        .map(Value::Int)
                        .ok_or_else(|| EvalError::new("integer overflow")),
                    Num::R(r) => Ok(Value::Real(-r)),
                };
            }
            fold_arith(name, &args, i64::checked_sub, |a, b| a - b)
        }
        Div => {
            arity(name, &args, 2)?;
            let a = as_f64(&args[0], OP_NUM_MSG)?;
            let b = as_f64(&args[1], OP_NUM_MSG)?;
            Ok(Value::Real(a / b))
        }
        Lt => compare(name, &args, std::cmp::Ordering::is_lt),
        Le => compare(name, &args, std::cmp::Ordering::is_le),
        Gt => compare(name, &args, std::cmp::Ordering::is_gt),
        Ge => compare(name, &args, std::cmp::Ordering::is_ge),
        Eq => {
            arity(name, &args, 2)?;
            Ok(Value::Bool(values_equal(&args[0], &args[1])))
        }
        Ne => {
            arity(name, &args, 2)?;
            Ok(Value::Bool(!values_equal(&args[0], &args[1])))
        }
        VecOf => build_vec(&args),
        ListOf => Ok(Value::List(args)),
        Sum => {
            let (mut int_acc, mut real_acc, mut any_real) = (0i64, 0f64, false);
            for v in &args {
                sum_into(v, &mut int_acc, &mut real_acc, &mut any_real)?;
            }
            Ok(if any_real {
                Value::Real(real_acc + int_acc as f64)
            } else {
                Value::Int(int_acc)
            })
        }
        Sort => {
            arity(name, &args, 1)?;
            match &args[0] {
                Value::Vec(NumVec::Int(items)) => {
                    let mut sorted = items.clone();
                    sorted.sort_unstable();
                    Ok(Value::Vec(NumVec::Int(sorted)))
                }
                Value::Vec(NumVec::Real(items)) => {
                    let mut sorted = items.clone();
                    sorted.sort_unstable_by(f64::total_cmp);
                    Ok(Value::Vec(NumVec::Real(sorted)))
                }
                _ => Err(EvalError::new("sort expects a numeric vector")),
            }
        }
        Seq => {
            arity(name, &args, 2)?;
            let (a, b) = match (&args[0], &args[1]) {
                (Value::Int(a), Value::Int(b)) => (*a, *b),
                _ => return Err(EvalError::new("seq expects two integers")),
            };
            let items: Vec<i64> = if a <= b { (a..=b).collect() } else { Vec::new() };
            Ok(Value::Vec(NumVec::Int(items)))
        }
        Log => {
            arity(name, &args, 1)?;
            let x = as_f64(&args[0], MATH_NUM_MSG)?;
            Ok(Value::Real(x.ln()))
        }
        Lookup => {
            arity(name, &args, 1)?;
            let key = match &args[0] {
                Value::Str(s) => s,
                _ => return Err(EvalError::new("invalid first argument to lookup")),
            };
            env.lookup(key)
                .cloned()
                .ok_or_else(|| EvalError::new(format!("object '{key}' not found")))
        }
        Print => {
            let mut text = concat_display(&args);
            text.push('\n');
            ctx.capture.stdout(text);
            Ok(Value::Null)
        }
        Message => {
            ctx.capture.message(concat_display(&args));
            Ok(Value::Null)
        }
        Warning => {
            ctx.capture.warning(concat_display(&args));
            Ok(Value::Null)
        }
        Progress => {
            if args.is_empty() || args.len() > 2 {
                return Err(EvalError::new("progress expects 1 or 2 arguments"));
            }
            let payload = args[0].display_string();
            let data = args.get(1).cloned().unwrap_or(Value::Null);
            if data.find_resource().is_some() {
                return Err(EvalError::new("progress data must be exportable"));
            }
            ctx.capture.immediate("progress", payload, data);
            Ok(Value::Null)
        }
        Fail => Err(EvalError::new(concat_display(&args))),
        SleepMs => {
            arity(name, &args, 1)?;
            let ms = match &args[0] {
                Value::Int(i) if *i >= 0 => *i as u64,
                _ => return Err(EvalError::new("sleep_ms expects a non-negative integer")),
            };
            std::thread::sleep(std::time::Duration::from_millis(ms));
            Ok(Value::Null)
        }
        NowMs => {
            arity(name, &args, 0)?;
            let ms = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as i64)
                .unwrap_or(0);
            Ok(Value::Int(ms))
        }
        AwaitFile => {
            arity(name, &args, 1)?;
            let path = match &args[0] {
                Value::Str(s) => s.clone(),
                _ => return Err(EvalError::new("await_file expects a path string")),
            };
            let deadline = std::time::Instant::now() + std::time::Duration::from_secs(30);
            while !std::path::Path::new(&path).exists() {
                if std::time::Instant::now() > deadline {
                    return Err(EvalError::new(format!(
                        "await_file timed out waiting for {path}"
                    )));
                }
                std::thread::sleep(std::time::Duration::from_millis(2));
            }
            Ok(Value::Null)
        }
        Runif => {
            let n = draw_count(name, &args)?;
            let items: Vec<f64> = (0..n).map(|_| ctx.draw_uniform()).collect();
            Ok(Value::Vec(NumVec::Real(items)))
        }
        Rnorm => {
            let n = draw_count(name, &args)?;
            let items: Vec<f64> = (0..n).map(|_| probit(ctx.draw_uniform())).collect();
            Ok(Value::Vec(NumVec::Real(items)))
        }
        MakeResource => {
            if args.len() > 1 {
                return Err(EvalError::new("make_resource expects at most 1 argument"));
            }
            let tag = match args.first() {
                Some(Value::Str(s)) => s.clone(),
                Some(_) => return Err(EvalError::new("make_resource tag must be a string")),
                None => "resource".to_string(),
            };
            Ok(Value::Resource(ResourceData {
                session: ctx.context_id,
                tag,
            }))
        }
        HasNull => {
            arity(name, &args, 1)?;
            let found = match &args[0] {
                Value::Null => true,
                Value::List(items) => items.iter().any(|v| matches!(v, Value::Null)),
                _ => false,
            };
            Ok(Value::Bool(found))
        }
        ParMap => {
            arity(name, &args, 2)?;
            let mut iter = args.into_iter();
            let fun = iter.next().unwrap();
            let items = match iter.next().unwrap() {
                Value::List(items) => items,
                other => {
                    return Err(EvalError::new(format!(
                        "par_map expects a list, got {}",
                        other.type_name()
                    )))
                }
            };
            let Value::Closure(closure) = &fun else {
                return Err(EvalError::new("par_map expects a closure"));
            };
            if let Some(host) = ctx.host.take() {
                let result = host.par_map(&fun, &items, ctx.capture);
                ctx.host = Some(host);
                if let Some(values) = result? {
                    return Ok(Value::List(values));
                }
            }
            // no nesting plan installed: apply inline, sequentially
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                out.push(apply_closure(closure, vec![item], ctx)?);
            }
            Ok(Value::List(out))
        }
        NWorkers => {
            arity(name, &args, 0)?;
            let n = match ctx.host.as_mut() {
                Some(host) => host.available_workers(),
                None => 1,
            };
            Ok(Value::Int(n as i64))
        }
        MapChunk => {
            arity(name, &args, 3)?;
            let mut iter = args.into_iter();
            let fun = iter.next().unwrap();
            let items = match iter.next().unwrap() {
                Value::List(items) => items,
                _ => return Err(EvalError::new("map_chunk expects a list of elements")),
            };
            let streams = iter.next().unwrap();
            let closure = match fun {
                Value::Closure(c) => c,
                _ => return Err(EvalError::new("map_chunk expects a closure")),
            };
            let streams: Option<Vec<RngState>> = match streams {
                Value::Null => None,
                Value::List(stream_values) => {
                    if stream_values.len() != items.len() {
                        return Err(EvalError::new(
                            "map_chunk stream list must match the element count",
                        ));
                    }
                    Some(
                        stream_values
                            .iter()
                            .map(stream_from_value)
                            .collect::<Result<_, _>>()?,
                    )
                }
                _ => return Err(EvalError::new("map_chunk streams must be a list or null")),
            };
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.into_iter().enumerate() {
                if let Some(streams) = &streams {
                    ctx.set_stream(RngCursor::new(streams[i]));
                }
                out.push(apply_closure(&closure, vec![item], ctx)?);
            }
            Ok(Value::List(out))
        }
    }
}

/// Structural equality for `==`/`!=`; reals follow IEEE semantics.
fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Real(y)) | (Value::Real(y), Value::Int(x)) => *x as f64 == *y,
        _ => a == b,
    }
}

fn draw_count(name: &str, args: &[Value]) -> Result<usize, EvalError> {
    arity(name, args, 1)?;
    match &args[0] {
        Value::Int(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(EvalError::new(format!(
            "'{name}' expects a non-negative count"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_its_names() {
        let reg = Registry::standard();
        assert!(reg.contains("+"));
        assert!(reg.contains("lookup"));
        assert!(reg.contains("get"));
        assert!(!reg.contains("slow_fcn"));
        assert!(reg.names().count() >= 30);
    }
}
