//! Runtime values, environments, and the tagged-JSON wire encoding.
//!
//! Reals travel as big-endian hex of their IEEE-754 bits so that every
//! backend reproduces results bit-for-bit. `Resource` values are bound to the
//! session that created them and refuse to serialize by contract.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::{json, Map as JsonMap, Value as Json};
use uuid::Uuid;

use crate::error::EvalError;
use crate::exprlang::ast::Expr;

/// A homogeneous numeric vector.
#[derive(Debug, Clone, PartialEq)]
pub enum NumVec {
    Int(Vec<i64>),
    Real(Vec<f64>),
}

impl NumVec {
    pub fn len(&self) -> usize {
        match self {
            NumVec::Int(v) => v.len(),
            NumVec::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A lambda together with its captured environment.
///
/// The environment is a flat map: closures capture by value at the moment the
/// lambda is evaluated, innermost bindings winning.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureData {
    pub params: Vec<String>,
    pub body: Expr,
    pub env: BTreeMap<String, Value>,
}

/// An opaque handle tied to the session in which it was created. The analog
/// of a connection or external pointer: never exportable.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceData {
    pub session: Uuid,
    pub tag: String,
}

/// A runtime value of the task expression language.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
    Vec(NumVec),
    List(Vec<Value>),
    Closure(Box<ClosureData>),
    Resource(ResourceData),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Str(_) => "str",
            Value::Vec(_) => "vec",
            Value::List(_) => "list",
            Value::Closure(_) => "closure",
            Value::Resource(_) => "resource",
        }
    }

    /// Rendering used by `print`, `message`, and the CLI: strings unquoted,
    /// reals in shortest round-trip form.
    pub fn display_string(&self) -> String {
        match self {
            Value::Null => "null".to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Real(r) => format_real(*r),
            Value::Str(s) => s.clone(),
            Value::Vec(NumVec::Int(v)) => {
                let items: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                format!("[{}]", items.join(", "))
            }
            Value::Vec(NumVec::Real(v)) => {
                let items: Vec<String> = v.iter().map(|r| format_real(*r)).collect();
                format!("[{}]", items.join(", "))
            }
            Value::List(items) => {
                let parts: Vec<String> = items.iter().map(|v| v.display_string()).collect();
                format!("[{}]", parts.join(", "))
            }
            Value::Closure(c) => format!("<closure/{}>", c.params.len()),
            Value::Resource(r) => format!("<resource {} ({})>", r.tag, r.session),
        }
    }

    /// Deep scan for a `Resource` anywhere inside this value. Returns the
    /// path fragment of the first offender, if any.
    pub fn find_resource(&self) -> Option<String> {
        match self {
            Value::Resource(r) => Some(format!("<resource {}>", r.tag)),
            Value::List(items) => items.iter().find_map(|v| v.find_resource()),
            Value::Closure(c) => c.env.values().find_map(|v| v.find_resource()),
            _ => None,
        }
    }
}

/// Real formatting: shortest round-trip decimal, `inf`/`nan` spelled so the
/// parser can read them back.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "+inf" } else { "-inf" }.to_string();
    }
    let s = format!("{x}");
    if s.contains('.') || s.contains('e') || s.contains('E') {
        s
    } else {
        format!("{s}.0")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_string())
    }
}

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

/// A chain of binding frames, innermost last. Lookup walks outward; an absent
/// name is an error at the caller, never a silent `Null`.
#[derive(Debug, Clone, Default)]
pub struct Env {
    frames: Vec<BTreeMap<String, Value>>,
}

impl Env {
    pub fn new() -> Self {
        Env {
            frames: vec![BTreeMap::new()],
        }
    }

    pub fn from_map(map: BTreeMap<String, Value>) -> Self {
        Env { frames: vec![map] }
    }

    pub fn lookup(&self, name: &str) -> Option<&Value> {
        self.frames.iter().rev().find_map(|f| f.get(name))
    }

    /// Bind in the innermost frame, creating or overwriting.
    pub fn define(&mut self, name: impl Into<String>, value: Value) {
        self.frames
            .last_mut()
            .expect("env has at least one frame")
            .insert(name.into(), value);
    }

    pub fn push_frame(&mut self) {
        self.frames.push(BTreeMap::new());
    }

    pub fn pop_frame(&mut self) {
        debug_assert!(self.frames.len() > 1, "cannot pop the root frame");
        self.frames.pop();
    }

    /// Flatten to a single map, innermost bindings winning. This is the
    /// by-value capture used for closures and task environments.
    pub fn flatten(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        for frame in &self.frames {
            for (k, v) in frame {
                out.insert(k.clone(), v.clone());
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Wire encoding
// ---------------------------------------------------------------------------

/// Encode an `f64` as big-endian hex of its IEEE-754 bits.
pub fn real_to_hex(x: f64) -> String {
    format!("0x{:016X}", x.to_bits())
}

/// Decode the hex form produced by [`real_to_hex`].
pub fn real_from_hex(s: &str) -> Result<f64, String> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or_else(|| format!("real hex literal missing 0x prefix: {s:?}"))?;
    let bits = u64::from_str_radix(digits, 16).map_err(|e| format!("bad real hex {s:?}: {e}"))?;
    Ok(f64::from_bits(bits))
}

/// Serialize a value to its tagged JSON wire form.
///
/// Fails on `Resource`: those are non-exportable by contract.
pub fn value_to_json(value: &Value) -> Result<Json, EvalError> {
    Ok(match value {
        Value::Null => json!({"t": "null"}),
        Value::Bool(b) => json!({"t": "bool", "v": b}),
        Value::Int(i) => json!({"t": "int", "v": i}),
        Value::Real(r) => json!({"t": "real", "v": real_to_hex(*r)}),
        Value::Str(s) => json!({"t": "str", "v": s}),
        Value::Vec(NumVec::Int(v)) => json!({"t": "vec", "k": "int", "v": v}),
        Value::Vec(NumVec::Real(v)) => {
            let hex: Vec<String> = v.iter().map(|r| real_to_hex(*r)).collect();
            json!({"t": "vec", "k": "real", "v": hex})
        }
        Value::List(items) => {
            let encoded: Result<Vec<Json>, EvalError> = items.iter().map(value_to_json).collect();
            json!({"t": "list", "v": encoded?})
        }
        Value::Closure(c) => {
            let mut env = JsonMap::new();
            for (k, v) in &c.env {
                env.insert(k.clone(), value_to_json(v)?);
            }
            json!({
                "t": "closure",
                "params": c.params,
                "body": c.body.to_string(),
                "env": env,
            })
        }
        Value::Resource(r) => {
            return Err(EvalError::new(format!(
                "non-exportable value: <resource {}> is bound to session {}",
                r.tag, r.session
            )))
        }
    })
}

/// Decode the tagged JSON wire form back into a value.
pub fn value_from_json(json: &Json) -> Result<Value, String> {
    let obj = json.as_object().ok_or("value JSON must be an object")?;
    let tag = obj
        .get("t")
        .and_then(Json::as_str)
        .ok_or("value JSON missing tag 't'")?;
    match tag {
        "null" => Ok(Value::Null),
        "bool" => Ok(Value::Bool(
            obj.get("v").and_then(Json::as_bool).ok_or("bool wants v")?,
        )),
        "int" => Ok(Value::Int(
            obj.get("v").and_then(Json::as_i64).ok_or("int wants v")?,
        )),
        "real" => {
            let hex = obj.get("v").and_then(Json::as_str).ok_or("real wants v")?;
            Ok(Value::Real(real_from_hex(hex)?))
        }
        "str" => Ok(Value::Str(
            obj.get("v")
                .and_then(Json::as_str)
                .ok_or("str wants v")?
                .to_string(),
        )),
        "vec" => {
            let kind = obj.get("k").and_then(Json::as_str).ok_or("vec wants k")?;
            let arr = obj.get("v").and_then(Json::as_array).ok_or("vec wants v")?;
            match kind {
                "int" => {
                    let items: Result<Vec<i64>, String> = arr
                        .iter()
                        .map(|j| j.as_i64().ok_or_else(|| "vec int element".to_string()))
                        .collect();
                    Ok(Value::Vec(NumVec::Int(items?)))
                }
                "real" => {
                    let items: Result<Vec<f64>, String> = arr
                        .iter()
                        .map(|j| {
                            j.as_str()
                                .ok_or_else(|| "vec real element must be hex".to_string())
                                .and_then(real_from_hex)
                        })
                        .collect();
                    Ok(Value::Vec(NumVec::Real(items?)))
                }
                other => Err(format!("unknown vec kind {other:?}")),
            }
        }
        "list" => {
            let arr = obj
                .get("v")
                .and_then(Json::as_array)
                .ok_or("list wants v")?;
            let items: Result<Vec<Value>, String> = arr.iter().map(value_from_json).collect();
            Ok(Value::List(items?))
        }
        "closure" => {
            let params: Vec<String> = obj
                .get("params")
                .and_then(Json::as_array)
                .ok_or("closure wants params")?
                .iter()
                .map(|j| {
                    j.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| "closure param".to_string())
                })
                .collect::<Result<_, _>>()?;
            let body_src = obj
                .get("body")
                .and_then(Json::as_str)
                .ok_or("closure wants body")?;
            let body = crate::exprlang::parse(body_src)
                .map_err(|e| format!("closure body failed to reparse: {e}"))?;
            let env_obj = obj
                .get("env")
                .and_then(Json::as_object)
                .ok_or("closure wants env")?;
            let mut env = BTreeMap::new();
            for (k, v) in env_obj {
                env.insert(k.clone(), value_from_json(v)?);
            }
            Ok(Value::Closure(Box::new(ClosureData { params, body, env })))
        }
        other => Err(format!("unknown value tag {other:?}")),
    }
}

/// Bit-level equality: reals compare by their IEEE-754 bits (so NaN == NaN
/// and -0.0 != 0.0), everything else structurally.
pub fn bits_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Real(x), Value::Real(y)) => x.to_bits() == y.to_bits(),
        (Value::Vec(NumVec::Real(x)), Value::Vec(NumVec::Real(y))) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
        }
        (Value::List(x), Value::List(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| bits_equal(p, q))
        }
        (Value::Closure(x), Value::Closure(y)) => {
            x.params == y.params
                && x.body == y.body
                && x.env.len() == y.env.len()
                && x.env
                    .iter()
                    .zip(&y.env)
                    .all(|((ka, va), (kb, vb))| ka == kb && bits_equal(va, vb))
        }
        _ => a == b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_hex_round_trip_extremes() {
        for x in [
            0.0,
            -0.0,
            1.0,
            f64::MIN_POSITIVE,
            f64::MAX,
            f64::NAN,
            f64::INFINITY,
            f64::NEG_INFINITY,
            5e-324,
        ] {
            let hex = real_to_hex(x);
            let back = real_from_hex(&hex).unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "hex {hex}");
        }
        assert_eq!(real_to_hex(1.0), "0x3FF0000000000000");
        assert_eq!(real_to_hex(-0.5), "0xBFE0000000000000");
    }

    #[test]
    fn resource_refuses_to_serialize() {
        let v = Value::Resource(ResourceData {
            session: Uuid::nil(),
            tag: "file".to_string(),
        });
        assert!(value_to_json(&v).is_err());
        let nested = Value::List(vec![Value::Int(1), v]);
        assert!(value_to_json(&nested).is_err());
    }

    #[test]
    fn env_lookup_innermost_first() {
        let mut env = Env::new();
        env.define("x", Value::Int(1));
        env.push_frame();
        env.define("x", Value::Int(2));
        assert_eq!(env.lookup("x"), Some(&Value::Int(2)));
        env.pop_frame();
        assert_eq!(env.lookup("x"), Some(&Value::Int(1)));
        assert_eq!(env.lookup("missing"), None);
    }

    #[test]
    fn flatten_prefers_inner() {
        let mut env = Env::new();
        env.define("a", Value::Int(1));
        env.push_frame();
        env.define("a", Value::Int(2));
        env.define("b", Value::Int(3));
        let flat = env.flatten();
        assert_eq!(flat["a"], Value::Int(2));
        assert_eq!(flat["b"], Value::Int(3));
    }
}
