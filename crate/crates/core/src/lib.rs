//! A unified futures framework for parallel and distributed task execution.
//!
//! Three primitives — create, value, resolved — over pluggable execution
//! backends (inline sequential, local process pool, TCP cluster), with
//! automatic capture of a task's free variables, ordered relay of output and
//! diagnostic conditions, reproducible parallel RNG streams, and protection
//! against accidental nested parallelism. A conformance kit certifies that
//! any backend reproduces sequential semantics exactly.
//!
//! ```
//! use fw_core::exprlang::{parse, Env, Value};
//! use fw_core::session::{FutureOpts, Session, SessionConfig};
//!
//! let mut session = Session::new(SessionConfig::default()).unwrap();
//! let mut env = Env::new();
//! env.define("x", Value::Int(1));
//! let f = session.future(parse("(* x 10)").unwrap(), &env, FutureOpts::default()).unwrap();
//! env.define("x", Value::Int(2)); // too late: captured by value
//! assert_eq!(session.value(&f).unwrap(), Value::Int(10));
//! ```

pub mod backend;
pub mod backends;
pub mod conformance;
pub mod error;
pub mod exprlang;
pub mod host;
pub mod mapreduce;
pub mod protocol;
pub mod relay;
pub mod rng;
pub mod session;
pub mod task;
pub mod worker;

pub use backend::{available_workers, Backend, BackendSpec, Plan, Workers};
pub use uuid::Uuid;
pub use error::{CreateError, EvalError, FutureError, SyntaxError, ValueError};
pub use exprlang::{parse, Env, Expr, Value};
pub use mapreduce::{future_either, future_map, value_all, MapFn, MapOpts};
pub use relay::{RelayKind, RelayRecord, RelaySink};
pub use session::{FutureHandle, FutureOpts, FutureState, Session, SessionConfig};
pub use task::{FutureOutcome, OutcomeKind, RngMisusePolicy, TaskSpec};
