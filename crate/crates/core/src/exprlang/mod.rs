//! A minimal expression language for future bodies: S-expression parser,
//! free-variable analyzer, and evaluator with a builtin function registry.

pub mod analyze;
pub mod ast;
pub mod builtins;
pub mod eval;
pub mod parse;
pub mod value;

pub use analyze::free_vars;
pub use ast::Expr;
pub use builtins::Registry;
pub use eval::{apply_closure, eval, EvalContext, ParallelHost};
pub use parse::parse;
pub use value::{Env, NumVec, Value};
