//! The evaluator. Pure single-threaded; all side channels (captured output,
//! conditions, RNG draws, nested parallelism) go through [`EvalContext`].

use uuid::Uuid;

use crate::error::EvalError;
use crate::exprlang::ast::Expr;
use crate::exprlang::builtins::{self, Registry};
use crate::exprlang::value::{ClosureData, Env, Value};
use crate::relay::CaptureContext;
use crate::rng::{next_uniform, scratch_state, RngCursor};

/// Hook for nested parallelism: lets `par_map` and `nworkers` reach the plan
/// installed for this evaluation (the plan tail on a worker, or nothing).
pub trait ParallelHost {
    /// Map `fun` over `items` on the nested plan. `Ok(None)` means no nested
    /// plan is installed and the caller should apply the closure inline.
    fn par_map(
        &mut self,
        fun: &Value,
        items: &[Value],
        capture: &mut CaptureContext<'_>,
    ) -> Result<Option<Vec<Value>>, EvalError>;

    /// Workers the next nesting level would run with.
    fn available_workers(&mut self) -> usize;
}

/// Everything an evaluation may touch besides the environment.
pub struct EvalContext<'a, 'c> {
    pub registry: &'a Registry,
    pub capture: &'a mut CaptureContext<'c>,
    /// Identity of the evaluating context, stamped into resources.
    pub context_id: Uuid,
    /// The future's dedicated stream, present iff the future asked for
    /// reproducible randomness.
    pub rng: Option<RngCursor>,
    scratch: Option<RngCursor>,
    pub rng_used: bool,
    /// Set when draws came from the ad-hoc scratch generator — the misuse
    /// signal.
    pub scratch_used: bool,
    pub host: Option<&'a mut dyn ParallelHost>,
}

impl<'a, 'c> EvalContext<'a, 'c> {
    pub fn new(
        registry: &'a Registry,
        capture: &'a mut CaptureContext<'c>,
        rng: Option<RngCursor>,
        host: Option<&'a mut dyn ParallelHost>,
    ) -> Self {
        EvalContext {
            registry,
            capture,
            context_id: Uuid::new_v4(),
            rng,
            scratch: None,
            rng_used: false,
            scratch_used: false,
            host,
        }
    }

    pub fn draw_uniform(&mut self) -> f64 {
        self.rng_used = true;
        match self.rng.as_mut() {
            Some(cursor) => next_uniform(cursor),
            None => {
                self.scratch_used = true;
                let cursor = self
                    .scratch
                    .get_or_insert_with(|| RngCursor::new(scratch_state()));
                next_uniform(cursor)
            }
        }
    }

    /// Install a specific stream cursor (used for per-element streams in
    /// chunked maps).
    pub fn set_stream(&mut self, cursor: RngCursor) {
        self.rng = Some(cursor);
    }
}

fn unbound(name: &str) -> EvalError {
    EvalError::new(format!("object '{name}' not found"))
}

/// Evaluate an expression. Deterministic for a fixed environment and RNG
/// state; capture records are part of that determinism.
pub fn eval(expr: &Expr, env: &mut Env, ctx: &mut EvalContext<'_, '_>) -> Result<Value, EvalError> {
    match expr {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Var(name) => env.lookup(name).cloned().ok_or_else(|| unbound(name)),
        Expr::Call(fn_name, args) => eval_call(fn_name, args, env, ctx),
        Expr::Let(bindings, body) => {
            env.push_frame();
            let result = (|| {
                for (name, value_expr) in bindings {
                    let v = eval(value_expr, env, ctx)?;
                    env.define(name.clone(), v);
                }
                eval(body, env, ctx)
            })();
            env.pop_frame();
            result
        }
        Expr::Lambda(params, body) => Ok(Value::Closure(Box::new(ClosureData {
            params: params.clone(),
            body: (**body).clone(),
            env: env.flatten(),
        }))),
        Expr::If(cond, then, els) => match eval(cond, env, ctx)? {
            Value::Bool(true) => eval(then, env, ctx),
            Value::Bool(false) => eval(els, env, ctx),
            other => Err(EvalError::new(format!(
                "if condition must be a bool, got {}",
                other.type_name()
            ))),
        },
        Expr::Begin(steps) => {
            env.push_frame();
            let result = (|| {
                let mut last = Value::Null;
                for step in steps {
                    last = eval(step, env, ctx)?;
                }
                Ok(last)
            })();
            env.pop_frame();
            result
        }
        Expr::Assign(name, value_expr) => {
            let v = eval(value_expr, env, ctx)?;
            env.define(name.clone(), v.clone());
            Ok(v)
        }
    }
}

fn eval_call(
    fn_name: &str,
    args: &[Expr],
    env: &mut Env,
    ctx: &mut EvalContext<'_, '_>,
) -> Result<Value, EvalError> {
    if let Some(builtin) = ctx.registry.get(fn_name) {
        let mut values = Vec::with_capacity(args.len());
        for a in args {
            values.push(eval(a, env, ctx)?);
        }
        return builtins::apply(builtin, fn_name, values, env, ctx);
    }
    // not a builtin: the head must resolve to a closure
    let callee = env.lookup(fn_name).cloned().ok_or_else(|| unbound(fn_name))?;
    let closure = match callee {
        Value::Closure(c) => c,
        other => {
            return Err(EvalError::new(format!(
                "attempt to apply non-function '{fn_name}' ({})",
                other.type_name()
            )))
        }
    };
    let mut values = Vec::with_capacity(args.len());
    for a in args {
        values.push(eval(a, env, ctx)?);
    }
    apply_closure(&closure, values, ctx)
}

/// Call a closure value: its body sees the captured environment plus the
/// parameters, nothing from the caller's scope.
pub fn apply_closure(
    closure: &ClosureData,
    args: Vec<Value>,
    ctx: &mut EvalContext<'_, '_>,
) -> Result<Value, EvalError> {
    if args.len() != closure.params.len() {
        return Err(EvalError::new(format!(
            "closure expects {} argument(s), got {}",
            closure.params.len(),
            args.len()
        )));
    }
    let mut env = Env::from_map(closure.env.clone());
    env.push_frame();
    for (param, arg) in closure.params.iter().zip(args) {
        env.define(param.clone(), arg);
    }
    eval(&closure.body, &mut env, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;

    fn run(src: &str, env: &mut Env) -> Result<Value, EvalError> {
        let expr = parse(src).unwrap();
        let mut capture = CaptureContext::new(true, None);
        let mut ctx = EvalContext::new(Registry::standard(), &mut capture, None, None);
        eval(&expr, env, &mut ctx)
    }

    fn run_clean(src: &str) -> Result<Value, EvalError> {
        run(src, &mut Env::new())
    }

    #[test]
    fn arithmetic_tower() {
        assert_eq!(run_clean("(+ 1 2)").unwrap(), Value::Int(3));
        assert_eq!(run_clean("(* 2 3 4)").unwrap(), Value::Int(24));
        assert_eq!(run_clean("(+ 1 2.5)").unwrap(), Value::Real(3.5));
        // division always yields a real
        assert_eq!(run_clean("(/ 6 3)").unwrap(), Value::Real(2.0));
        assert_eq!(run_clean("(- 5)").unwrap(), Value::Int(-5));
    }

    #[test]
    fn unbound_variable_message_is_exact() {
        let e = run_clean("(+ x 1)").unwrap_err();
        assert_eq!(e.message, "object 'x' not found");
    }

    #[test]
    fn let_scoping_is_sequential() {
        assert_eq!(run_clean("(let ((y 2)) (* y y))").unwrap(), Value::Int(4));
        assert_eq!(
            run_clean("(let ((a 1) (b (+ a 1))) (+ a b))").unwrap(),
            Value::Int(3)
        );
    }

    #[test]
    fn begin_returns_last_and_scopes_assigns() {
        let mut env = Env::new();
        env.define("x", Value::Int(10));
        assert_eq!(run("(begin (set! x 1) (+ x 1))", &mut env).unwrap(), Value::Int(2));
        // the assignment happened in the begin's own frame
        assert_eq!(env.lookup("x"), Some(&Value::Int(10)));
    }

    #[test]
    fn if_requires_bool() {
        assert_eq!(run_clean("(if true 1 2)").unwrap(), Value::Int(1));
        assert_eq!(run_clean("(if (< 2 1) 1 2)").unwrap(), Value::Int(2));
        assert!(run_clean("(if 1 1 2)").is_err());
    }

    #[test]
    fn closures_capture_definition_env_by_value() {
        let mut env = Env::new();
        env.define("m", Value::Int(6));
        let f = run("(lambda (a) (* a m))", &mut env).unwrap();
        // mutate after capture: the closure must not see it
        env.define("m", Value::Int(100));
        env.define("f", f);
        assert_eq!(run("(f 7)", &mut env).unwrap(), Value::Int(42));
    }

    #[test]
    fn closure_does_not_see_caller_scope() {
        let mut env = Env::new();
        let f = run_clean("(lambda (a) (+ a q))").unwrap();
        env.define("f", f);
        env.define("q", Value::Int(1));
        let e = run("(f 1)", &mut env).unwrap_err();
        assert_eq!(e.message, "object 'q' not found");
    }

    #[test]
    fn dynamic_lookup_reads_current_env() {
        let mut env = Env::new();
        env.define("k", Value::Int(42));
        assert_eq!(run("(lookup \"k\")", &mut env).unwrap(), Value::Int(42));
        let e = run_clean("(lookup \"k\")").unwrap_err();
        assert_eq!(e.message, "object 'k' not found");
    }

    #[test]
    fn log_error_message_is_exact() {
        let mut env = Env::new();
        env.define("x", Value::Str("24".to_string()));
        let e = run("(log x)", &mut env).unwrap_err();
        assert_eq!(e.message, "non-numeric argument to mathematical function");
    }

    #[test]
    fn sum_skips_nulls() {
        let mut env = Env::new();
        let mut items: Vec<Value> = (1..=10).map(Value::Int).collect();
        items.push(Value::Null);
        env.define("x", Value::List(items));
        assert_eq!(run("(sum x)", &mut env).unwrap(), Value::Int(55));
        assert_eq!(run_clean("(sum (vec 1 2 3))").unwrap(), Value::Int(6));
        assert_eq!(run_clean("(sum (seq 1 10))").unwrap(), Value::Int(55));
    }

    #[test]
    fn integer_overflow_is_an_error() {
        let e = run_clean(&format!("(+ {} 1)", i64::MAX)).unwrap_err();
        assert!(e.message.contains("overflow"));
    }

    #[test]
    fn division_by_zero_follows_ieee() {
        assert_eq!(run_clean("(/ 1 0)").unwrap(), Value::Real(f64::INFINITY));
    }

    #[test]
    fn error_builtin_carries_message() {
        let e = run_clean("(error \"boom\")").unwrap_err();
        assert_eq!(e.message, "boom");
    }

    #[test]
    fn print_and_conditions_reach_capture() {
        let expr = parse("(begin (print \"a\") (message \"b\" 1) (warning \"c\") null)").unwrap();
        let mut capture = CaptureContext::new(true, None);
        let mut ctx = EvalContext::new(Registry::standard(), &mut capture, None, None);
        let v = eval(&expr, &mut Env::new(), &mut ctx).unwrap();
        assert_eq!(v, Value::Null);
        let records = capture.into_records();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].payload, "a\n");
        assert_eq!(records[1].payload, "b1");
        assert_eq!(records[2].payload, "c");
    }

    #[test]
    fn seeded_draws_are_deterministic_and_flagged() {
        use crate::rng::{stream_for, RngCursor};
        let expr = parse("(runif 3)").unwrap();
        let draw = |ordinal| {
            let mut capture = CaptureContext::new(true, None);
            let mut ctx = EvalContext::new(
                Registry::standard(),
                &mut capture,
                Some(RngCursor::new(stream_for(5, ordinal))),
                None,
            );
            let v = eval(&expr, &mut Env::new(), &mut ctx).unwrap();
            assert!(ctx.rng_used);
            assert!(!ctx.scratch_used);
            v
        };
        assert_eq!(draw(0), draw(0));
        assert_ne!(draw(0), draw(1));
    }

    #[test]
    fn unseeded_draws_use_scratch_and_flag_misuse() {
        let expr = parse("(rnorm 2)").unwrap();
        let mut capture = CaptureContext::new(true, None);
        let mut ctx = EvalContext::new(Registry::standard(), &mut capture, None, None);
        eval(&expr, &mut Env::new(), &mut ctx).unwrap();
        assert!(ctx.rng_used);
        assert!(ctx.scratch_used);
    }

    #[test]
    fn par_map_falls_back_to_inline_application() {
        let mut env = Env::new();
        let f = run_clean("(lambda (a) (* a a))").unwrap();
        env.define("f", f);
        env.define(
            "xs",
            Value::List(vec![Value::Int(1), Value::Int(2), Value::Int(3)]),
        );
        assert_eq!(
            run("(par_map f xs)", &mut env).unwrap(),
            Value::List(vec![Value::Int(1), Value::Int(4), Value::Int(9)])
        );
        assert_eq!(run_clean("(nworkers)").unwrap(), Value::Int(1));
    }

    #[test]
    fn make_resource_is_session_tagged() {
        let v = run_clean("(make_resource \"conn\")").unwrap();
        match v {
            Value::Resource(r) => assert_eq!(r.tag, "conn"),
            other => panic!("expected resource, got {other:?}"),
        }
    }

    #[test]
    fn capture_sufficiency_for_static_bodies() {
        use crate::exprlang::analyze::free_vars;
        // evaluating with only the free vars captured succeeds whenever the
        // full environment would
        let mut full = Env::new();
        full.define("a", Value::Int(2));
        full.define("b", Value::Int(3));
        full.define("unrelated", Value::Int(9));
        for src in ["(+ a b)", "(let ((t a)) (* t b))", "(begin (set! q a) (+ q b))"] {
            let expr = parse(src).unwrap();
            let frees = free_vars(&expr, Registry::standard());
            let mut reduced = Env::new();
            for name in &frees {
                reduced.define(name.clone(), full.lookup(name).unwrap().clone());
            }
            let full_result = run(src, &mut full.clone()).unwrap();
            let reduced_result = run(src, &mut reduced).unwrap();
            assert_eq!(full_result, reduced_result, "{src}");
        }
    }
}
