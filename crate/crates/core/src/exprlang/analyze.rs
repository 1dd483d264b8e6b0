//! Free-variable analysis: which names must be captured for an expression to
//! evaluate elsewhere.
//!
//! The walk is optimistic: a name assigned in only one branch of an `if` is
//! still reported as a global, so false positives are possible but false
//! negatives are not (short of dynamic `lookup`, which no static analysis can
//! see). Registry builtins are never globals.

use std::collections::HashSet;

use crate::exprlang::ast::Expr;
use crate::exprlang::builtins::Registry;

/// Ordered set of free identifiers, in first-reference order of a
/// depth-first, left-to-right walk.
pub fn free_vars(expr: &Expr, registry: &Registry) -> Vec<String> {
    let mut walker = Walker {
        registry,
        scopes: Vec::new(),
        seen: HashSet::new(),
        out: Vec::new(),
    };
    walker.walk(expr);
    walker.out
}

struct Walker<'a> {
    registry: &'a Registry,
    scopes: Vec<HashSet<String>>,
    seen: HashSet<String>,
    out: Vec<String>,
}

impl Walker<'_> {
    fn bound(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.contains(name))
    }

    fn reference(&mut self, name: &str) {
        if self.bound(name) || self.registry.contains(name) {
            return;
        }
        if self.seen.insert(name.to_string()) {
            self.out.push(name.to_string());
        }
    }

    fn walk(&mut self, expr: &Expr) {
        match expr {
            Expr::Literal(_) => {}
            Expr::Var(name) => self.reference(name),
            Expr::Call(fn_name, args) => {
                self.reference(fn_name);
                for a in args {
                    self.walk(a);
                }
            }
            Expr::Let(bindings, body) => {
                self.scopes.push(HashSet::new());
                for (name, value) in bindings {
                    // a binding's value sees only the bindings before it
                    self.walk(value);
                    self.scopes.last_mut().unwrap().insert(name.clone());
                }
                self.walk(body);
                self.scopes.pop();
            }
            Expr::Lambda(params, body) => {
                self.scopes.push(params.iter().cloned().collect());
                self.walk(body);
                self.scopes.pop();
            }
            Expr::If(c, t, e) => {
                self.walk(c);
                self.walk(t);
                self.walk(e);
            }
            Expr::Begin(steps) => {
                self.scopes.push(HashSet::new());
                for step in steps {
                    if let Expr::Assign(name, value) = step {
                        // an unconditional assign binds the name for the
                        // steps that follow in this begin
                        self.walk(value);
                        self.scopes.last_mut().unwrap().insert(name.clone());
                    } else {
                        self.walk(step);
                    }
                }
                self.scopes.pop();
            }
            Expr::Assign(_, value) => {
                // the target is written, not read; conditional assigns do
                // not bind anything beyond themselves
                self.walk(value);
            }
        }
    }
}
