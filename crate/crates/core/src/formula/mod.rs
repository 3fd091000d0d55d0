//! The formula language: values, syntax, static typing and evaluation.
//!
//! The language is expression-only and case sensitive. It computes over
//! booleans, 64-bit integers, double-precision reals, vectors, matrices
//! and function references, with componentwise broadcasting, matrix
//! algebra (`'`, `inv`, `*`), a 3-vector `cross`, and composition of
//! functions by passing one function to another. `delta(t - c)` marks a
//! Dirac impulse; ordinary evaluation treats it as zero while the
//! dynamics layer consumes its jump semantics via [`extract_delta_terms`].

mod ast;
mod delta;
mod eval;
mod parse;
mod types;
mod value;

pub use ast::{BinaryOp, Callee, Expr, UnaryOp};
pub use delta::{extract_delta_terms, Impulse};
pub use eval::{apply_function, eval};
pub use parse::parse;
pub use types::{infer, TypeTag};
pub use value::{Builtin, FunctionRef, FunctionRule, Matrix, Value, BUILTINS, PIVOT_TOLERANCE};

use std::collections::HashMap;

/// Errors raised by parsing, typing or evaluating formulas.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormulaError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("{0}")]
    Shape(String),
    #[error("malformed delta placement: {0}")]
    MalformedDelta(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("singular matrix")]
    SingularMatrix,
    #[error("integer overflow")]
    IntegerOverflow,
    #[error("non-finite result")]
    NonFinite,
}

impl FormulaError {
    /// True for errors that can only surface while crunching numbers, as
    /// opposed to structural problems a static check could catch.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            FormulaError::DivisionByZero
                | FormulaError::SingularMatrix
                | FormulaError::IntegerOverflow
                | FormulaError::NonFinite
        )
    }
}

/// Variable and function bindings for evaluation. Lookups are case
/// sensitive; the two namespaces are distinct but a variable holding a
/// function value is callable, and a bound function can be read back as
/// a value.
#[derive(Debug, Clone, Default)]
pub struct Env {
    vars: HashMap<String, Value>,
    funcs: HashMap<String, FunctionRef>,
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        self.vars.insert(name.into(), value);
    }

    pub fn set_real(&mut self, name: impl Into<String>, value: f64) {
        self.set(name, Value::Real(value));
    }

    pub fn set_function(&mut self, name: impl Into<String>, f: FunctionRef) {
        self.funcs.insert(name.into(), f);
    }

    pub fn clone_with(&self, name: impl Into<String>, value: Value) -> Env {
        let mut e = self.clone();
        e.set(name, value);
        e
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.vars.get(name)
    }

    /// Resolves a variable reference; bound functions surface as
    /// function values so they can be passed around and composed.
    pub fn lookup(&self, name: &str) -> Option<Value> {
        if let Some(v) = self.vars.get(name) {
            return Some(v.clone());
        }
        self.funcs.get(name).map(|f| Value::Function(f.clone()))
    }

    /// Resolves a callee name against functions first, then against
    /// variables holding function values.
    pub fn function(&self, name: &str) -> Option<FunctionRef> {
        if let Some(f) = self.funcs.get(name) {
            return Some(f.clone());
        }
        match self.vars.get(name) {
            Some(Value::Function(f)) => Some(f.clone()),
            _ => None,
        }
    }

    /// Type tags of every binding, for [`infer`].
    pub fn type_map(&self) -> HashMap<String, TypeTag> {
        let mut map: HashMap<String, TypeTag> =
            self.vars.iter().map(|(n, v)| (n.clone(), TypeTag::of(v))).collect();
        for (n, f) in &self.funcs {
            map.entry(n.clone()).or_insert(TypeTag::Function(f.arity()));
        }
        map
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str()).chain(self.funcs.keys().map(|s| s.as_str()))
    }
}
