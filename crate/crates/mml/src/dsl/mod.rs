//! Scripting front end: an R-flavored matrix language with first-class
//! functions, namespaced imports of the bundled layer and optimizer library,
//! 1-based inclusive slicing, and `%*%` for matrix product.
//!
//! The pipeline is tokenize -> parse -> resolve -> interpret. Resolution
//! binds `source(...) as alias` lines either to native library namespaces or
//! to function definitions loaded from disk; interpretation walks the tree
//! with matrices stored dense or sparse according to the configured
//! threshold. Parsing then pretty-printing then parsing again reproduces the
//! same tree, which the tests below exercise across generated programs.

use thiserror::Error;

use crate::matrix::Matrix;

pub mod ast;
mod builtins;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod resolve;

pub use ast::{pretty_print, Program};
pub use interp::{interpret, interpret_file, Env, InterpConfig, Session};
pub use parser::parse;
pub use resolve::{resolve, ResolvedProgram};

/// A runtime value: matrices, numbers, or strings (paths and names).
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Matrix(Matrix),
    Scalar(f64),
    Str(String),
}

impl Value {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Matrix(_) => "a matrix",
            Value::Scalar(_) => "a scalar",
            Value::Str(_) => "a string",
        }
    }
}

#[derive(Debug, Error)]
pub enum DslError {
    #[error("line {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: undefined variable {name:?}")]
    UndefinedVariable { line: usize, name: String },
    #[error("line {line}: undefined function {name:?}")]
    UndefinedFunction { line: usize, name: String },
    #[error("line {line}: unknown namespace {name:?}")]
    UndefinedNamespace { line: usize, name: String },
    #[error("line {line}: {name} expects {expected} arguments, got {got}")]
    ArityMismatch {
        line: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {what} must be {expected}, got {got}")]
    KindMismatch {
        line: usize,
        what: String,
        expected: &'static str,
        got: &'static str,
    },
    #[error("line {line}: {what} must be a whole number, got {value}")]
    NonIntegerValue {
        line: usize,
        what: String,
        value: f64,
    },
    #[error("line {line}: {name} produced {returned} values where {wanted} expected")]
    ReturnArity {
        line: usize,
        name: String,
        returned: usize,
        wanted: usize,
    },
    #[error("line {line}: return value {name:?} of {func} was never assigned")]
    ReturnUnset {
        line: usize,
        name: String,
        func: String,
    },
    #[error("line {line}: call depth limit of {limit} frames exceeded")]
    CallDepth { line: usize, limit: usize },
    #[error("line {line}: {msg}")]
    Runtime { line: usize, msg: String },
    #[error("import of {path} failed: {msg}")]
    Import { path: String, msg: String },
    #[error("import cycle through {path}")]
    ImportCycle { path: String },
    #[error("function {name:?} is defined more than once")]
    DuplicateFunction { name: String },
    #[error("namespace alias {alias:?} is bound to two different targets")]
    DuplicateNamespace { alias: String },
    #[error("line {line}: imported scripts may only contain imports and function definitions")]
    ImportedStatement { line: usize },
}
