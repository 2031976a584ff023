use thiserror::Error;

use crate::ast::Span;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlxError {
    #[error("{unit}:{line}:{col}: syntax error: {message}")]
    Syntax { unit: String, line: u32, col: u32, message: String },

    #[error("cyclic import: {}", .0.join(" -> "))]
    CyclicImport(Vec<String>),

    #[error("unknown import `{0}`")]
    UnknownImport(String),

    #[error("model `{0}` is declared more than once")]
    DuplicateModel(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model `{model}` extends unknown base `{base}`")]
    UnknownBase { model: String, base: String },

    #[error("model `{model}` uses unknown trait `{name}`")]
    UnknownTrait { model: String, name: String },

    #[error("cyclic inheritance: {}", .0.join(" -> "))]
    CyclicInheritance(Vec<String>),

    #[error("trait conflict on field `{0}`")]
    TraitConflict(String),

    #[error("field `{field}` declared twice in model `{model}`")]
    DuplicateField { model: String, field: String },

    #[error("{0}: division by zero")]
    DivisionByZero(Span),

    #[error("{span}: unbound reference `{name}`")]
    UnboundReference { name: String, span: Span },

    #[error("cyclic reference through `{0}`")]
    CyclicReference(String),

    #[error("{span}: type mismatch for `{name}`: expected {expected}, found {found}")]
    TypeMismatch { name: String, expected: String, found: String, span: Span },

    #[error("{span}: invalid argument: {message}")]
    InvalidArgument { message: String, span: Span },

    #[error("{span}: mate axis must be a unit vector (norm {norm})")]
    InvalidAxis { norm: f64, span: Span },

    #[error("{span}: `{path}` does not name a body")]
    UnknownBody { path: String, span: Span },

    #[error("no body has an explicit world transform")]
    NoAnchor,

    #[error("ambiguous assembly order: no mate path from an anchor to {}", .0.join(", "))]
    AmbiguousOrder(Vec<String>),

    #[error("closed loop did not converge: residual {residual:.3e} after {iterations} iterations")]
    LoopNotConverged { residual: f64, iterations: usize },

    #[error("over-constrained mate `{0}`")]
    OverConstrained(String),

    #[error("urdf import failed: {0}")]
    Urdf(String),

    #[error("io error on `{path}`: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, PlxError>;
