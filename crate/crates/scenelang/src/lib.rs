//! Parser, resolver and automatic assembler for `.plx` model files.
//!
//! A `.plx` unit declares models with typed fields, single inheritance,
//! traits, mates between bodies and typed signals:
//!
//! ```text
//! model Arm:
//!   length: Real = 1.0
//!   base: Body = Body(position = (0, 0, 0))
//!   link: Body = Body(mass = 2)
//!   mate hinge(base, link @ (-length, 0, 0), axis=(0, 0, 1), actuated=true)
//! ```
//!
//! The pipeline is [`parse_source`] → [`resolve`] → [`assemble`].

pub mod assemble;
pub mod ast;
pub mod census;
pub mod error;
pub mod lexer;
pub mod parser;
pub mod printer;
pub mod resolve;
pub mod tree;
pub mod urdf;

use std::path::Path;

pub use assemble::{assemble, mate_residual, max_mate_residual, DEFAULT_TOLERANCE};
pub use ast::{Forest, MateKind, ModelDecl, SourceUnit};
pub use census::validate_machine;
pub use error::{PlxError, Result};
pub use parser::{parse_source, parse_unit, FsRegistry, MemoryRegistry, UnitRegistry};
pub use resolve::{flatten, resolve};
pub use tree::{BodyNode, Census, Frame, Mate, ModelTree, Value};

/// Parses a file and everything it imports.
pub fn load_file(path: impl AsRef<Path>) -> Result<Forest> {
    let unit = FsRegistry::read(path.as_ref())?;
    parse_source(&unit, &FsRegistry)
}

/// Resolves and assembles `model` (or the default model) of `forest`.
pub fn build(forest: &Forest, model: Option<&str>, seed: u64) -> Result<ModelTree> {
    let name = match model {
        Some(m) => m.to_string(),
        None => forest.default_model().map(|m| m.name.clone()).ok_or_else(|| PlxError::UnknownModel("<none>".into()))?,
    };
    let tree = resolve(&name, forest)?;
    assemble(&tree, DEFAULT_TOLERANCE, seed)
}

/// Loads, resolves and assembles a model file in one step.
pub fn build_file(path: impl AsRef<Path>, model: Option<&str>, seed: u64) -> Result<ModelTree> {
    build(&load_file(path)?, model, seed)
}
