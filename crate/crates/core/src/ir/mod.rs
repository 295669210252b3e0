//! Loading and linking of textual LLVM IR.

mod link;
mod model;
mod parse;
mod signature;
mod types;

use thiserror::Error;

pub use link::link_modules;
pub use model::{IRFunction, IRInstruction, IRProgram, InstrKind, LinkCollision};
pub use parse::{load_ir_module, load_ir_module_named};
#[allow(unused_imports)]
pub(crate) use parse::{is_deallocator, is_heap_allocator};
pub use signature::{normalize_signature, SignatureKey};
pub use types::{parse_type, IrType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("malformed function header at line {line}: {message}")]
    MalformedHeader { line: usize, message: String },
    #[error("empty IR input")]
    EmptyInput,
    #[error("unparsable type `{0}`")]
    UnparsableType(String),
}
