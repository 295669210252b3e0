//! Static reachability, rule-based vulnerability detection and an agent loop
//! for proof-of-concept generation over LLVM IR.

pub mod agent;
pub mod dynenv;
mod fsutil;
pub mod ir;
pub mod pipeline;
pub mod process;
pub mod reach;
pub mod rules;
