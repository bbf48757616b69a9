//! Static path pruning for directed fuzzing over a small typed IR.
//!
//! The pipeline is: [`ir::parse_program`] → [`callgraph::InverseCallGraph`] →
//! [`finder::find_relevant_blocks`] (marks every block that can lead to a
//! target) → [`pruner::prune`] (inserts early exits into everything else) →
//! [`interp::Interpreter`] to execute original, marked or pruned programs.

pub mod ir;

mod error;
pub use error::{Error, Result};

pub mod callgraph;
pub mod finder;
pub mod interp;
pub mod pruner;
pub mod corpus;
