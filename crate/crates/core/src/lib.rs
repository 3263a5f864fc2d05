//! Verifier-guided proof search over natural-language entailment graphs.

pub mod bm25;
pub mod dsl;
pub mod eval;
pub mod graph;
pub mod lang;
pub mod negatives;
pub mod pipeline;
pub mod search;
pub mod sources;
pub mod synth;
pub mod tree;
mod util;

pub use dsl::{normalize_sentence, parse_proof, parse_step, serialize_proof, validate_step, DslError, LinearProof, NodeId, StepText};
pub use graph::{node_score, ExecutionOutcome, GraphError, NodeRef, ProofGraph, Target};
pub use tree::ProofTree;
