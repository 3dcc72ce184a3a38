//! Executable decision trees for clinical guideline recommendations.
//!
//! The crate parses and validates tree documents, executes them with path
//! tracing, synthesizes factual and counterfactual QA instances, and scores
//! model responses with executable rewards. Corpus curation and the
//! LLM-backed extraction stages live alongside.

pub mod canon;
pub mod corpus;
pub mod executor;
pub mod extraction;
pub mod fixtures;
pub mod model;
pub mod qa_counterfactual;
pub mod qa_factual;
pub mod records;
pub mod tree_format;
pub mod verifier;

pub use executor::{abduce, check_consistency, execute, partial_execute, ExecError, ExecutionResult, ResidualResult};
pub use model::{
    merge_assignments, AbductionClass, Assignment, DecisionTree, ExecutionPath, Literal, ModelError, Node, Op,
    PathStep, Predicate, Source, TreeMetadata, TreeParts, Value, VarKind, VariableSpec,
};
pub use tree_format::{
    enumerate_paths, parse_tree, path_constraints, serialize_tree, validate_tree, ConstraintSet, FormatError,
    PathSpec, ValidationReport,
};
