//! Explainable decision support built on general quantitative bipolar
//! argumentation frameworks (QBAFs).
//!
//! The engine mines a decision-option ontology from pre-chunked policy text,
//! builds one general QBAF per option whose arguments carry applicability
//! conditions, instantiates those frameworks against the parameters of a
//! concrete case and scores every option with DF-QuAD gradual semantics.
//! The shared artifacts can be contested globally: every accepted edit is
//! versioned in an append-only log and affects all later inferences.

pub mod canonical;
pub mod condition;
pub mod contest;
pub mod eval;
pub mod llm;
pub mod ontology;
pub mod pipeline;
pub mod qbaf;
pub mod service;
pub mod store;

pub use condition::{CaseParameters, Condition, ParamDef, ParamValue, ParameterSchema, ValueType};
pub use ontology::{Chunk, Entity, EntityId, Ontology};
pub use qbaf::{Argument, ArgumentId, Polarity, Qbaf, Semantics, StrengthMap};
