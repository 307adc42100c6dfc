//! General QBAF construction and case-specific inference.
//!
//! Construction mines a bipolar framework per decision option, scores every
//! argument and formalises each non-root argument's natural-language
//! condition, threading the global parameter schema through all options.
//! Inference extracts case parameters once, prunes every general framework
//! to the arguments whose conditions hold and scores each option by the
//! strength of its root.

mod construct;
mod inference;
mod mining;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{Condition, EvalError, SchemaError};
use crate::llm::LlmError;
use crate::ontology::{Entity, EntityId};
use crate::qbaf::{Argument, ArgumentId, Qbaf};

pub use construct::{
    build_general_qbafs, condition_type_problems, estimate_base_score, formalise_condition, BuildOutcome, DefaultEvent,
    ScoreContext, ScoreOutcome,
};
pub use inference::{
    extract_params, infer_case, infer_with_params, instantiate, CaseInference, Instantiation, RecommendationResult,
    RemovalCause, RemovedArgument,
};
pub use mining::{mine_baf, BafSkeleton, SkeletonNode};

pub const ROOT_ID: &str = "root";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentScheme {
    pub major_premise: String,
    pub minor_premises: Vec<String>,
    pub critical_questions: Vec<String>,
}

impl ArgumentScheme {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?;
        let scheme: ArgumentScheme =
            serde_json::from_str(&text).map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?;
        let problems = scheme.problems();
        if problems.is_empty() {
            Ok(scheme)
        } else {
            Err(PipelineError::Invalid(problems.join("; ")))
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.major_premise.trim().is_empty() {
            out.push("major premise is empty".to_owned());
        }
        if self.critical_questions.is_empty() {
            out.push("scheme needs at least one critical question".to_owned());
        }
        out
    }

    /// Prompt rendering, premises and questions verbatim.
    pub fn render(&self) -> String {
        let mut out = format!("Major premise: {}\n", self.major_premise);
        for p in &self.minor_premises {
            out.push_str(&format!("Minor premise: {p}\n"));
        }
        for (i, q) in self.critical_questions.iter().enumerate() {
            out.push_str(&format!("Critical question {}: {q}\n", i + 1));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub depth: u32,
    pub score_root: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<ArgumentScheme>,
    /// Cap on supporters and on attackers per mined argument.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_breadth: Option<usize>,
    pub max_attempts: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig { depth: 1, score_root: false, scheme: None, max_breadth: None, max_attempts: 3 }
    }
}

impl MiningConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.depth < 1 {
            out.push("depth must be at least 1".to_owned());
        }
        if self.max_breadth == Some(0) {
            out.push("max_breadth must be positive".to_owned());
        }
        if self.max_attempts == 0 {
            out.push("max_attempts must be positive".to_owned());
        }
        if let Some(scheme) = &self.scheme {
            out.extend(scheme.problems());
        }
        out
    }
}

/// A QBAF whose non-root arguments carry a natural-language condition and
/// its formalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralQbaf {
    pub entity: Entity,
    pub qbaf: Qbaf,
    pub nl_conditions: BTreeMap<ArgumentId, String>,
    pub formal_conditions: BTreeMap<ArgumentId, Condition>,
}

impl GeneralQbaf {
    pub fn option(&self) -> &EntityId {
        &self.entity.id
    }

    /// Formal condition of an argument; the root's is `True`.
    pub fn condition(&self, id: &ArgumentId) -> &Condition {
        static TRUE: Condition = Condition::True;
        self.formal_conditions.get(id).unwrap_or(&TRUE)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = self.qbaf.validate().violations.iter().map(ToString::to_string).collect();
        for arg in &self.qbaf.arguments {
            let is_root = arg.id == self.qbaf.root;
            let nl = self.nl_conditions.contains_key(&arg.id);
            let formal = self.formal_conditions.contains_key(&arg.id);
            if is_root && (nl || formal) {
                out.push(format!("root {} must not carry a condition", arg.id));
            }
            if !is_root && !nl {
                out.push(format!("argument {} has no natural-language condition", arg.id));
            }
            if !is_root && !formal {
                out.push(format!("argument {} has no formal condition", arg.id));
            }
        }
        for id in self.nl_conditions.keys().chain(self.formal_conditions.keys()) {
            if !self.qbaf.contains(id) {
                out.push(format!("condition attached to unknown argument {id}"));
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct GeneralArgumentWire {
    id: ArgumentId,
    text: String,
    base_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nl_condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<Condition>,
}

#[derive(Serialize, Deserialize)]
struct GeneralQbafWire {
    entity: Entity,
    root: ArgumentId,
    arguments: Vec<GeneralArgumentWire>,
    attacks: Vec<(ArgumentId, ArgumentId)>,
    supports: Vec<(ArgumentId, ArgumentId)>,
}

impl Serialize for GeneralQbaf {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GeneralQbafWire {
            entity: self.entity.clone(),
            root: self.qbaf.root.clone(),
            arguments: self
                .qbaf
                .arguments
                .iter()
                .map(|a| GeneralArgumentWire {
                    id: a.id.clone(),
                    text: a.text.clone(),
                    base_score: a.base_score,
                    nl_condition: self.nl_conditions.get(&a.id).cloned(),
                    condition: self.formal_conditions.get(&a.id).cloned(),
                })
                .collect(),
            attacks: self.qbaf.attacks.clone(),
            supports: self.qbaf.supports.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GeneralQbaf {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = GeneralQbafWire::deserialize(deserializer)?;
        let mut nl_conditions = BTreeMap::new();
        let mut formal_conditions = BTreeMap::new();
        let mut arguments = Vec::with_capacity(wire.arguments.len());
        for a in wire.arguments {
            if let Some(nl) = a.nl_condition {
                nl_conditions.insert(a.id.clone(), nl);
            }
            if let Some(c) = a.condition {
                formal_conditions.insert(a.id.clone(), c);
            }
            arguments.push(Argument { id: a.id, text: a.text, base_score: a.base_score });
        }
        Ok(GeneralQbaf {
            entity: wire.entity,
            qbaf: Qbaf { root: wire.root, arguments, attacks: wire.attacks, supports: wire.supports },
            nl_conditions,
            formal_conditions,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionFailure {
    pub option: EntityId,
    pub error: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("option {option} has no provenance chunks")]
    NoChunks { option: EntityId },
    #[error("mining failed for {option}: {source}")]
    Mining { option: EntityId, source: LlmError },
    #[error("protocol error ({context}): {reason}")]
    Protocol { context: String, reason: String },
    #[error(transparent)]
    SchemaConflict(#[from] SchemaError),
    #[error("parameter extraction failed: {reason}")]
    Extraction { reason: String, last_output: String },
    #[error("cannot instantiate argument {argument}: {source}")]
    Instantiation { argument: ArgumentId, source: EvalError },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no general frameworks to infer with")]
    NoFrameworks,
    #[error("every option failed: {}", .0.iter().map(|f| format!("{}: {}", f.option, f.error)).collect::<Vec<_>>().join("; "))]
    AllFailed(Vec<OptionFailure>),
}
