//! Contestation: validated edits to the shared artifacts.
//!
//! Every edit is applied to a copy of the artifacts and checked against the
//! invariants of the ontology, the parameter schema and each general
//! framework before it is accepted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{merge_schema, CaseParameters, Condition, ParameterSchema, SchemaError};
use crate::llm::Generator;
use crate::ontology::{EntityId, OntologyError, OntologyFile};
use crate::pipeline::{extract_params, infer_with_params, CaseInference, GeneralQbaf, PipelineError};
use crate::qbaf::{Argument, ArgumentId, Polarity, Semantics};

/// Everything inference reads.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub ontology: OntologyFile,
    pub schema: ParameterSchema,
    pub generals: BTreeMap<EntityId, GeneralQbaf>,
    /// Per-case parameter corrections, keyed by case id.
    pub case_overrides: BTreeMap<String, CaseParameters>,
}

impl Artifacts {
    /// General frameworks in option order.
    pub fn generals(&self) -> Vec<GeneralQbaf> {
        let mut out: Vec<GeneralQbaf> =
            self.ontology.options.iter().filter_map(|id| self.generals.get(id).cloned()).collect();
        for (id, g) in &self.generals {
            if !self.ontology.options.contains(id) {
                out.push(g.clone());
            }
        }
        out
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.ontology.ontology.problems();
        out.extend(self.schema.problems());
        for id in &self.ontology.options {
            if self.ontology.ontology.entity(id).is_none() {
                out.push(format!("selected option {id} is not in the ontology"));
            }
        }
        for (id, general) in &self.generals {
            if general.option() != id {
                out.push(format!("framework stored under {id} belongs to {}", general.option()));
            }
            out.extend(general.problems().into_iter().map(|p| format!("{id}: {p}")));
            for (arg, cond) in &general.formal_conditions {
                out.extend(condition_problems(cond, &self.schema).into_iter().map(|p| format!("{id}/{arg}: {p}")));
            }
        }
        out
    }
}

/// What a caller knows about a case: free text, explicit parameters, or both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<CaseParameters>,
}

impl Artifacts {
    /// Parameters for a case: explicit ones if given, otherwise extracted
    /// from the text, with the case's stored overrides applied last.
    pub fn case_params(
        &self,
        generator: Option<&Generator>,
        input: &CaseInput,
    ) -> Result<CaseParameters, PipelineError> {
        let base = match (&input.params, &input.case_text) {
            (Some(p), _) => p.clone(),
            (None, Some(text)) => {
                let generator = generator.ok_or_else(|| {
                    PipelineError::Invalid("extracting parameters needs a language model backend".into())
                })?;
                extract_params(generator, text, &self.schema)?
            }
            (None, None) if input.case_id.as_ref().is_some_and(|id| self.case_overrides.contains_key(id)) => {
                CaseParameters::new()
            }
            (None, None) => return Err(PipelineError::Invalid("a case needs text or parameters".into())),
        };
        Ok(match input.case_id.as_ref().and_then(|id| self.case_overrides.get(id)) {
            Some(overrides) => base.merged_with(overrides),
            None => base,
        })
    }

    pub fn infer(
        &self,
        generator: Option<&Generator>,
        input: &CaseInput,
        semantics: Semantics,
    ) -> Result<CaseInference, PipelineError> {
        let generals = self.generals();
        if generals.is_empty() {
            return Err(PipelineError::NoFrameworks);
        }
        let params = self.case_params(generator, input)?;
        Ok(infer_with_params(&generals, &params, semantics))
    }
}

fn condition_problems(cond: &Condition, schema: &ParameterSchema) -> Vec<String> {
    let mut out: Vec<String> = cond
        .referenced_params()
        .into_iter()
        .filter(|p| !schema.contains(p))
        .map(|p| format!("parameter {p} is not defined in the schema"))
        .collect();
    out.extend(crate::pipeline::condition_type_problems(cond, schema));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContestEdit {
    SetBaseScore {
        option: EntityId,
        argument: ArgumentId,
        base_score: f64,
    },
    AddArgument {
        option: EntityId,
        parent: ArgumentId,
        polarity: Polarity,
        text: String,
        base_score: f64,
        nl_condition: String,
        condition: Condition,
    },
    /// Removes the argument and everything below it.
    RemoveArgument {
        option: EntityId,
        argument: ArgumentId,
    },
    ReplaceCondition {
        option: EntityId,
        argument: ArgumentId,
        condition: Condition,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nl_condition: Option<String>,
    },
    EditParameterDescription {
        name: String,
        description: String,
    },
    DefineParameters {
        parameters: ParameterSchema,
    },
    AddEntity {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        description: Option<String>,
        #[serde(default)]
        parents: Vec<EntityId>,
        #[serde(default)]
        select: bool,
    },
    RemoveEntity {
        entity: EntityId,
    },
    OverrideCaseParameters {
        case_id: String,
        params: CaseParameters,
    },
}

#[derive(Clone, Debug, Error, PartialEq, Serialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum ContestError {
    #[error("edit rejected: {0}")]
    Rejected(String),
    #[error("not found: {0}")]
    NotFound(String),
}

impl From<SchemaError> for ContestError {
    fn from(e: SchemaError) -> Self {
        ContestError::Rejected(e.to_string())
    }
}

impl From<OntologyError> for ContestError {
    fn from(e: OntologyError) -> Self {
        match e {
            OntologyError::UnknownEntity(id) => ContestError::NotFound(format!("entity {id}")),
            other => ContestError::Rejected(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub revision: u64,
    pub timestamp_ms: u64,
    pub justification: String,
    pub edit: ContestEdit,
}

fn check_score(value: f64) -> Result<(), ContestError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ContestError::Rejected(format!("base score {value} is outside [0, 1]")))
    }
}

fn general_mut<'a>(artifacts: &'a mut Artifacts, option: &EntityId) -> Result<&'a mut GeneralQbaf, ContestError> {
    artifacts.generals.get_mut(option).ok_or_else(|| ContestError::NotFound(format!("framework for {option}")))
}

fn require_argument(general: &GeneralQbaf, id: &ArgumentId) -> Result<(), ContestError> {
    if general.qbaf.contains(id) {
        Ok(())
    } else {
        Err(ContestError::NotFound(format!("argument {id} in {}", general.option())))
    }
}

fn next_child_id(general: &GeneralQbaf, parent: &ArgumentId, polarity: Polarity) -> ArgumentId {
    let tag = match polarity {
        Polarity::Support => 's',
        Polarity::Attack => 'a',
    };
    (1..)
        .map(|i| ArgumentId::new(format!("{parent}.{tag}{i}")))
        .find(|id| !general.qbaf.contains(id))
        .expect("unbounded range")
}

/// Apply `edit` to a copy of `artifacts`. The result satisfies every
/// artifact invariant or the edit is rejected.
pub fn apply_contestation(artifacts: &Artifacts, edit: &ContestEdit) -> Result<Artifacts, ContestError> {
    let mut next = artifacts.clone();
    match edit {
        ContestEdit::SetBaseScore { option, argument, base_score } => {
            check_score(*base_score)?;
            let general = general_mut(&mut next, option)?;
            require_argument(general, argument)?;
            general.qbaf.argument_mut(argument).expect("checked").base_score = *base_score;
        }
        ContestEdit::AddArgument { option, parent, polarity, text, base_score, nl_condition, condition } => {
            check_score(*base_score)?;
            if text.trim().is_empty() || nl_condition.trim().is_empty() {
                return Err(ContestError::Rejected("argument text and condition must be non-empty".into()));
            }
            let general = general_mut(&mut next, option)?;
            require_argument(general, parent)?;
            let id = next_child_id(general, parent, *polarity);
            general.qbaf.arguments.push(Argument::new(id.clone(), text.trim(), *base_score));
            general.qbaf.add_relation(id.clone(), parent.clone(), *polarity);
            general.nl_conditions.insert(id.clone(), nl_condition.trim().to_owned());
            general.formal_conditions.insert(id, condition.clone());
        }
        ContestEdit::RemoveArgument { option, argument } => {
            let general = general_mut(&mut next, option)?;
            require_argument(general, argument)?;
            if argument == &general.qbaf.root {
                return Err(ContestError::Rejected("the root argument cannot be removed".into()));
            }
            let mut gone = general.qbaf.descendants(argument);
            gone.insert(argument.clone());
            general.qbaf.remove_arguments(&gone);
            general.nl_conditions.retain(|k, _| !gone.contains(k));
            general.formal_conditions.retain(|k, _| !gone.contains(k));
        }
        ContestEdit::ReplaceCondition { option, argument, condition, nl_condition } => {
            let general = general_mut(&mut next, option)?;
            require_argument(general, argument)?;
            if argument == &general.qbaf.root {
                return Err(ContestError::Rejected("the root argument carries no condition".into()));
            }
            general.formal_conditions.insert(argument.clone(), condition.clone());
            if let Some(nl) = nl_condition {
                general.nl_conditions.insert(argument.clone(), nl.clone());
            }
        }
        ContestEdit::EditParameterDescription { name, description } => {
            let def = next.schema.get_mut(name).ok_or_else(|| ContestError::NotFound(format!("parameter {name}")))?;
            def.description = description.clone();
        }
        ContestEdit::DefineParameters { parameters } => {
            next.schema = merge_schema(&next.schema, parameters)?;
        }
        ContestEdit::AddEntity { name, description, parents, select } => {
            let ontology = &mut next.ontology.ontology;
            for p in parents {
                if ontology.entity(p).is_none() {
                    return Err(ContestError::NotFound(format!("entity {p}")));
                }
            }
            let id = ontology.add_entity(name, description.clone())?;
            for p in parents {
                ontology.add_edge(p, &id)?;
            }
            if *select {
                next.ontology.options.push(id);
                let ontology = &next.ontology.ontology;
                next.ontology.options.sort_by_cached_key(|o| ontology.entity(o).map(|e| e.name.clone()));
            }
        }
        ContestEdit::RemoveEntity { entity } => {
            next.ontology.ontology.remove_entity(entity)?;
            next.ontology.options.retain(|o| o != entity);
            next.generals.remove(entity);
        }
        ContestEdit::OverrideCaseParameters { case_id, params } => {
            if case_id.trim().is_empty() {
                return Err(ContestError::Rejected("case id must be non-empty".into()));
            }
            let report = crate::condition::validate_params(params, &next.schema);
            if !report.is_ok() {
                return Err(ContestError::Rejected(report.to_string()));
            }
            let merged = next.case_overrides.get(case_id).cloned().unwrap_or_default().merged_with(params);
            next.case_overrides.insert(case_id.clone(), merged);
        }
    }
    let problems = next.problems();
    if !problems.is_empty() {
        return Err(ContestError::Rejected(problems.join("; ")));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::{ParamDef, PropertyConstraint, ValueType};
    use crate::ontology::{Entity, Ontology};
    use crate::qbaf::Qbaf;

    fn artifacts() -> Artifacts {
        let mut ontology = Ontology::default();
        let id = ontology.add_entity("Surgery", None).unwrap();
        let mut qbaf = Qbaf::root_only(Argument::new("root", "Surgery is recommended.", 0.5));
        qbaf.arguments.push(Argument::new("root.a1", "Low KPS.", 0.8));
        qbaf.add_relation("root.a1".into(), "root".into(), Polarity::Attack);
        let general = GeneralQbaf {
            entity: Entity { id: id.clone(), name: "Surgery".into(), description: None },
            qbaf,
            nl_conditions: [("root.a1".into(), "KPS below 50".to_owned())].into(),
            formal_conditions: [(
                "root.a1".into(),
                Condition::property(PropertyConstraint::new("kps").typed(ValueType::Integer).maximum(49)),
            )]
            .into(),
        };
        Artifacts {
            ontology: OntologyFile { ontology, options: vec![id.clone()] },
            schema: ParameterSchema::from_defs([ParamDef::new("kps", ValueType::Integer, "Karnofsky score")]),
            generals: [(id, general)].into(),
            case_overrides: BTreeMap::new(),
        }
    }

    fn surgery() -> EntityId {
        EntityId::new("surgery")
    }

    #[test]
    fn base_score_edits_are_range_checked() {
        let a = artifacts();
        let edit = |s| ContestEdit::SetBaseScore { option: surgery(), argument: "root.a1".into(), base_score: s };
        let next = apply_contestation(&a, &edit(0.9)).unwrap();
        assert_eq!(next.generals[&surgery()].qbaf.argument(&"root.a1".into()).unwrap().base_score, 0.9);
        assert!(matches!(apply_contestation(&a, &edit(1.2)), Err(ContestError::Rejected(_))));
        let unknown = ContestEdit::SetBaseScore { option: surgery(), argument: "nope".into(), base_score: 0.1 };
        assert!(matches!(apply_contestation(&a, &unknown), Err(ContestError::NotFound(_))));
    }

    #[test]
    fn root_cannot_be_removed() {
        let edit = ContestEdit::RemoveArgument { option: surgery(), argument: "root".into() };
        assert!(matches!(apply_contestation(&artifacts(), &edit), Err(ContestError::Rejected(_))));
        let edit = ContestEdit::RemoveArgument { option: surgery(), argument: "root.a1".into() };
        let next = apply_contestation(&artifacts(), &edit).unwrap();
        assert_eq!(next.generals[&surgery()].qbaf.arguments.len(), 1);
        assert!(next.generals[&surgery()].formal_conditions.is_empty());
    }

    #[test]
    fn added_arguments_get_fresh_ids_and_need_defined_parameters() {
        let add = |cond: Condition| ContestEdit::AddArgument {
            option: surgery(),
            parent: "root".into(),
            polarity: Polarity::Attack,
            text: "Deep-seated tumour.".into(),
            base_score: 0.7,
            nl_condition: "tumour in the thalamus".into(),
            condition: cond,
        };
        let good = Condition::property(PropertyConstraint::new("kps").typed(ValueType::Integer).minimum(10));
        let next = apply_contestation(&artifacts(), &add(good)).unwrap();
        assert!(next.generals[&surgery()].qbaf.contains(&"root.a2".into()));
        let bad = Condition::property(PropertyConstraint::new("location").constant("thalamus"));
        assert!(matches!(apply_contestation(&artifacts(), &add(bad)), Err(ContestError::Rejected(_))));
    }

    #[test]
    fn parameter_descriptions_and_definitions() {
        let edit = ContestEdit::EditParameterDescription { name: "kps".into(), description: "KPS, 0 to 100".into() };
        let next = apply_contestation(&artifacts(), &edit).unwrap();
        assert_eq!(next.schema.get("kps").unwrap().description, "KPS, 0 to 100");
        let missing = ContestEdit::EditParameterDescription { name: "age".into(), description: "x".into() };
        assert!(matches!(apply_contestation(&artifacts(), &missing), Err(ContestError::NotFound(_))));
        let clash = ContestEdit::DefineParameters {
            parameters: ParameterSchema::from_defs([ParamDef::new("kps", ValueType::String, "band")]),
        };
        assert!(matches!(apply_contestation(&artifacts(), &clash), Err(ContestError::Rejected(_))));
    }

    #[test]
    fn entity_edits_keep_options_consistent() {
        let add = ContestEdit::AddEntity { name: "Biopsy".into(), description: None, parents: vec![], select: true };
        let next = apply_contestation(&artifacts(), &add).unwrap();
        assert_eq!(next.ontology.options, vec![EntityId::new("biopsy"), surgery()]);
        let dup = ContestEdit::AddEntity { name: "surgery".into(), description: None, parents: vec![], select: false };
        assert!(matches!(apply_contestation(&artifacts(), &dup), Err(ContestError::Rejected(_))));
        let rm = ContestEdit::RemoveEntity { entity: surgery() };
        let next = apply_contestation(&artifacts(), &rm).unwrap();
        assert!(next.generals.is_empty() && next.ontology.options.is_empty());
    }

    #[test]
    fn case_overrides_are_validated_and_merged() {
        let edit =
            ContestEdit::OverrideCaseParameters { case_id: "c1".into(), params: CaseParameters::new().with("kps", 40) };
        let next = apply_contestation(&artifacts(), &edit).unwrap();
        assert_eq!(next.case_overrides["c1"], CaseParameters::new().with("kps", 40));
        let bad = ContestEdit::OverrideCaseParameters {
            case_id: "c1".into(),
            params: CaseParameters::new().with("kps", "x"),
        };
        assert!(matches!(apply_contestation(&artifacts(), &bad), Err(ContestError::Rejected(_))));
    }

    #[test]
    fn edits_round_trip_through_json() {
        let edit = ContestEdit::ReplaceCondition {
            option: surgery(),
            argument: "root.a1".into(),
            condition: Condition::True,
            nl_condition: Some("always".into()),
        };
        let text = serde_json::to_string(&edit).unwrap();
        assert!(text.contains("\"kind\":\"replace_condition\""));
        assert_eq!(serde_json::from_str::<ContestEdit>(&text).unwrap(), edit);
    }
}
