//! Case-specific inference: parameter extraction, instantiation and scoring.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{GeneralQbaf, OptionFailure, PipelineError};
use crate::condition::{validate_params, CaseParameters, Condition, ParameterSchema};
use crate::llm::{GenerationRequest, Generator, LlmError, Stage};
use crate::ontology::EntityId;
use crate::qbaf::{evaluate_with, ArgumentId, Qbaf, Semantics, StrengthMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RemovalCause {
    ConditionFailed { condition: Condition },
    AncestorRemoved { ancestor: ArgumentId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovedArgument {
    pub id: ArgumentId,
    pub text: String,
    pub base_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nl_condition: Option<String>,
    pub cause: RemovalCause,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instantiation {
    pub qbaf: Qbaf,
    pub removed: Vec<RemovedArgument>,
}

/// Prune `general` to the arguments applicable under `params`. Arguments are
/// visited in pre-order; a failing argument takes its whole subtree with it
/// and the subtree's own conditions are not evaluated.
pub fn instantiate(general: &GeneralQbaf, params: &CaseParameters) -> Result<Instantiation, PipelineError> {
    let qbaf = &general.qbaf;
    let mut gone: BTreeSet<ArgumentId> = BTreeSet::new();
    let mut removed = Vec::new();
    for id in qbaf.preorder() {
        if gone.contains(&id) || id == qbaf.root {
            continue;
        }
        let condition = general.condition(&id);
        let holds =
            condition.eval(params).map_err(|source| PipelineError::Instantiation { argument: id.clone(), source })?;
        if holds {
            continue;
        }
        let record = |arg_id: &ArgumentId, cause: RemovalCause| {
            let arg = qbaf.argument(arg_id).expect("preorder yields known ids");
            RemovedArgument {
                id: arg_id.clone(),
                text: arg.text.clone(),
                base_score: arg.base_score,
                nl_condition: general.nl_conditions.get(arg_id).cloned(),
                cause,
            }
        };
        removed.push(record(&id, RemovalCause::ConditionFailed { condition: condition.clone() }));
        for d in qbaf.descendants(&id) {
            removed.push(record(&d, RemovalCause::AncestorRemoved { ancestor: id.clone() }));
            gone.insert(d);
        }
        gone.insert(id);
    }
    let mut pruned = qbaf.clone();
    pruned.remove_arguments(&gone);
    Ok(Instantiation { qbaf: pruned, removed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub option: EntityId,
    pub option_name: String,
    /// Root strength of `qbaf`.
    pub score: f64,
    /// The instantiated framework, i.e. the explanation.
    pub qbaf: Qbaf,
    pub strengths: StrengthMap,
    pub removed: Vec<RemovedArgument>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseInference {
    /// Parameters every option was instantiated with.
    pub params: CaseParameters,
    pub results: Vec<RecommendationResult>,
    pub failures: Vec<OptionFailure>,
}

impl CaseInference {
    /// Results by descending score, ties by option id.
    pub fn ranked(&self) -> Vec<&RecommendationResult> {
        let mut out: Vec<&RecommendationResult> = self.results.iter().collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.option.cmp(&b.option)));
        out
    }

    pub fn score_of(&self, option: &EntityId) -> Option<f64> {
        self.results.iter().find(|r| &r.option == option).map(|r| r.score)
    }
}

const EXTRACT_SYSTEM: &str = "You extract structured parameters from a case description. \
Report only what the description states or clearly implies. Reply with JSON only.";

fn describe_parameters(schema: &ParameterSchema) -> String {
    let mut out = String::new();
    for def in schema.defs() {
        out.push_str(&format!("- {} ({})", def.name, def.value_type));
        if let Some(allowed) = &def.allowed {
            let values: Vec<String> = allowed.iter().map(ToString::to_string).collect();
            out.push_str(&format!(", one of {}", values.join(", ")));
        }
        match (&def.minimum, &def.maximum) {
            (Some(lo), Some(hi)) => out.push_str(&format!(", from {lo} to {hi}")),
            (Some(lo), None) => out.push_str(&format!(", at least {lo}")),
            (None, Some(hi)) => out.push_str(&format!(", at most {hi}")),
            (None, None) => {}
        }
        out.push_str(&format!(": {}\n", def.description));
    }
    out
}

/// Extract the case's parameters. The reply must validate against the
/// schema; undeterminable parameters may be omitted or given as `null`.
pub fn extract_params(
    generator: &Generator,
    case_text: &str,
    schema: &ParameterSchema,
) -> Result<CaseParameters, PipelineError> {
    if schema.is_empty() {
        return Ok(CaseParameters::new());
    }
    let case = if case_text.trim().is_empty() { "(no description given)" } else { case_text };
    let user = format!(
        "Parameters:\n{}\nCase description:\n{case}\n\nReply with a JSON object mapping parameter names to values. \
         Omit a parameter or give null when the description does not determine it.",
        describe_parameters(schema)
    );
    let request = GenerationRequest::new(EXTRACT_SYSTEM, user).with_schema(schema.extraction_schema());
    let accepted = generator.generate_with(Stage::Inference, &request, |_, json| {
        let params: CaseParameters =
            serde_json::from_value(json.cloned().unwrap_or_default()).map_err(|e| e.to_string())?;
        let report = validate_params(&params, schema);
        if report.is_ok() {
            Ok(params)
        } else {
            Err(report.to_string())
        }
    });
    match accepted {
        Ok(params) => Ok(params),
        Err(LlmError::Exhausted { reason, last_output, .. }) => Err(PipelineError::Extraction { reason, last_output }),
        Err(e) => Err(e.into()),
    }
}

/// Instantiate and score every option under fixed parameters.
pub fn infer_with_params(generals: &[GeneralQbaf], params: &CaseParameters, semantics: Semantics) -> CaseInference {
    let mut inference = CaseInference { params: params.clone(), ..Default::default() };
    for general in generals {
        let scored = instantiate(general, params).and_then(|inst| {
            let strengths = evaluate_with(&inst.qbaf, semantics)
                .map_err(|e| PipelineError::Invalid(format!("instantiated framework: {e}")))?;
            Ok((inst, strengths))
        });
        match scored {
            Ok((inst, strengths)) => inference.results.push(RecommendationResult {
                option: general.entity.id.clone(),
                option_name: general.entity.name.clone(),
                score: strengths.get(&inst.qbaf.root).expect("root survives instantiation"),
                qbaf: inst.qbaf,
                strengths,
                removed: inst.removed,
            }),
            Err(e) => {
                warn!(option = %general.entity.id, "inference failed: {e}");
                inference.failures.push(OptionFailure { option: general.entity.id.clone(), error: e.to_string() });
            }
        }
    }
    inference
}

/// Extract parameters once, then score every option.
pub fn infer_case(
    generator: &Generator,
    generals: &[GeneralQbaf],
    schema: &ParameterSchema,
    case_text: &str,
    semantics: Semantics,
) -> Result<CaseInference, PipelineError> {
    if generals.is_empty() {
        return Err(PipelineError::NoFrameworks);
    }
    let params = extract_params(generator, case_text, schema)?;
    Ok(infer_with_params(generals, &params, semantics))
}
