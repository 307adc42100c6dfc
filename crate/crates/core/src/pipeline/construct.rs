//! Base-score estimation, condition formalisation and the per-option
//! construction loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use super::mining::{mine_baf, render_sources};
use super::{GeneralQbaf, MiningConfig, OptionFailure, PipelineError};
use crate::condition::{merge_schema, Condition, ParamDef, ParamValue, ParameterSchema, SchemaError, ValueType};
use crate::llm::{GenerationRequest, Generator, LlmError, Stage};
use crate::ontology::{chunks_for, Chunk, Entity, EntityId, Ontology};
use crate::qbaf::{ArgumentId, Polarity};

/// What the scorer sees besides the argument text.
#[derive(Clone, Copy, Debug)]
pub struct ScoreContext<'a> {
    pub option: &'a Entity,
    pub chunks: &'a [&'a Chunk],
    /// Parent text, relation to the parent and the natural-language
    /// condition; `None` for the root.
    pub parent: Option<(&'a str, Polarity, &'a str)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOutcome {
    pub value: f64,
    /// Set when retries were exhausted and the neutral default was used.
    pub defaulted: Option<String>,
}

pub const DEFAULT_BASE_SCORE: f64 = 0.5;

const SCORE_SYSTEM: &str = "You estimate the intrinsic strength of an argument about a decision option, \
judged only by the quality of its support in the source text. Reply with a single number between 0 and 1.";

fn parse_score(text: &str, json: Option<&Value>) -> Result<f64, String> {
    let value = match json {
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::Object(obj)) => obj.get("score").and_then(Value::as_f64),
        _ => text.trim().parse::<f64>().ok(),
    }
    .ok_or_else(|| format!("expected a number, got {:?}", text.trim()))?;
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(format!("score {value} is outside [0, 1]"))
    }
}

pub fn estimate_base_score(
    generator: &Generator,
    argument: &str,
    ctx: &ScoreContext<'_>,
) -> Result<ScoreOutcome, PipelineError> {
    let mut user = format!("Decision option: {}\nArgument: {argument}\n", ctx.option.name);
    if let Some((parent, polarity, condition)) = ctx.parent {
        let relation = match polarity {
            Polarity::Support => "supports",
            Polarity::Attack => "attacks",
        };
        user.push_str(&format!(
            "Parent argument: {parent}\nThe argument {relation} its parent.\nIt applies when: {condition}\n"
        ));
    }
    user.push_str(&format!("\nSource text:\n{}\n\nReply with the base score only.", render_sources(ctx.chunks)));
    let request = GenerationRequest::new(SCORE_SYSTEM, user);
    match generator.generate_with(Stage::QbafConstruction, &request, parse_score) {
        Ok(value) => Ok(ScoreOutcome { value, defaulted: None }),
        Err(LlmError::Exhausted { reason, .. }) => {
            warn!(option = %ctx.option.id, "base score defaulted to {DEFAULT_BASE_SCORE}: {reason}");
            Ok(ScoreOutcome { value: DEFAULT_BASE_SCORE, defaulted: Some(reason) })
        }
        Err(e) => Err(e.into()),
    }
}

const FORMALISE_SYSTEM: &str = "You translate the applicability condition of an argument into a JSON Schema \
(draft 2020-12) over case parameters. Use only the keywords properties, type, const, enum, minimum, maximum, \
exclusiveMinimum, exclusiveMaximum, required, anyOf, allOf and not. Reuse existing parameters where they fit and \
define every new parameter you reference. Reply with JSON only.";

fn formalise_reply_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "condition": {"type": "object"},
            "parameters": {"type": "object"}
        }
    })
}

fn numeric_compatible(a: ValueType, b: ValueType) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

/// Disagreements between constraint keywords and the declared parameter types.
pub fn condition_type_problems(cond: &Condition, schema: &ParameterSchema) -> Vec<String> {
    let mut out = Vec::new();
    walk(cond, &mut |c| {
        if let Condition::Property(p) = c {
            let Some(def) = schema.get(&p.param) else { return };
            if let Some(t) = p.value_type {
                if !numeric_compatible(t, def.value_type) {
                    out.push(format!("{} is declared {} but constrained as {t}", p.param, def.value_type));
                }
            }
            let values = p.constant.iter().chain(p.allowed.iter().flatten());
            for v in values {
                if !v.has_type(def.value_type) {
                    out.push(format!("value {v} does not fit {} parameter {}", def.value_type, p.param));
                }
            }
            let bounded = p.minimum.is_some()
                || p.maximum.is_some()
                || p.exclusive_minimum.is_some()
                || p.exclusive_maximum.is_some();
            if bounded && !def.value_type.is_numeric() {
                out.push(format!("numeric bound on {} parameter {}", def.value_type, p.param));
            }
        }
    });
    out
}

fn walk(cond: &Condition, f: &mut impl FnMut(&Condition)) {
    f(cond);
    match cond {
        Condition::AnyOf(cs) | Condition::AllOf(cs) => cs.iter().for_each(|c| walk(c, f)),
        Condition::Not(c) => walk(c, f),
        _ => {}
    }
}

/// Definitions implied by a bare condition: the first declared type (or
/// constant type) of each referenced parameter.
fn implied_definitions(cond: &Condition, description: &str) -> BTreeMap<String, ParamDef> {
    let mut out = BTreeMap::new();
    walk(cond, &mut |c| {
        if let Condition::Property(p) = c {
            let ty = p.value_type.or_else(|| {
                p.constant.as_ref().map(|v| match v {
                    ParamValue::Bool(_) => ValueType::Boolean,
                    ParamValue::Integer(_) => ValueType::Integer,
                    ParamValue::Number(_) => ValueType::Number,
                    ParamValue::String(_) => ValueType::String,
                })
            });
            if let Some(ty) = ty {
                out.entry(p.param.clone()).or_insert_with(|| ParamDef::new(&p.param, ty, description));
            }
        }
    });
    out
}

type Formalised = Result<(Condition, ParameterSchema), SchemaError>;

fn accept_formalisation(
    json: Option<&Value>,
    schema: &ParameterSchema,
    nl_condition: &str,
) -> Result<Formalised, String> {
    let json = json.ok_or("reply is not JSON")?;
    let wrapped = json.as_object().is_some_and(|o| o.contains_key("condition"));
    let (condition, delta) = if wrapped {
        let condition = Condition::from_json(&json["condition"]).map_err(|e| e.to_string())?;
        let delta: ParameterSchema = match json.get("parameters") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| format!("bad parameter definitions: {e}"))?,
            None => ParameterSchema::new(),
        };
        (condition, delta)
    } else {
        (Condition::from_json(json).map_err(|e| e.to_string())?, ParameterSchema::new())
    };
    let mut merged = match merge_schema(schema, &delta) {
        Ok(m) => m,
        Err(conflict @ SchemaError::Conflict { .. }) => return Ok(Err(conflict)),
        Err(e) => return Err(e.to_string()),
    };
    if !wrapped {
        let implied = implied_definitions(&condition, &format!("Referenced by the condition: {nl_condition}"));
        let missing = ParameterSchema::from_defs(implied.into_values().filter(|d| !merged.contains(&d.name)));
        merged = merge_schema(&merged, &missing).map_err(|e| e.to_string())?;
    }
    let undefined: Vec<String> = condition.referenced_params().into_iter().filter(|p| !merged.contains(p)).collect();
    if !undefined.is_empty() {
        return Err(format!("condition references undefined parameters: {}", undefined.join(", ")));
    }
    let problems = condition_type_problems(&condition, &merged);
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    Ok(Ok((condition, merged)))
}

/// Formalise one natural-language condition against `schema`, returning the
/// condition and the schema extended with any new parameters.
pub fn formalise_condition(
    generator: &Generator,
    argument: &str,
    nl_condition: &str,
    schema: &ParameterSchema,
) -> Result<(Condition, ParameterSchema), PipelineError> {
    if nl_condition.trim().is_empty() {
        return Err(PipelineError::Invalid(format!("empty condition for argument {argument:?}")));
    }
    let user = format!(
        "Argument: {argument}\nCondition: {nl_condition}\n\nCurrent parameter schema:\n{}\n\n\
         Reply as {{\"condition\": <JSON Schema>, \"parameters\": {{<name>: {{\"type\", \"description\", \"enum\"?, \
         \"minimum\"?, \"maximum\"?}}}}}} listing only parameters not yet in the schema. \
         Use {{\"condition\": {{}}}} when the condition always holds.",
        serde_json::to_string_pretty(schema).unwrap_or_default()
    );
    let request = GenerationRequest::new(FORMALISE_SYSTEM, user).with_schema(formalise_reply_schema());
    match generator
        .generate_with(Stage::QbafConstruction, &request, |_, json| accept_formalisation(json, schema, nl_condition))
    {
        Ok(Ok(done)) => Ok(done),
        Ok(Err(conflict)) => Err(conflict.into()),
        Err(LlmError::Exhausted { reason, .. }) => {
            Err(PipelineError::Protocol { context: format!("formalising {argument:?}"), reason })
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefaultEvent {
    pub option: EntityId,
    pub argument: ArgumentId,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildOutcome {
    pub generals: Vec<GeneralQbaf>,
    pub schema: ParameterSchema,
    pub failures: Vec<OptionFailure>,
    pub default_events: Vec<DefaultEvent>,
}

/// Build one general framework per option. Options are processed in order
/// and the schema is threaded through them; an option that fails leaves the
/// schema untouched. Fails only when every option fails.
pub fn build_general_qbafs(
    generator: &Generator,
    ontology: &Ontology,
    options: &[Entity],
    config: &MiningConfig,
) -> Result<BuildOutcome, PipelineError> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(PipelineError::Invalid(problems.join("; ")));
    }
    let generator = generator.with_max_attempts(config.max_attempts);
    let mut outcome = BuildOutcome::default();
    for option in options {
        match build_one(&generator, ontology, option, config, &outcome.schema) {
            Ok((general, schema, events)) => {
                info!(option = %option.id, arguments = general.qbaf.arguments.len(), "built general framework");
                outcome.generals.push(general);
                outcome.schema = schema;
                outcome.default_events.extend(events);
            }
            Err(e) => {
                warn!(option = %option.id, "construction failed: {e}");
                outcome.failures.push(OptionFailure { option: option.id.clone(), error: e.to_string() });
            }
        }
    }
    if !options.is_empty() && outcome.generals.is_empty() {
        return Err(PipelineError::AllFailed(outcome.failures));
    }
    Ok(outcome)
}

fn build_one(
    generator: &Generator,
    ontology: &Ontology,
    option: &Entity,
    config: &MiningConfig,
    schema: &ParameterSchema,
) -> Result<(GeneralQbaf, ParameterSchema, Vec<DefaultEvent>), PipelineError> {
    let chunks = chunks_for(ontology, &option.id).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let skeleton = mine_baf(generator, option, &chunks, config)?;
    let mut schema = schema.clone();
    let mut scores = BTreeMap::new();
    let mut formal = BTreeMap::new();
    let mut events = Vec::new();
    for node in &skeleton.nodes {
        let outcome = match (&node.parent, &node.nl_condition) {
            (None, _) if !config.score_root => ScoreOutcome { value: DEFAULT_BASE_SCORE, defaulted: None },
            (None, _) => {
                estimate_base_score(generator, &node.text, &ScoreContext { option, chunks: &chunks, parent: None })?
            }
            (Some((parent, polarity)), Some(nl)) => {
                let parent_text = &skeleton.node(parent).expect("parent is mined first").text;
                let ctx = ScoreContext { option, chunks: &chunks, parent: Some((parent_text, *polarity, nl)) };
                let outcome = estimate_base_score(generator, &node.text, &ctx)?;
                let (condition, next) = formalise_condition(generator, &node.text, nl, &schema)?;
                formal.insert(node.id.clone(), condition);
                schema = next;
                outcome
            }
            (Some(_), None) => {
                return Err(PipelineError::Protocol {
                    context: format!("mining {}", option.id),
                    reason: format!("argument {} has no condition", node.id),
                })
            }
        };
        if let Some(reason) = outcome.defaulted {
            events.push(DefaultEvent { option: option.id.clone(), argument: node.id.clone(), reason });
        }
        scores.insert(node.id.clone(), outcome.value);
    }
    let general = GeneralQbaf {
        entity: option.clone(),
        qbaf: skeleton.to_qbaf(&scores),
        nl_conditions: skeleton.nl_conditions(),
        formal_conditions: formal,
    };
    let problems = general.problems();
    if !problems.is_empty() {
        return Err(PipelineError::Protocol {
            context: format!("building {}", option.id),
            reason: problems.join("; "),
        });
    }
    Ok((general, schema, events))
}
