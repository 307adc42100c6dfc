//! The global parameter schema: typed definitions of every case parameter
//! referenced by a formal condition.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};
use thiserror::Error;

use super::is_identifier;
use super::value::{CaseParameters, ParamValue, ValueType};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDef {
    pub name: String,
    pub value_type: ValueType,
    pub description: String,
    pub allowed: Option<Vec<ParamValue>>,
    pub minimum: Option<Number>,
    pub maximum: Option<Number>,
}

impl ParamDef {
    pub fn new(name: &str, value_type: ValueType, description: &str) -> Self {
        ParamDef {
            name: name.to_owned(),
            value_type,
            description: description.to_owned(),
            allowed: None,
            minimum: None,
            maximum: None,
        }
    }

    pub fn with_allowed(mut self, allowed: Vec<ParamValue>) -> Self {
        self.allowed = Some(allowed);
        self
    }

    pub fn with_range(mut self, minimum: Option<Number>, maximum: Option<Number>) -> Self {
        self.minimum = minimum;
        self.maximum = maximum;
        self
    }

    /// Invariant violations of this definition on its own.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !is_identifier(&self.name) {
            out.push(format!("parameter name {:?} is not a valid identifier", self.name));
        }
        if let Some(allowed) = &self.allowed {
            for v in allowed {
                if !v.has_type(self.value_type) {
                    out.push(format!("allowed value {v} of {} is not of type {}", self.name, self.value_type));
                }
            }
        }
        if (self.minimum.is_some() || self.maximum.is_some()) && !self.value_type.is_numeric() {
            out.push(format!("range given for non-numeric parameter {}", self.name));
        }
        if let (Some(lo), Some(hi)) = (&self.minimum, &self.maximum) {
            if lo.as_f64() > hi.as_f64() {
                out.push(format!("minimum {lo} exceeds maximum {hi} for {}", self.name));
            }
        }
        out
    }

    fn to_wire(&self) -> ParamDefWire {
        ParamDefWire {
            value_type: self.value_type,
            description: self.description.clone(),
            allowed: self.allowed.clone(),
            minimum: self.minimum.clone(),
            maximum: self.maximum.clone(),
        }
    }

    fn from_wire(name: String, wire: ParamDefWire) -> Self {
        ParamDef {
            name,
            value_type: wire.value_type,
            description: wire.description,
            allowed: wire.allowed,
            minimum: wire.minimum,
            maximum: wire.maximum,
        }
    }

    /// JSON-Schema fragment describing a value of this parameter.
    pub fn json_schema(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("type".into(), Value::String(self.value_type.as_str().into()));
        obj.insert("description".into(), Value::String(self.description.clone()));
        if let Some(allowed) = &self.allowed {
            obj.insert("enum".into(), Value::Array(allowed.iter().map(ParamValue::to_json).collect()));
        }
        if let Some(lo) = &self.minimum {
            obj.insert("minimum".into(), Value::Number(lo.clone()));
        }
        if let Some(hi) = &self.maximum {
            obj.insert("maximum".into(), Value::Number(hi.clone()));
        }
        Value::Object(obj)
    }
}

impl fmt::Display for ParamDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.json_schema())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDefWire {
    #[serde(rename = "type")]
    value_type: ValueType,
    #[serde(default)]
    description: String,
    #[serde(rename = "enum", default, skip_serializing_if = "Option::is_none")]
    allowed: Option<Vec<ParamValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    minimum: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    maximum: Option<Number>,
}

/// Name-ordered map of parameter definitions. Serialises as a JSON object
/// keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSchema(BTreeMap<String, ParamDef>);

impl Serialize for ParameterSchema {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let wire: BTreeMap<&String, ParamDefWire> = self.0.iter().map(|(k, d)| (k, d.to_wire())).collect();
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParameterSchema {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = BTreeMap::<String, ParamDefWire>::deserialize(deserializer)?;
        Ok(ParameterSchema(wire.into_iter().map(|(k, w)| (k.clone(), ParamDef::from_wire(k, w))).collect()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("conflicting definitions for parameter {name}: existing {existing}, proposed {proposed}")]
    Conflict { name: String, existing: Box<ParamDef>, proposed: Box<ParamDef> },
    #[error("invalid parameter definition: {0}")]
    Invalid(String),
}

impl ParameterSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_defs(defs: impl IntoIterator<Item = ParamDef>) -> Self {
        ParameterSchema(defs.into_iter().map(|d| (d.name.clone(), d)).collect())
    }

    pub fn get(&self, name: &str) -> Option<&ParamDef> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamDef> {
        self.0.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn defs(&self) -> impl Iterator<Item = &ParamDef> {
        self.0.values()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn problems(&self) -> Vec<String> {
        self.0.values().flat_map(ParamDef::problems).collect()
    }

    /// JSON Schema for an extraction reply: one optional property per
    /// parameter, `null` marking an undeterminable value.
    pub fn extraction_schema(&self) -> Value {
        let mut props = serde_json::Map::new();
        for def in self.0.values() {
            let mut fragment = def.json_schema();
            if let Value::Object(obj) = &mut fragment {
                obj.insert("type".into(), serde_json::json!([def.value_type.as_str(), "null"]));
                if let Some(Value::Array(values)) = obj.get_mut("enum") {
                    values.push(Value::Null);
                }
            }
            props.insert(def.name.clone(), fragment);
        }
        serde_json::json!({
            "type": "object",
            "properties": Value::Object(props),
            "additionalProperties": false,
        })
    }
}

/// Union of two schemas. Identical redefinitions are no-ops; differing ones
/// are conflicts.
pub fn merge_schema(current: &ParameterSchema, additions: &ParameterSchema) -> Result<ParameterSchema, SchemaError> {
    let mut merged = current.clone();
    for def in additions.defs() {
        let problems = def.problems();
        if !problems.is_empty() {
            return Err(SchemaError::Invalid(problems.join("; ")));
        }
        match merged.0.get(&def.name) {
            Some(existing) if existing == def => {}
            Some(existing) => {
                return Err(SchemaError::Conflict {
                    name: def.name.clone(),
                    existing: Box::new(existing.clone()),
                    proposed: Box::new(def.clone()),
                })
            }
            None => {
                merged.0.insert(def.name.clone(), def.clone());
            }
        }
    }
    Ok(merged)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamViolation {
    UnknownParameter { name: String },
    TypeMismatch { name: String, expected: ValueType, found: String },
    NotAllowed { name: String, value: String },
    OutOfRange { name: String, value: String },
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamViolation::UnknownParameter { name } => write!(f, "unknown parameter {name}"),
            ParamViolation::TypeMismatch { name, expected, found } => {
                write!(f, "type mismatch for {name}: expected {expected}, found {found}")
            }
            ParamViolation::NotAllowed { name, value } => write!(f, "value {value} not allowed for {name}"),
            ParamViolation::OutOfRange { name, value } => write!(f, "value {value} out of range for {name}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ParamReport {
    pub violations: Vec<ParamViolation>,
}

impl ParamReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate_params(params: &CaseParameters, schema: &ParameterSchema) -> ParamReport {
    let mut violations = Vec::new();
    for (name, value) in params.iter() {
        let Some(def) = schema.get(name) else {
            violations.push(ParamViolation::UnknownParameter { name: name.to_owned() });
            continue;
        };
        let Some(value) = value else { continue };
        if !value.has_type(def.value_type) {
            violations.push(ParamViolation::TypeMismatch {
                name: name.to_owned(),
                expected: def.value_type,
                found: value.type_name().to_owned(),
            });
            continue;
        }
        if let Some(allowed) = &def.allowed {
            if !allowed.iter().any(|a| a.json_eq(value)) {
                violations.push(ParamViolation::NotAllowed { name: name.to_owned(), value: value.to_string() });
            }
        }
        if let Some(x) = value.as_f64() {
            let below = def.minimum.as_ref().and_then(Number::as_f64).is_some_and(|lo| x < lo);
            let above = def.maximum.as_ref().and_then(Number::as_f64).is_some_and(|hi| x > hi);
            if below || above {
                violations.push(ParamViolation::OutOfRange { name: name.to_owned(), value: value.to_string() });
            }
        }
    }
    ParamReport { violations }
}
