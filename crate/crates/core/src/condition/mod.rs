//! Formal argument-applicability conditions.
//!
//! Conditions use a closed subset of JSON Schema (draft 2020-12): `properties`
//! with `type`, `const`, `enum`, `minimum`, `maximum`, `exclusiveMinimum` and
//! `exclusiveMaximum`, plus `required`, `anyOf`, `allOf` and `not`. A
//! `$schema` entry and `"type": "object"` are accepted and ignored at any
//! level. Evaluation follows JSON-Schema semantics, so a property constraint
//! on a parameter the case does not have is vacuously satisfied.

mod schema;
mod value;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

pub use schema::{merge_schema, validate_params, ParamDef, ParamReport, ParamViolation, ParameterSchema, SchemaError};
pub use value::{CaseParameters, Lookup, ParamValue, ValueType};

pub const SCHEMA_DIALECT: &str = "https://json-schema.org/draft/2020-12/schema";

/// Constraints on one named parameter. All present keywords must hold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PropertyConstraint {
    pub param: String,
    pub value_type: Option<ValueType>,
    pub constant: Option<ParamValue>,
    pub allowed: Option<Vec<ParamValue>>,
    pub minimum: Option<Number>,
    pub maximum: Option<Number>,
    pub exclusive_minimum: Option<Number>,
    pub exclusive_maximum: Option<Number>,
}

impl PropertyConstraint {
    pub fn new(param: &str) -> Self {
        PropertyConstraint { param: param.to_owned(), ..Default::default() }
    }

    pub fn typed(mut self, ty: ValueType) -> Self {
        self.value_type = Some(ty);
        self
    }

    pub fn constant(mut self, v: impl Into<ParamValue>) -> Self {
        self.constant = Some(v.into());
        self
    }

    pub fn one_of(mut self, values: Vec<ParamValue>) -> Self {
        self.allowed = Some(values);
        self
    }

    pub fn minimum(mut self, n: impl Into<Number>) -> Self {
        self.minimum = Some(n.into());
        self
    }

    pub fn maximum(mut self, n: impl Into<Number>) -> Self {
        self.maximum = Some(n.into());
        self
    }

    pub fn exclusive_minimum(mut self, n: impl Into<Number>) -> Self {
        self.exclusive_minimum = Some(n.into());
        self
    }

    pub fn exclusive_maximum(mut self, n: impl Into<Number>) -> Self {
        self.exclusive_maximum = Some(n.into());
        self
    }

    fn numeric_bounds(&self) -> [(&'static str, Option<&Number>); 4] {
        [
            ("minimum", self.minimum.as_ref()),
            ("maximum", self.maximum.as_ref()),
            ("exclusiveMinimum", self.exclusive_minimum.as_ref()),
            ("exclusiveMaximum", self.exclusive_maximum.as_ref()),
        ]
    }

    fn has_numeric_bounds(&self) -> bool {
        self.numeric_bounds().iter().any(|(_, b)| b.is_some())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Condition {
    True,
    Property(PropertyConstraint),
    Required(Vec<String>),
    AnyOf(Vec<Condition>),
    AllOf(Vec<Condition>),
    Not(Box<Condition>),
}

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("malformed condition JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported keyword {keyword:?} at {path}")]
    Unsupported { keyword: String, path: String },
    #[error("invalid condition at {path}: {reason}")]
    Invalid { path: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("keyword {keyword} cannot apply to parameter {param} with {found} value {value}")]
    TypeMismatch { param: String, keyword: String, found: String, value: String },
}

impl EvalError {
    pub fn param(&self) -> &str {
        match self {
            EvalError::TypeMismatch { param, .. } => param,
        }
    }
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => chars.all(|c| c.is_ascii_alphanumeric() || c == '_'),
        _ => false,
    }
}

/// Parse a condition document from text.
pub fn parse_condition(text: &str) -> Result<Condition, ConditionError> {
    let value: Value = serde_json::from_str(text)?;
    Condition::from_json(&value)
}

impl Condition {
    pub fn property(constraint: PropertyConstraint) -> Self {
        Condition::Property(constraint)
    }

    pub fn from_json(value: &Value) -> Result<Self, ConditionError> {
        parse_node(value, "#")
    }

    /// Compact form with exactly one keyword per node and no wrapper.
    pub fn to_json(&self) -> Value {
        match self {
            Condition::True => Value::Object(Map::new()),
            Condition::Property(c) => {
                let mut props = Map::new();
                props.insert(c.param.clone(), constraint_to_json(c));
                single("properties", Value::Object(props))
            }
            Condition::Required(names) => {
                single("required", Value::Array(names.iter().cloned().map(Value::String).collect()))
            }
            Condition::AnyOf(children) => single("anyOf", Value::Array(children.iter().map(Self::to_json).collect())),
            Condition::AllOf(children) => single("allOf", Value::Array(children.iter().map(Self::to_json).collect())),
            Condition::Not(child) => single("not", child.to_json()),
        }
    }

    /// Standalone document with the `$schema` / `"type": "object"` wrapper.
    pub fn to_document(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("$schema".into(), Value::String(SCHEMA_DIALECT.into()));
        obj.insert("type".into(), Value::String("object".into()));
        if let Value::Object(body) = self.to_json() {
            obj.extend(body);
        }
        Value::Object(obj)
    }

    /// Every parameter name the condition mentions.
    pub fn referenced_params(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut BTreeSet<String>) {
        match self {
            Condition::True => {}
            Condition::Property(c) => {
                out.insert(c.param.clone());
            }
            Condition::Required(names) => out.extend(names.iter().cloned()),
            Condition::AnyOf(cs) | Condition::AllOf(cs) => cs.iter().for_each(|c| c.collect_params(out)),
            Condition::Not(c) => c.collect_params(out),
        }
    }

    pub fn eval(&self, params: &CaseParameters) -> Result<bool, EvalError> {
        eval_condition(self, params)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Condition::from_json(&value).map_err(serde::de::Error::custom)
    }
}

fn single(key: &str, value: Value) -> Value {
    let mut obj = Map::new();
    obj.insert(key.to_owned(), value);
    Value::Object(obj)
}

fn constraint_to_json(c: &PropertyConstraint) -> Value {
    let mut obj = Map::new();
    if let Some(ty) = c.value_type {
        obj.insert("type".into(), Value::String(ty.as_str().into()));
    }
    if let Some(v) = &c.constant {
        obj.insert("const".into(), v.to_json());
    }
    if let Some(values) = &c.allowed {
        obj.insert("enum".into(), Value::Array(values.iter().map(ParamValue::to_json).collect()));
    }
    for (key, bound) in c.numeric_bounds() {
        if let Some(n) = bound {
            obj.insert(key.into(), Value::Number(n.clone()));
        }
    }
    Value::Object(obj)
}

fn unsupported(keyword: &str, path: &str) -> ConditionError {
    ConditionError::Unsupported { keyword: keyword.to_owned(), path: path.to_owned() }
}

fn invalid(path: &str, reason: impl Into<String>) -> ConditionError {
    ConditionError::Invalid { path: path.to_owned(), reason: reason.into() }
}

fn parse_node(value: &Value, path: &str) -> Result<Condition, ConditionError> {
    let obj = match value {
        Value::Object(obj) => obj,
        Value::Bool(true) => return Ok(Condition::True),
        _ => return Err(invalid(path, "expected a schema object")),
    };
    let mut parts = Vec::new();
    for (key, val) in obj {
        let here = format!("{path}/{key}");
        match key.as_str() {
            "$schema" => {}
            "type" => {
                if val != "object" {
                    return Err(invalid(&here, "only \"object\" is accepted at schema level"));
                }
            }
            "properties" => {
                let props = val.as_object().ok_or_else(|| invalid(&here, "expected an object"))?;
                for (name, schema) in props {
                    parts.push(Condition::Property(parse_constraint(name, schema, &format!("{here}/{name}"))?));
                }
            }
            "required" => {
                let names = val.as_array().ok_or_else(|| invalid(&here, "expected an array"))?;
                let names = names
                    .iter()
                    .map(|n| match n.as_str() {
                        Some(s) if is_identifier(s) => Ok(s.to_owned()),
                        _ => Err(invalid(&here, format!("{n} is not a parameter identifier"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if names.is_empty() {
                    return Err(invalid(&here, "required list is empty"));
                }
                if let Some(dup) = names.iter().enumerate().find(|(i, n)| names[..*i].contains(n)).map(|(_, n)| n) {
                    return Err(invalid(&here, format!("{dup} is listed twice")));
                }
                parts.push(Condition::Required(names));
            }
            "anyOf" | "allOf" => {
                let items = val.as_array().ok_or_else(|| invalid(&here, "expected an array"))?;
                if items.is_empty() {
                    return Err(invalid(&here, "combinator has no children"));
                }
                let children = items
                    .iter()
                    .enumerate()
                    .map(|(i, item)| parse_node(item, &format!("{here}/{i}")))
                    .collect::<Result<Vec<_>, _>>()?;
                parts.push(if key == "anyOf" { Condition::AnyOf(children) } else { Condition::AllOf(children) });
            }
            "not" => parts.push(Condition::Not(Box::new(parse_node(val, &here)?))),
            other => return Err(unsupported(other, path)),
        }
    }
    Ok(match parts.len() {
        0 => Condition::True,
        1 => parts.pop().expect("one part"),
        _ => Condition::AllOf(parts),
    })
}

fn parse_constraint(name: &str, value: &Value, path: &str) -> Result<PropertyConstraint, ConditionError> {
    if !is_identifier(name) {
        return Err(invalid(path, format!("{name:?} is not a parameter identifier")));
    }
    let obj = value.as_object().ok_or_else(|| invalid(path, "expected a property schema object"))?;
    let mut c = PropertyConstraint::new(name);
    for (key, val) in obj {
        let here = format!("{path}/{key}");
        let number = || match val {
            Value::Number(n) => Ok(n.clone()),
            _ => Err(invalid(&here, "expected a number")),
        };
        let scalar = |v: &Value| ParamValue::from_json(v).ok_or_else(|| invalid(&here, "expected a scalar value"));
        match key.as_str() {
            "type" => {
                let ty = val
                    .as_str()
                    .and_then(ValueType::parse)
                    .ok_or_else(|| invalid(&here, format!("unsupported type {val}")))?;
                c.value_type = Some(ty);
            }
            "const" => c.constant = Some(scalar(val)?),
            "enum" => {
                let items = val.as_array().ok_or_else(|| invalid(&here, "expected an array"))?;
                if items.is_empty() {
                    return Err(invalid(&here, "enum is empty"));
                }
                c.allowed = Some(items.iter().map(scalar).collect::<Result<_, _>>()?);
            }
            "minimum" => c.minimum = Some(number()?),
            "maximum" => c.maximum = Some(number()?),
            "exclusiveMinimum" => c.exclusive_minimum = Some(number()?),
            "exclusiveMaximum" => c.exclusive_maximum = Some(number()?),
            other => return Err(unsupported(other, path)),
        }
    }
    if let Some(ty) = c.value_type {
        if !ty.is_numeric() && c.has_numeric_bounds() {
            return Err(invalid(path, format!("numeric keyword on {ty} constraint")));
        }
    }
    Ok(c)
}

fn compare(x: &ParamValue, bound: &Number) -> Option<std::cmp::Ordering> {
    match (x, bound.as_i64()) {
        (ParamValue::Integer(a), Some(b)) => Some(a.cmp(&b)),
        _ => x.as_f64()?.partial_cmp(&bound.as_f64()?),
    }
}

fn eval_constraint(c: &PropertyConstraint, value: &ParamValue) -> Result<bool, EvalError> {
    if c.has_numeric_bounds() && value.as_f64().is_none() {
        let keyword = c.numeric_bounds().iter().find(|(_, b)| b.is_some()).map(|(k, _)| *k).unwrap_or("minimum");
        return Err(EvalError::TypeMismatch {
            param: c.param.clone(),
            keyword: keyword.to_owned(),
            found: value.type_name().to_owned(),
            value: value.to_string(),
        });
    }
    use std::cmp::Ordering::*;
    let mut ok = true;
    if let Some(ty) = c.value_type {
        ok &= value.has_type(ty);
    }
    if let Some(k) = &c.constant {
        ok &= value.json_eq(k);
    }
    if let Some(values) = &c.allowed {
        ok &= values.iter().any(|v| v.json_eq(value));
    }
    if let Some(b) = &c.minimum {
        ok &= matches!(compare(value, b), Some(Greater | Equal));
    }
    if let Some(b) = &c.maximum {
        ok &= matches!(compare(value, b), Some(Less | Equal));
    }
    if let Some(b) = &c.exclusive_minimum {
        ok &= matches!(compare(value, b), Some(Greater));
    }
    if let Some(b) = &c.exclusive_maximum {
        ok &= matches!(compare(value, b), Some(Less));
    }
    Ok(ok)
}

/// Evaluate `cond` against a case. Every branch is evaluated so that type
/// errors surface regardless of combinator short-circuiting.
pub fn eval_condition(cond: &Condition, params: &CaseParameters) -> Result<bool, EvalError> {
    match cond {
        Condition::True => Ok(true),
        Condition::Property(c) => match params.get(&c.param) {
            Lookup::Absent | Lookup::Unknown => Ok(true),
            Lookup::Value(v) => eval_constraint(c, v),
        },
        Condition::Required(names) => Ok(names.iter().all(|n| matches!(params.get(n), Lookup::Value(_)))),
        Condition::AnyOf(children) => {
            let results = children.iter().map(|c| eval_condition(c, params)).collect::<Result<Vec<_>, _>>()?;
            Ok(results.into_iter().any(|b| b))
        }
        Condition::AllOf(children) => {
            let results = children.iter().map(|c| eval_condition(c, params)).collect::<Result<Vec<_>, _>>()?;
            Ok(results.into_iter().all(|b| b))
        }
        Condition::Not(child) => Ok(!eval_condition(child, params)?),
    }
}
