use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Boolean,
    Integer,
    Number,
    String,
}

impl ValueType {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "boolean" => Some(ValueType::Boolean),
            "integer" => Some(ValueType::Integer),
            "number" => Some(ValueType::Number),
            "string" => Some(ValueType::String),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Boolean => "boolean",
            ValueType::Integer => "integer",
            ValueType::Number => "number",
            ValueType::String => "string",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Integer | ValueType::Number)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A scalar case parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Integer(i64),
    Number(f64),
    String(String),
}

impl ParamValue {
    pub fn from_json(value: &Value) -> Option<Self> {
        match value {
            Value::Bool(b) => Some(ParamValue::Bool(*b)),
            Value::Number(n) => Some(match n.as_i64() {
                Some(i) => ParamValue::Integer(i),
                None => ParamValue::Number(n.as_f64()?),
            }),
            Value::String(s) => Some(ParamValue::String(s.clone())),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            ParamValue::Bool(b) => Value::Bool(*b),
            ParamValue::Integer(i) => Value::from(*i),
            ParamValue::Number(f) => Number::from_f64(*f).map_or(Value::Null, Value::Number),
            ParamValue::String(s) => Value::String(s.clone()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Integer(i) => Some(*i as f64),
            ParamValue::Number(f) => Some(*f),
            _ => None,
        }
    }

    /// JSON-Schema `type` membership; integral floats count as integers.
    pub fn has_type(&self, ty: ValueType) -> bool {
        match (self, ty) {
            (ParamValue::Bool(_), ValueType::Boolean) => true,
            (ParamValue::String(_), ValueType::String) => true,
            (ParamValue::Integer(_), ValueType::Integer | ValueType::Number) => true,
            (ParamValue::Number(_), ValueType::Number) => true,
            (ParamValue::Number(f), ValueType::Integer) => f.is_finite() && f.fract() == 0.0,
            _ => false,
        }
    }

    /// Most specific type name of the value, for diagnostics.
    pub fn type_name(&self) -> &'static str {
        match self {
            ParamValue::Bool(_) => "boolean",
            ParamValue::Integer(_) => "integer",
            ParamValue::Number(_) => "number",
            ParamValue::String(_) => "string",
        }
    }

    /// JSON-Schema instance equality: numbers compare by value.
    pub fn json_eq(&self, other: &ParamValue) -> bool {
        match (self, other) {
            (ParamValue::Integer(a), ParamValue::Integer(b)) => a == b,
            (a, b) if a.as_f64().is_some() && b.as_f64().is_some() => a.as_f64() == b.as_f64(),
            (ParamValue::Bool(a), ParamValue::Bool(b)) => a == b,
            (ParamValue::String(a), ParamValue::String(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

impl From<bool> for ParamValue {
    fn from(b: bool) -> Self {
        ParamValue::Bool(b)
    }
}

impl From<i64> for ParamValue {
    fn from(i: i64) -> Self {
        ParamValue::Integer(i)
    }
}

impl From<f64> for ParamValue {
    fn from(f: f64) -> Self {
        ParamValue::Number(f)
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::String(s.to_owned())
    }
}

/// Result of looking a parameter up in a case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lookup<'a> {
    Absent,
    /// Present but explicitly marked as undeterminable.
    Unknown,
    Value(&'a ParamValue),
}

/// Parameters extracted for one case. A `null` entry in the JSON form marks a
/// parameter as unknown; it behaves like an absent parameter for property
/// constraints but fails `required`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseParameters(BTreeMap<String, Option<ParamValue>>);

impl CaseParameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<ParamValue>) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: &str, value: impl Into<ParamValue>) {
        self.0.insert(name.to_owned(), Some(value.into()));
    }

    pub fn mark_unknown(&mut self, name: &str) {
        self.0.insert(name.to_owned(), None);
    }

    pub fn remove(&mut self, name: &str) {
        self.0.remove(name);
    }

    pub fn get(&self, name: &str) -> Lookup<'_> {
        match self.0.get(name) {
            None => Lookup::Absent,
            Some(None) => Lookup::Unknown,
            Some(Some(v)) => Lookup::Value(v),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Option<&ParamValue>)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Overlay `other` on top of `self`.
    pub fn merged_with(&self, other: &CaseParameters) -> CaseParameters {
        let mut out = self.clone();
        for (k, v) in &other.0 {
            out.0.insert(k.clone(), v.clone());
        }
        out
    }

    /// The JSON object a JSON-Schema validator sees: unknown entries are omitted.
    pub fn to_instance(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in &self.0 {
            if let Some(v) = v {
                map.insert(k.clone(), v.to_json());
            }
        }
        Value::Object(map)
    }
}
