//! Byte-stable JSON encoding used for every persisted artifact.
//!
//! Object keys are sorted, floats use the shortest round-trip form, output is
//! UTF-8 with LF line endings and a trailing newline.

use serde::Serialize;
use serde_json::{Map, Value};

/// Recursively rebuild `value` with object keys in sorted order.
pub fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut sorted = Map::new();
            for (k, v) in entries {
                sorted.insert(k, sort_keys(v));
            }
            Value::Object(sorted)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Pretty, key-sorted document form with a trailing newline.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = sort_keys(serde_json::to_value(value)?);
    let mut out = serde_json::to_string_pretty(&value)?;
    out.push('\n');
    Ok(out)
}

/// Single-line key-sorted form, used for JSON-Lines records.
pub fn to_canonical_line<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = sort_keys(serde_json::to_value(value)?);
    serde_json::to_string(&value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_at_every_level() {
        let v = json!({"b": 1, "a": {"z": [ {"y": 1, "x": 2} ], "c": 0.5}});
        let line = to_canonical_line(&v).unwrap();
        assert_eq!(line, r#"{"a":{"c":0.5,"z":[{"x":2,"y":1}]},"b":1}"#);
    }

    #[test]
    fn document_form_ends_with_newline() {
        let s = to_canonical_string(&json!({"k": 1.0})).unwrap();
        assert!(s.ends_with("}\n"));
        assert!(!s.contains('\r'));
        assert!(s.contains("1.0"));
    }
}
