//! Validation against the JSON-schema subset tools may declare: `type`,
//! `properties`, `required`, `additionalProperties` (boolean), `items` and
//! `enum`. Unknown keywords are ignored.

use serde_json::Value;

const TYPES: [&str; 7] = ["object", "array", "string", "number", "integer", "boolean", "null"];

fn type_matches(ty: &str, v: &Value) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64() || v.as_f64().is_some_and(|f| f.fract() == 0.0),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

/// Checks that a schema only uses the supported vocabulary in a well-typed way.
pub fn check_schema(schema: &Value) -> Result<(), String> {
    let Some(obj) = schema.as_object() else { return Err("schema must be an object".into()) };
    if let Some(ty) = obj.get("type") {
        let ok = match ty {
            Value::String(s) => TYPES.contains(&s.as_str()),
            Value::Array(types) => types.iter().all(|t| t.as_str().is_some_and(|s| TYPES.contains(&s))),
            _ => false,
        };
        if !ok {
            return Err(format!("unsupported type {ty}"));
        }
    }
    if let Some(props) = obj.get("properties") {
        let Some(props) = props.as_object() else { return Err("properties must be an object".into()) };
        for (name, sub) in props {
            check_schema(sub).map_err(|e| format!("properties.{name}: {e}"))?;
        }
    }
    if let Some(req) = obj.get("required") {
        if !req.as_array().is_some_and(|r| r.iter().all(Value::is_string)) {
            return Err("required must be a list of strings".into());
        }
    }
    if let Some(extra) = obj.get("additionalProperties") {
        if !extra.is_boolean() {
            return Err("additionalProperties must be a boolean".into());
        }
    }
    if let Some(items) = obj.get("items") {
        check_schema(items).map_err(|e| format!("items: {e}"))?;
    }
    if let Some(en) = obj.get("enum") {
        if !en.is_array() {
            return Err("enum must be a list".into());
        }
    }
    Ok(())
}

/// Returns the first violation as `<path>: <reason>`, paths rooted at `$`.
pub fn validate(schema: &Value, instance: &Value) -> Result<(), String> {
    validate_at(schema, instance, "$")
}

fn validate_at(schema: &Value, v: &Value, path: &str) -> Result<(), String> {
    let Some(obj) = schema.as_object() else { return Ok(()) };
    if let Some(ty) = obj.get("type") {
        let ok = match ty {
            Value::String(s) => type_matches(s, v),
            Value::Array(types) => types.iter().filter_map(Value::as_str).any(|s| type_matches(s, v)),
            _ => true,
        };
        if !ok {
            return Err(format!("{path}: expected {}", ty.as_str().map_or_else(|| ty.to_string(), str::to_string)));
        }
    }
    if let Some(en) = obj.get("enum").and_then(Value::as_array) {
        if !en.contains(v) {
            return Err(format!("{path}: value not in enum"));
        }
    }
    if let Some(map) = v.as_object() {
        if let Some(req) = obj.get("required").and_then(Value::as_array) {
            for name in req.iter().filter_map(Value::as_str) {
                if !map.contains_key(name) {
                    return Err(format!("{path}: missing required property {name:?}"));
                }
            }
        }
        let props = obj.get("properties").and_then(Value::as_object);
        for (key, value) in map {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => validate_at(sub, value, &format!("{path}.{key}"))?,
                None if obj.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{path}: unexpected property {key:?}"));
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(list)) = (obj.get("items"), v.as_array()) {
        for (i, item) in list.iter().enumerate() {
            validate_at(items, item, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn vocabulary() {
        let schema = json!({
            "type": "object",
            "required": ["q"],
            "properties": {"q": {"type": "string"}, "n": {"type": "integer"}, "tags": {"type": "array", "items": {"enum": ["a", "b"]}}},
            "additionalProperties": false
        });
        assert!(check_schema(&schema).is_ok());
        assert!(validate(&schema, &json!({"q": "sky"})).is_ok());
        assert!(validate(&schema, &json!({"q": "sky", "n": 2, "tags": ["a"]})).is_ok());
        assert_eq!(validate(&schema, &json!({})).unwrap_err(), "$: missing required property \"q\"");
        assert_eq!(validate(&schema, &json!({"q": 1})).unwrap_err(), "$.q: expected string");
        assert_eq!(validate(&schema, &json!({"q": "x", "n": 1.5})).unwrap_err(), "$.n: expected integer");
        assert_eq!(validate(&schema, &json!({"q": "x", "tags": ["c"]})).unwrap_err(), "$.tags[0]: value not in enum");
        assert!(validate(&schema, &json!({"q": "x", "z": 0})).is_err());
    }

    #[test]
    fn bad_schemas() {
        assert!(check_schema(&json!("object")).is_err());
        assert!(check_schema(&json!({"type": "thing"})).is_err());
        assert!(check_schema(&json!({"required": "q"})).is_err());
        assert!(check_schema(&json!({"properties": {"q": {"type": 3}}})).is_err());
    }
}
