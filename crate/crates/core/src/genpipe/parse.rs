//! Turning a model reply into template fields.

use indexmap::IndexMap;
use serde_json::{Map, Value};

use crate::corpus::{normalize_field_name, parse_leading_number, FieldValue, TemplateSchema};

fn strip_fence(text: &str) -> &str {
    let Some(start) = text.find("```") else { return text };
    let after = &text[start + 3..];
    // Skip the info string (e.g. `json`) up to the end of the fence line.
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => after,
    };
    match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

/// Finds the JSON object in a reply, tolerating code fences and text around
/// the object.
pub fn extract_json_object(reply: &str) -> Result<Map<String, Value>, String> {
    let body = strip_fence(reply).trim();
    let parsed = serde_json::from_str::<Value>(body).or_else(|first| {
        match (body.find('{'), body.rfind('}')) {
            (Some(a), Some(b)) if a < b => serde_json::from_str::<Value>(&body[a..=b]).map_err(|e| e.to_string()),
            _ => Err(first.to_string()),
        }
    })?;
    match parsed {
        Value::Object(m) => Ok(m),
        other => Err(format!("expected a JSON object, got {}", type_name(&other))),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn scalar_text(key: &str, v: &Value) -> Result<String, String> {
    Ok(match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => FieldValue::Number(n.as_f64().unwrap_or(f64::NAN)).render(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(|i| scalar_text(key, i)).collect::<Result<Vec<_>, _>>()?.join("\n"),
        Value::Object(_) => return Err(format!("field '{key}' holds a nested object")),
    })
}

/// Converts the reply object to template fields: keys are normalized, values
/// of numeric fields become numbers where they parse, everything else text.
/// Template fields come first in template order, unknown keys after.
pub fn fields_from_json(obj: &Map<String, Value>, schema: &TemplateSchema) -> Result<IndexMap<String, FieldValue>, String> {
    let mut raw: IndexMap<String, FieldValue> = IndexMap::new();
    for (k, v) in obj {
        let key = normalize_field_name(k);
        let value = if schema.is_numeric(&key) {
            match v {
                Value::Number(n) => FieldValue::Number(n.as_f64().unwrap_or(f64::NAN)),
                Value::String(s) => match parse_leading_number(s) {
                    Some(n) => FieldValue::Number(n),
                    None => FieldValue::Text(s.clone()),
                },
                other => FieldValue::Text(scalar_text(&key, other)?),
            }
        } else {
            FieldValue::Text(scalar_text(&key, v)?)
        };
        if raw.insert(key.clone(), value).is_some() {
            return Err(format!("key '{key}' appears twice after normalization"));
        }
    }
    let mut out = IndexMap::with_capacity(raw.len());
    for name in &schema.field_names {
        if let Some(v) = raw.shift_remove(name) {
            out.insert(name.clone(), v);
        }
    }
    out.extend(raw);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SchemaRegistry;

    #[test]
    fn fences_and_chatter_are_tolerated() {
        for reply in [
            "{\"a\": 1}",
            "```json\n{\"a\": 1}\n```",
            "```\n{\"a\": 1}\n```\nHope this helps.",
            "Here is the review: {\"a\": 1} -- end",
        ] {
            assert_eq!(extract_json_object(reply).unwrap()["a"], 1, "{reply}");
        }
        assert!(extract_json_object("no json here").is_err());
        assert!(extract_json_object("[1, 2]").unwrap_err().contains("array"));
        assert!(extract_json_object("{\"a\": }").is_err());
    }

    #[test]
    fn values_follow_field_types() {
        let reg = SchemaRegistry::bundled();
        let schema = reg.get("ICLR", 2022).unwrap();
        let obj = extract_json_object(
            r#"{"Confidence": "4: confident", "main_review": ["point one", "point two"],
                "flag_for_ethics_review": true, "correctness": 3, "mood": "happy"}"#,
        )
        .unwrap();
        let f = fields_from_json(&obj, schema).unwrap();
        assert_eq!(f["confidence"], FieldValue::Number(4.0));
        assert_eq!(f["main review"], FieldValue::Text("point one\npoint two".into()));
        assert_eq!(f["flag for ethics review"], FieldValue::Text("true".into()));
        let keys: Vec<&str> = f.keys().map(String::as_str).collect();
        assert_eq!(keys, ["main review", "correctness", "flag for ethics review", "confidence", "mood"]);
        let nested = extract_json_object(r#"{"main_review": {"x": 1}}"#).unwrap();
        assert!(fields_from_json(&nested, schema).is_err());
        let dup = extract_json_object(r#"{"main_review": "a", "Main Review": "b"}"#).unwrap();
        assert!(fields_from_json(&dup, schema).unwrap_err().contains("twice"));
    }
}
