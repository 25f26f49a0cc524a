//! Strict JSON extraction from free-form completions.

use std::collections::BTreeMap;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: String,
    pub required: bool,
    /// Allowed values, compared case-insensitively after trimming. The
    /// returned value is the canonical spelling from this list.
    pub domain: Option<Vec<String>>,
}

impl FieldSpec {
    pub fn required(name: &str) -> Self {
        Self {
            name: name.to_string(),
            required: true,
            domain: None,
        }
    }

    pub fn optional(name: &str) -> Self {
        Self {
            name: name.to_string(),
            required: false,
            domain: None,
        }
    }

    pub fn one_of(name: &str, values: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            required: true,
            domain: Some(values.iter().map(|v| v.to_string()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JsonSchema {
    pub fields: Vec<FieldSpec>,
}

impl JsonSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Self {
        Self { fields }
    }

    /// Checks one parsed value; returns the string fields it declares.
    pub fn check(&self, value: &Value) -> Result<StructuredRecord, String> {
        let obj = value.as_object().ok_or("not a JSON object")?;
        let mut out = BTreeMap::new();
        for field in &self.fields {
            let raw = match obj.get(&field.name) {
                None | Some(Value::Null) => {
                    if field.required {
                        return Err(format!("missing required key {:?}", field.name));
                    }
                    continue;
                }
                Some(Value::String(s)) => s.trim().to_string(),
                Some(Value::Number(n)) if field.domain.is_none() => n.to_string(),
                Some(Value::Bool(b)) if field.domain.is_none() => b.to_string(),
                Some(other) => {
                    return Err(format!("key {:?} must be a string, got {other}", field.name));
                }
            };
            if raw.is_empty() {
                if field.required {
                    return Err(format!("required key {:?} is empty", field.name));
                }
                continue;
            }
            let value = match &field.domain {
                Some(domain) => domain
                    .iter()
                    .find(|d| d.eq_ignore_ascii_case(&raw))
                    .cloned()
                    .ok_or_else(|| format!("key {:?}: {raw:?} not in {domain:?}", field.name))?,
                None => raw,
            };
            out.insert(field.name.clone(), value);
        }
        Ok(StructuredRecord(out))
    }
}

/// Validated string fields of an agent reply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructuredRecord(pub BTreeMap<String, String>);

impl StructuredRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// For keys the schema marked required.
    pub fn expect(&self, key: &str) -> &str {
        self.get(key).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("malformed agent output: {reason}")]
pub struct MalformedOutput {
    pub reason: String,
}

/// Bodies of ``` fenced blocks, in order.
fn fenced_blocks(content: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = content;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        // skip an info string such as `json`
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        let Some(end) = after[body_start..].find("```") else { break };
        blocks.push(&after[body_start..body_start + end]);
        rest = &after[body_start + end + 3..];
    }
    blocks
}

fn objects_in(text: &str) -> impl Iterator<Item = Value> + '_ {
    text.char_indices()
        .filter(|&(_, c)| c == '{')
        .filter_map(move |(i, _)| {
            serde_json::Deserializer::from_str(&text[i..])
                .into_iter::<Value>()
                .next()
                .and_then(Result::ok)
        })
}

/// Returns the first JSON object in `content` that satisfies `schema`.
/// Fenced code blocks are searched before the surrounding text.
pub fn extract_json(content: &str, schema: &JsonSchema) -> Result<StructuredRecord, MalformedOutput> {
    let mut last_violation: Option<String> = None;
    let candidates = fenced_blocks(content)
        .into_iter()
        .flat_map(objects_in)
        .chain(objects_in(content));
    for value in candidates {
        match schema.check(&value) {
            Ok(record) => return Ok(record),
            Err(why) => last_violation = Some(why),
        }
    }
    Err(MalformedOutput {
        reason: last_violation.unwrap_or_else(|| "no JSON object found".to_string()),
    })
}
