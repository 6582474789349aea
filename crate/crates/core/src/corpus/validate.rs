use serde::{Deserialize, Serialize};

use super::{FieldValue, ReviewRecord, TemplateSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfRange {
    pub field: String,
    pub value: f64,
    pub min: i64,
    pub max: i64,
}

/// Outcome of checking one record against its template. Validation never
/// fails; problems are listed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub review_id: String,
    pub schema: String,
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub out_of_range: Vec<OutOfRange>,
    /// Numeric template fields holding text that does not parse as a number.
    pub not_numeric: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.missing.is_empty()
            && self.extra.is_empty()
            && self.out_of_range.is_empty()
            && self.not_numeric.is_empty()
    }
}

pub fn validate_record(record: &ReviewRecord, schema: &TemplateSchema) -> ValidationReport {
    let missing = schema
        .field_names
        .iter()
        .filter(|f| !record.fields.contains_key(*f))
        .cloned()
        .collect();
    let extra = record
        .fields
        .keys()
        .filter(|k| !schema.field_names.contains(k))
        .cloned()
        .collect();
    let mut out_of_range = Vec::new();
    let mut not_numeric = Vec::new();
    for (field, range) in &schema.numeric_field_ranges {
        match record.fields.get(field) {
            Some(FieldValue::Number(v)) if !range.contains(*v) => out_of_range.push(OutOfRange {
                field: field.clone(),
                value: *v,
                min: range.min,
                max: range.max,
            }),
            Some(FieldValue::Text(_)) => not_numeric.push(field.clone()),
            _ => {}
        }
    }
    ValidationReport {
        review_id: record.review_id.clone(),
        schema: schema.key(),
        missing,
        extra,
        out_of_range,
        not_numeric,
    }
}
