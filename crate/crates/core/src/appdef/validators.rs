//! Field-level checks on raw submitted values.
//!
//! Raw values are JSON scalars as a form sends them. The browser client
//! implements the same rules; `fixtures/validator_vectors.json` holds the
//! shared cases both sides must agree on.

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DataType, Validator};
use crate::dates::{iso_to_serial, DateError};
use crate::value::CellValue;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFailure {
    pub component_id: String,
    /// Validator kind, or `datatype`, `choice`, `unknown_component`.
    pub rule: String,
    pub message: String,
}

/// Missing, null, or text that is blank after trimming.
pub fn is_empty(value: Option<&Value>) -> bool {
    match value {
        None | Some(Value::Null) => true,
        Some(Value::String(s)) => s.trim().is_empty(),
        Some(_) => false,
    }
}

/// The text a scalar shows in a form field. Integral numbers print without
/// a fraction, matching how a browser stringifies them.
pub fn text_form(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => {
            let f = n.as_f64()?;
            if f.fract() == 0.0 && f.abs() < 1e21 {
                Some(format!("{}", f as i128))
            } else {
                Some(format!("{f}"))
            }
        }
        Value::Null | Value::Array(_) | Value::Object(_) => None,
    }
}

/// Reads a number from a JSON number or numeric text.
pub fn numeric(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64().filter(|f| f.is_finite()),
        Value::String(s) => {
            let t = s.trim();
            let plain = !t.is_empty()
                && t.chars()
                    .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
            if plain {
                t.parse::<f64>().ok().filter(|f| f.is_finite())
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Checks one validator. Empty values pass everything but `required`.
pub fn check(validator: &Validator, value: Option<&Value>) -> Result<(), String> {
    if is_empty(value) {
        return match validator {
            Validator::Required => Err("a value is required".into()),
            _ => Ok(()),
        };
    }
    let value = value.expect("non-empty");
    match validator {
        Validator::Required => Ok(()),
        Validator::NumericRange { min, max } => {
            let n = numeric(value).ok_or("not a number")?;
            if let Some(min) = min {
                if n < *min {
                    return Err(format!("must be at least {min}"));
                }
            }
            if let Some(max) = max {
                if n > *max {
                    return Err(format!("must be at most {max}"));
                }
            }
            Ok(())
        }
        Validator::Pattern { regex } => {
            let text = text_form(value).ok_or("not a scalar value")?;
            let re = anchored(regex).map_err(|e| format!("invalid pattern: {e}"))?;
            if re.is_match(&text) {
                Ok(())
            } else {
                Err("does not match the required pattern".into())
            }
        }
        Validator::MaxLength { n } => {
            let text = text_form(value).ok_or("not a scalar value")?;
            if text.chars().count() > *n {
                Err(format!("longer than {n} characters"))
            } else {
                Ok(())
            }
        }
        Validator::InSet { values } => {
            let text = text_form(value).ok_or("not a scalar value")?;
            if values.contains(&text) {
                Ok(())
            } else {
                Err("not one of the allowed values".into())
            }
        }
    }
}

pub(crate) fn anchored(pattern: &str) -> Result<Regex, regex::Error> {
    Regex::new(&format!("^(?:{pattern})$"))
}

/// Converts a raw value to what gets written into the bound cell.
/// Empty values become blank cells.
pub fn coerce(datatype: DataType, value: Option<&Value>) -> Result<CellValue, String> {
    if is_empty(value) {
        return Ok(CellValue::Blank);
    }
    let value = value.expect("non-empty");
    match datatype {
        DataType::Number => numeric(value).map(CellValue::Number).ok_or_else(|| "not a number".into()),
        DataType::Text => text_form(value)
            .map(CellValue::Text)
            .ok_or_else(|| "not a text value".into()),
        DataType::Boolean => match value {
            Value::Bool(b) => Ok(CellValue::Boolean(*b)),
            Value::String(s) if s.trim().eq_ignore_ascii_case("true") => Ok(CellValue::Boolean(true)),
            Value::String(s) if s.trim().eq_ignore_ascii_case("false") => Ok(CellValue::Boolean(false)),
            _ => Err("not true or false".into()),
        },
        DataType::Date => {
            let Value::String(s) = value else {
                return Err("dates must be YYYY-MM-DD text".into());
            };
            match iso_to_serial(s.trim()) {
                Ok(serial) => Ok(CellValue::Number(serial as f64)),
                Err(DateError::InvalidDate(_)) => Err("dates must be YYYY-MM-DD text".into()),
                Err(e) => Err(e.to_string()),
            }
        }
    }
}

/// Every failure for one field: `required` first, then the datatype, then
/// the remaining validators in order. A datatype failure hides the rest.
pub fn check_field(
    datatype: Option<DataType>,
    validators: &[Validator],
    value: Option<&Value>,
) -> Vec<(String, String)> {
    let mut failures = Vec::new();
    if is_empty(value) {
        if validators.iter().any(|v| matches!(v, Validator::Required)) {
            failures.push(("required".to_string(), "a value is required".to_string()));
        }
        return failures;
    }
    if let Some(dt) = datatype {
        if let Err(message) = coerce(dt, value) {
            failures.push(("datatype".to_string(), message));
            return failures;
        }
    }
    for v in validators {
        if let Err(message) = check(v, value) {
            failures.push((v.kind().to_string(), message));
        }
    }
    failures
}
