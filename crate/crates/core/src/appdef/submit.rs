//! Applying one form submission to a workbook instance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::report::{render_report, report_names, snapshot_names, ReportDocument, ReportError};
use super::validators::{self, check_field, text_form, ValidationFailure};
use super::{AppDefinition, ComponentKind};
use crate::digest::digest_json;
use crate::value::{CellValue, Grid};
use crate::workbook::{ActionOutcome, Target, Workbook, WorkbookError, WorkbookRef};

/// Raw submitted values keyed by component id.
pub type Inputs = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunOutcome {
    Ok,
    ValidationFailed,
    ActionError,
    SystemError,
}

impl RunOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            RunOutcome::Ok => "OK",
            RunOutcome::ValidationFailed => "VALIDATION_FAILED",
            RunOutcome::ActionError => "ACTION_ERROR",
            RunOutcome::SystemError => "SYSTEM_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Output {
    Field {
        value: CellValue,
        text: String,
    },
    Table {
        values: Grid,
        text: Vec<Vec<String>>,
        #[serde(default)]
        column_labels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub outcome: RunOutcome,
    #[serde(default)]
    pub outputs: BTreeMap<String, Output>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportDocument>,
    #[serde(default)]
    pub validation_failures: Vec<ValidationFailure>,
    /// Set for system errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl RunResult {
    pub fn system_error(message: impl Into<String>) -> Self {
        Self {
            outcome: RunOutcome::SystemError,
            outputs: BTreeMap::new(),
            action: None,
            report: None,
            validation_failures: Vec::new(),
            message: Some(message.into()),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn output_digest(&self) -> String {
        digest_json(self)
    }
}

/// SHA-256 of the canonical JSON of `{"inputs": .., "pressed": ..}`.
pub fn input_digest(inputs: &Inputs, pressed: Option<&str>) -> String {
    digest_json(&serde_json::json!({ "inputs": inputs, "pressed": pressed }))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubmitError {
    #[error("definition pins workbook {expected} but the instance is {}", actual.as_ref().map_or("unversioned".to_string(), |a| a.to_string()))]
    StaleDefinition {
        expected: WorkbookRef,
        actual: Option<WorkbookRef>,
    },
    #[error(transparent)]
    Workbook(#[from] WorkbookError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Options offered by every choice list and radio group, as the workbook
/// currently holds them. Blank cells in an `options_from` range are skipped.
pub fn choice_options(def: &AppDefinition, wb: &Workbook) -> BTreeMap<String, Vec<CellValue>> {
    let mut out = BTreeMap::new();
    for c in def.components() {
        if let ComponentKind::ChoiceList(choice) | ComponentKind::RadioButtons(choice) = &c.kind {
            let options = match (&choice.options, &choice.options_from) {
                (Some(list), _) => list.clone(),
                (None, Some(from)) => wb
                    .get_range(from)
                    .map(|g| g.into_values().into_iter().filter(|v| !v.is_blank()).collect())
                    .unwrap_or_default(),
                (None, None) => Vec::new(),
            };
            out.insert(c.id.clone(), options);
        }
    }
    out
}

fn option_text(v: &CellValue) -> Option<String> {
    match v {
        CellValue::Number(n) => text_form(&serde_json::json!(n)),
        CellValue::Boolean(b) => Some(b.to_string()),
        CellValue::Text(s) => Some(s.clone()),
        CellValue::Blank | CellValue::Error(_) => None,
    }
}

/// Validates everything, then writes inputs, runs the pressed button's
/// action and extracts outputs and the report. When any check fails nothing
/// is written.
pub fn apply_submission(
    def: &AppDefinition,
    wb: &mut Workbook,
    inputs: &Inputs,
    pressed: Option<&str>,
) -> Result<RunResult, SubmitError> {
    if wb.origin() != Some(&def.workbook_ref) {
        return Err(SubmitError::StaleDefinition {
            expected: def.workbook_ref.clone(),
            actual: wb.origin().cloned(),
        });
    }

    let components = def.components();
    let mut failures = Vec::new();
    let mut fail = |id: &str, rule: &str, message: String| {
        failures.push(ValidationFailure {
            component_id: id.to_string(),
            rule: rule.to_string(),
            message,
        })
    };

    for id in inputs.keys() {
        match components.iter().find(|c| &c.id == id) {
            Some(c) if c.input_binding().is_some() => {}
            Some(_) => fail(id, "unknown_component", "component does not take input".into()),
            None => fail(id, "unknown_component", "no such component".into()),
        }
    }
    let mut action = None;
    if let Some(button) = pressed {
        match components.iter().find(|c| c.id == button).map(|c| &c.kind) {
            Some(ComponentKind::Button { action: a, .. }) => action = Some(a.clone()),
            _ => fail(button, "unknown_component", "no such button".into()),
        }
    }

    let options = choice_options(def, wb);
    let mut writes: Vec<(&str, CellValue)> = Vec::new();
    for c in &components {
        let raw = inputs.get(&c.id);
        match &c.kind {
            ComponentKind::InputField {
                binding,
                datatype,
                validators,
                ..
            } => {
                let problems = check_field(Some(*datatype), validators, raw);
                if problems.is_empty() {
                    if raw.is_some() {
                        let value = validators::coerce(*datatype, raw).expect("checked above");
                        writes.push((binding, value));
                    }
                } else {
                    for (rule, message) in problems {
                        fail(&c.id, &rule, message);
                    }
                }
            }
            ComponentKind::ChoiceList(choice) | ComponentKind::RadioButtons(choice) => {
                let problems = check_field(None, &choice.validators, raw);
                if !problems.is_empty() {
                    for (rule, message) in problems {
                        fail(&c.id, &rule, message);
                    }
                    continue;
                }
                let Some(raw) = raw else { continue };
                if validators::is_empty(Some(raw)) {
                    writes.push((&choice.binding, CellValue::Blank));
                    continue;
                }
                let text = text_form(raw);
                let chosen = options
                    .get(&c.id)
                    .and_then(|opts| opts.iter().find(|o| text.is_some() && option_text(o) == text));
                match chosen {
                    Some(v) => writes.push((&choice.binding, v.clone())),
                    None => fail(&c.id, "choice", "not one of the offered options".into()),
                }
            }
            _ => {}
        }
    }

    if !failures.is_empty() {
        return Ok(RunResult {
            outcome: RunOutcome::ValidationFailed,
            outputs: BTreeMap::new(),
            action: None,
            report: None,
            validation_failures: failures,
            message: None,
        });
    }

    for (binding, value) in writes {
        wb.set_value(&Target::name(binding), value.into())?;
    }
    wb.recalc();
    let action_outcome = match action {
        Some(name) => Some(wb.run_action(&name)?),
        None => None,
    };
    wb.recalc();

    let mut outputs = BTreeMap::new();
    for c in &components {
        match &c.kind {
            ComponentKind::OutputField { binding, format, .. } => {
                let grid = wb.get_range(binding)?;
                let value = grid.values().first().cloned().unwrap_or_default();
                let hint = format.or_else(|| wb.name_format(binding)).unwrap_or_default();
                let text = hint.render(&value);
                outputs.insert(c.id.clone(), Output::Field { value, text });
            }
            ComponentKind::OutputTable {
                binding,
                column_labels,
                ..
            } => {
                let values = wb.get_range(binding)?;
                let hint = wb.name_format(binding).unwrap_or_default();
                let text = values
                    .to_rows()
                    .iter()
                    .map(|row| row.iter().map(|v| hint.render(v)).collect())
                    .collect();
                outputs.insert(
                    c.id.clone(),
                    Output::Table {
                        values,
                        text,
                        column_labels: column_labels.clone(),
                    },
                );
            }
            _ => {}
        }
    }

    let names = report_names(def);
    let snapshot = snapshot_names(wb, names.iter().map(String::as_str));
    let report = render_report(def, &snapshot)?;

    let outcome = match &action_outcome {
        Some(a) if !a.ok => RunOutcome::ActionError,
        _ => RunOutcome::Ok,
    };
    Ok(RunResult {
        outcome,
        outputs,
        message: action_outcome.as_ref().filter(|a| !a.ok).map(|a| a.message.clone()),
        action: action_outcome,
        report: Some(report),
        validation_failures: Vec::new(),
    })
}
