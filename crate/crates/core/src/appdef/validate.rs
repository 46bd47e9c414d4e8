//! Author-time checks of a definition against the workbook it pins.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::report::template_names;
use super::{validators, AppDefinition, ComponentKind, Section, Validator};
use crate::workbook::Workbook;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValidationErrorKind {
    UnresolvedBinding,
    ShapeError,
    UnknownAction,
    DuplicateId,
    InvalidValidator,
    InvalidComponent,
    InvalidTemplate,
    WorkbookMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    /// Component or tab id; report sections are `report[<index>]`.
    pub component_id: String,
    pub kind: ValidationErrorKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn push(&mut self, id: &str, kind: ValidationErrorKind, reason: impl Into<String>) {
        self.errors.push(ValidationError {
            component_id: id.to_string(),
            kind,
            reason: reason.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.errors {
            writeln!(f, "{}: {:?}: {}", e.component_id, e.kind, e.reason)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Single,
    Vector,
    Any,
}

pub fn validate_appdef(def: &AppDefinition, wb: &Workbook) -> ValidationReport {
    use ValidationErrorKind::*;
    let mut report = ValidationReport::default();

    if let Some(origin) = wb.origin() {
        if *origin != def.workbook_ref {
            report.push(
                &def.app_id,
                WorkbookMismatch,
                format!("definition pins {} but the workbook is {origin}", def.workbook_ref),
            );
        }
    }

    let mut seen: HashSet<String> = HashSet::new();
    let mut check_id = |report: &mut ValidationReport, id: &str| {
        if id.trim().is_empty() {
            report.push(id, InvalidComponent, "empty id");
        } else if !seen.insert(id.to_string()) {
            report.push(id, DuplicateId, format!("id `{id}` is used more than once"));
        }
    };

    let bind = |report: &mut ValidationReport, id: &str, name: &str, shape: Shape| {
        let Some((rows, cols)) = wb.name_shape(name) else {
            report.push(id, UnresolvedBinding, format!("no named range `{name}` in the workbook"));
            return;
        };
        let ok = match shape {
            Shape::Single => rows == 1 && cols == 1,
            Shape::Vector => rows == 1 || cols == 1,
            Shape::Any => true,
        };
        if !ok {
            let wanted = match shape {
                Shape::Single => "a single cell",
                _ => "one row or one column",
            };
            report.push(
                id,
                ShapeError,
                format!("`{name}` is {rows}x{cols} but must be {wanted}"),
            );
        }
    };

    for component in def.components() {
        let id = component.id.as_str();
        check_id(&mut report, id);
        match &component.kind {
            ComponentKind::TabbedPane { tabs } => {
                if tabs.is_empty() {
                    report.push(id, InvalidComponent, "tabbed pane without tabs");
                }
                for tab in tabs {
                    check_id(&mut report, &tab.id);
                }
            }
            ComponentKind::InputField {
                binding, validators, ..
            } => {
                bind(&mut report, id, binding, Shape::Single);
                check_validators(&mut report, id, validators);
            }
            ComponentKind::ChoiceList(choice) | ComponentKind::RadioButtons(choice) => {
                bind(&mut report, id, &choice.binding, Shape::Single);
                match (&choice.options, &choice.options_from) {
                    (Some(_), None) => {}
                    (None, Some(from)) => bind(&mut report, id, from, Shape::Vector),
                    _ => report.push(
                        id,
                        InvalidComponent,
                        "exactly one of `options` and `options_from` is required",
                    ),
                }
                check_validators(&mut report, id, &choice.validators);
            }
            ComponentKind::Button { action, .. } => {
                if wb.action(action).is_none() {
                    report.push(id, UnknownAction, format!("no action `{action}` in the workbook"));
                }
            }
            ComponentKind::OutputField { binding, .. } => bind(&mut report, id, binding, Shape::Single),
            ComponentKind::OutputTable {
                binding,
                column_labels,
                ..
            } => {
                bind(&mut report, id, binding, Shape::Any);
                if let Some((_, cols)) = wb.name_shape(binding) {
                    if !column_labels.is_empty() && column_labels.len() != cols {
                        report.push(
                            id,
                            ShapeError,
                            format!("{} column labels for {cols} columns", column_labels.len()),
                        );
                    }
                }
            }
            ComponentKind::StaticText { .. } => {}
        }
    }

    for (index, section) in def.report.sections.iter().enumerate() {
        let id = format!("report[{index}]");
        match section {
            Section::Heading { .. } => {}
            Section::Paragraph { text } => match template_names(text) {
                Ok(names) => {
                    for name in names {
                        bind(&mut report, &id, &name, Shape::Single);
                    }
                }
                Err(reason) => report.push(&id, InvalidTemplate, reason),
            },
            Section::Table { binding, labels } => {
                bind(&mut report, &id, binding, Shape::Any);
                if let Some((_, cols)) = wb.name_shape(binding) {
                    if !labels.is_empty() && labels.len() != cols {
                        report.push(&id, ShapeError, format!("{} labels for {cols} columns", labels.len()));
                    }
                }
            }
            Section::Chart { series, .. } => {
                if series.is_empty() {
                    report.push(&id, InvalidTemplate, "chart without series");
                }
                for name in series {
                    bind(&mut report, &id, name, Shape::Vector);
                }
            }
        }
    }
    report
}

fn check_validators(report: &mut ValidationReport, id: &str, list: &[Validator]) {
    for v in list {
        let problem = match v {
            Validator::NumericRange { min, max } => match (min, max) {
                (Some(a), _) if !a.is_finite() => Some("min is not finite".to_string()),
                (_, Some(b)) if !b.is_finite() => Some("max is not finite".to_string()),
                (Some(a), Some(b)) if a > b => Some(format!("min {a} is greater than max {b}")),
                _ => None,
            },
            Validator::Pattern { regex } => validators::anchored(regex)
                .err()
                .map(|e| format!("pattern does not compile: {e}")),
            Validator::Required | Validator::MaxLength { .. } | Validator::InSet { .. } => None,
        };
        if let Some(reason) = problem {
            report.push(id, ValidationErrorKind::InvalidValidator, reason);
        }
    }
}
