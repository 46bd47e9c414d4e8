//! App definitions: a component tree bound to a workbook through named
//! ranges, plus a report template.
//!
//! Definitions are plain JSON documents (see `schema/appdef.schema.json`).
//! [`validate_appdef`] checks one against a workbook, [`apply_submission`]
//! drives a submission through a fresh workbook instance, and
//! [`render_report`] turns named values into a report document.

mod report;
mod submit;
mod validate;
pub mod validators;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{
    render_report, report_names, snapshot_names, ChartSeries, NamedValue, NamedValues, ReportDocument, ReportError,
    RenderedSection,
};
pub use submit::{apply_submission, choice_options, input_digest, Inputs, Output, RunOutcome, RunResult, SubmitError};
pub use validate::{validate_appdef, ValidationError, ValidationErrorKind, ValidationReport};
pub use validators::ValidationFailure;

use crate::value::{CellValue, FormatHint};
use crate::workbook::WorkbookRef;

/// Capability ladder: each role can do everything the ones below it can.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    EndUser,
    Author,
    Admin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::EndUser => "END_USER",
            Role::Author => "AUTHOR",
            Role::Admin => "ADMIN",
        }
    }
}

/// Who may run an app, on top of per-user grants held by the registry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acl {
    /// Every user with at least this role may run the app.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_role: Option<Role>,
    /// Users allowed regardless of role.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub users: Vec<String>,
}

impl Acl {
    pub fn allows(&self, user_id: &str, role: Role) -> bool {
        self.min_role.is_some_and(|min| role >= min) || self.users.iter().any(|u| u == user_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppDefinition {
    pub app_id: String,
    pub title: String,
    pub workbook_ref: WorkbookRef,
    #[serde(default)]
    pub acl: Acl,
    pub root: Component,
    #[serde(default)]
    pub report: ReportTemplate,
}

#[derive(Debug, Error)]
#[error("invalid app definition document: {0}")]
pub struct DocumentError(#[from] serde_json::Error);

impl AppDefinition {
    pub fn from_json(text: &str) -> Result<Self, DocumentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("definition serializes")
    }

    /// Every component in document order, depth first.
    pub fn components(&self) -> Vec<&Component> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components().into_iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    #[serde(flatten)]
    pub kind: ComponentKind,
}

impl Component {
    fn walk<'a>(&'a self, out: &mut Vec<&'a Component>) {
        out.push(self);
        if let ComponentKind::TabbedPane { tabs } = &self.kind {
            for tab in tabs {
                for child in &tab.children {
                    child.walk(out);
                }
            }
        }
    }

    /// Binding of a component that accepts input.
    pub fn input_binding(&self) -> Option<&str> {
        match &self.kind {
            ComponentKind::InputField { binding, .. } => Some(binding),
            ComponentKind::ChoiceList(c) | ComponentKind::RadioButtons(c) => Some(&c.binding),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ComponentKind {
    TabbedPane {
        tabs: Vec<Tab>,
    },
    InputField {
        label: String,
        binding: String,
        datatype: DataType,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        validators: Vec<Validator>,
    },
    ChoiceList(Choice),
    RadioButtons(Choice),
    Button {
        label: String,
        action: String,
    },
    OutputField {
        #[serde(default)]
        label: String,
        binding: String,
        /// Overrides the bound cell's own format hint.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<FormatHint>,
    },
    OutputTable {
        #[serde(default)]
        label: String,
        binding: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        column_labels: Vec<String>,
    },
    StaticText {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tab {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub children: Vec<Component>,
}

/// A choice list or radio group: exactly one of `options` and `options_from`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub binding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<CellValue>>,
    /// Named range (one row or one column) read when the definition is fetched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options_from: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validators: Vec<Validator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DataType {
    Number,
    Text,
    Date,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Validator {
    Required,
    NumericRange {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    /// Must match the whole value.
    Pattern {
        regex: String,
    },
    /// Maximum number of characters (Unicode scalar values).
    MaxLength {
        n: usize,
    },
    InSet {
        values: Vec<String>,
    },
}

impl Validator {
    pub fn kind(&self) -> &'static str {
        match self {
            Validator::Required => "required",
            Validator::NumericRange { .. } => "numeric_range",
            Validator::Pattern { .. } => "pattern",
            Validator::MaxLength { .. } => "max_length",
            Validator::InSet { .. } => "in_set",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportTemplate {
    #[serde(default)]
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Section {
    Heading {
        text: String,
    },
    /// `{Name}` is replaced by the named value; `{{` and `}}` are literal braces.
    Paragraph {
        text: String,
    },
    Table {
        binding: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<String>,
    },
    Chart {
        kind: ChartKind,
        series: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChartKind {
    Line,
    Bar,
}
