//! Report rendering from a snapshot of named values. The output is plain
//! data; no workbook is needed once the snapshot is taken.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AppDefinition, ChartKind, Section};
use crate::value::{CellValue, FormatHint, Grid};
use crate::workbook::Workbook;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub values: Grid,
    /// Format hint of the range's top-left cell.
    pub format: FormatHint,
}

impl NamedValue {
    /// Display text of every cell, row-major, under the range's format hint.
    fn display(&self) -> Vec<Vec<String>> {
        self.values
            .to_rows()
            .iter()
            .map(|row| row.iter().map(|v| self.format.render(v)).collect())
            .collect()
    }
}

/// Named values keyed by lowercase name.
pub type NamedValues = BTreeMap<String, NamedValue>;

/// Current values of the given names; unknown names are left out.
pub fn snapshot_names<'a>(wb: &Workbook, names: impl IntoIterator<Item = &'a str>) -> NamedValues {
    let mut out = NamedValues::new();
    for name in names {
        if let (Ok(values), Some(format)) = (wb.get_range(name), wb.name_format(name)) {
            out.insert(name.to_lowercase(), NamedValue { values, format });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("report refers to `{0}`, which has no value")]
    UnresolvedName(String),
    #[error("malformed paragraph template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub app_id: String,
    pub title: String,
    pub sections: Vec<RenderedSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RenderedSection {
    Heading {
        text: String,
    },
    Paragraph {
        text: String,
    },
    Table {
        binding: String,
        labels: Vec<String>,
        values: Grid,
        /// Display text per cell.
        text: Vec<Vec<String>>,
    },
    Chart {
        kind: ChartKind,
        series: Vec<ChartSeries>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSeries {
    pub name: String,
    /// `None` where the cell is not a number.
    pub values: Vec<Option<f64>>,
}

enum Piece<'a> {
    Text(&'a str),
    Name(&'a str),
}

fn split_template(text: &str) -> Result<Vec<Piece<'_>>, String> {
    let mut pieces = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let Some(i) = rest.find(['{', '}']) else {
            pieces.push(Piece::Text(rest));
            break;
        };
        if i > 0 {
            pieces.push(Piece::Text(&rest[..i]));
        }
        let tail = &rest[i..];
        if let Some(after) = tail.strip_prefix("{{") {
            pieces.push(Piece::Text("{"));
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            pieces.push(Piece::Text("}"));
            rest = after;
        } else if tail.starts_with('}') {
            return Err(format!("unmatched `}}` at byte {}", text.len() - tail.len()));
        } else {
            let end = tail
                .find('}')
                .ok_or_else(|| format!("unterminated `{{` at byte {}", text.len() - tail.len()))?;
            let name = tail[1..end].trim();
            if name.is_empty() || name.contains('{') {
                return Err(format!("bad placeholder `{}`", &tail[..=end]));
            }
            pieces.push(Piece::Name(name));
            rest = &tail[end + 1..];
        }
    }
    Ok(pieces)
}

/// Names interpolated by a paragraph template.
pub(crate) fn template_names(text: &str) -> Result<Vec<String>, String> {
    Ok(split_template(text)?
        .into_iter()
        .filter_map(|p| match p {
            Piece::Name(n) => Some(n.to_string()),
            Piece::Text(_) => None,
        })
        .collect())
}

/// Every name a report template reads.
pub fn report_names(def: &AppDefinition) -> Vec<String> {
    let mut names = Vec::new();
    for section in &def.report.sections {
        match section {
            Section::Heading { .. } => {}
            Section::Paragraph { text } => names.extend(template_names(text).unwrap_or_default()),
            Section::Table { binding, .. } => names.push(binding.clone()),
            Section::Chart { series, .. } => names.extend(series.iter().cloned()),
        }
    }
    names
}

pub fn render_report(def: &AppDefinition, values: &NamedValues) -> Result<ReportDocument, ReportError> {
    let lookup = |name: &str| {
        values
            .get(&name.to_lowercase())
            .ok_or_else(|| ReportError::UnresolvedName(name.to_string()))
    };
    let mut sections = Vec::with_capacity(def.report.sections.len());
    for section in &def.report.sections {
        sections.push(match section {
            Section::Heading { text } => RenderedSection::Heading { text: text.clone() },
            Section::Paragraph { text } => {
                let mut out = String::new();
                for piece in split_template(text).map_err(ReportError::Template)? {
                    match piece {
                        Piece::Text(t) => out.push_str(t),
                        Piece::Name(n) => {
                            let named = lookup(n)?;
                            let cells: Vec<String> =
                                named.values.values().iter().map(|v| named.format.render(v)).collect();
                            out.push_str(&cells.join(", "));
                        }
                    }
                }
                RenderedSection::Paragraph { text: out }
            }
            Section::Table { binding, labels } => {
                let named = lookup(binding)?;
                RenderedSection::Table {
                    binding: binding.clone(),
                    labels: labels.clone(),
                    values: named.values.clone(),
                    text: named.display(),
                }
            }
            Section::Chart { kind, series } => {
                let mut out = Vec::with_capacity(series.len());
                for name in series {
                    let named = lookup(name)?;
                    out.push(ChartSeries {
                        name: name.clone(),
                        values: named
                            .values
                            .values()
                            .iter()
                            .map(|v| match v {
                                CellValue::Number(n) => Some(*n),
                                _ => None,
                            })
                            .collect(),
                    });
                }
                RenderedSection::Chart {
                    kind: *kind,
                    series: out,
                }
            }
        });
    }
    Ok(ReportDocument {
        app_id: def.app_id.clone(),
        title: def.title.clone(),
        sections,
    })
}
