//! Cell values, error kinds and rectangular value grids.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Spreadsheet error values. They are ordinary cell contents, not Rust errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorKind {
    Div0,
    Value,
    Ref,
    Name,
    Na,
    Cycle,
    Xref,
    Action,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 8] = [
        ErrorKind::Div0,
        ErrorKind::Value,
        ErrorKind::Ref,
        ErrorKind::Name,
        ErrorKind::Na,
        ErrorKind::Cycle,
        ErrorKind::Xref,
        ErrorKind::Action,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Div0 => "#DIV/0!",
            ErrorKind::Value => "#VALUE!",
            ErrorKind::Ref => "#REF!",
            ErrorKind::Name => "#NAME?",
            ErrorKind::Na => "#N/A",
            ErrorKind::Cycle => "#CYCLE!",
            ErrorKind::Xref => "#XREF!",
            ErrorKind::Action => "#ACTION!",
        }
    }

    pub fn from_literal(text: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(text))
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The value held by a cell.
///
/// Numbers are always finite; producers route NaN and infinities through
/// [`CellValue::number`], which turns them into `#VALUE!`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CellValue {
    Number(f64),
    Text(String),
    Boolean(bool),
    #[default]
    Blank,
    Error(ErrorKind),
}

impl CellValue {
    pub fn number(n: f64) -> Self {
        if n.is_finite() {
            CellValue::Number(n)
        } else {
            CellValue::Error(ErrorKind::Value)
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        CellValue::Text(s.into())
    }

    pub fn is_blank(&self) -> bool {
        matches!(self, CellValue::Blank)
    }

    pub fn is_error(&self) -> bool {
        matches!(self, CellValue::Error(_))
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    /// Equality that distinguishes `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &CellValue) -> bool {
        match (self, other) {
            (CellValue::Number(a), CellValue::Number(b)) => a.to_bits() == b.to_bits(),
            _ => self == other,
        }
    }

    /// Text used when the value flows into string operations (`&`, `LEN`, ...).
    pub fn to_text(&self) -> String {
        match self {
            CellValue::Number(n) => format_general(*n),
            CellValue::Text(s) => s.clone(),
            CellValue::Boolean(b) => if *b { "TRUE" } else { "FALSE" }.to_string(),
            CellValue::Blank => String::new(),
            CellValue::Error(e) => e.as_str().to_string(),
        }
    }
}

impl From<f64> for CellValue {
    fn from(n: f64) -> Self {
        CellValue::number(n)
    }
}

impl From<&str> for CellValue {
    fn from(s: &str) -> Self {
        CellValue::Text(s.to_string())
    }
}

impl From<bool> for CellValue {
    fn from(b: bool) -> Self {
        CellValue::Boolean(b)
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Formats a number the way a general-format cell shows it: integers without
/// a decimal point, everything else with at most 15 significant digits.
pub fn format_general(n: f64) -> String {
    if n == 0.0 {
        return "0".to_string();
    }
    if n.fract() == 0.0 && n.abs() < 1e15 {
        return format!("{}", n as i64);
    }
    let magnitude = n.abs().log10().floor() as i32;
    if !(-9..15).contains(&magnitude) {
        let s = format!("{:.14e}", n);
        let (mantissa, exp) = s.split_once('e').expect("exponent form");
        let mantissa = trim_fraction(mantissa);
        return format!("{mantissa}E{exp}");
    }
    let decimals = (14 - magnitude).max(0) as usize;
    trim_fraction(&format!("{:.*}", decimals, n)).to_string()
}

/// Formats a number for display in results and reports: like the shortest
/// round-trip form, but integers keep one decimal place (`0.0`, `6.0`).
pub fn format_display(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{:.1}", n)
    } else {
        format!("{}", n)
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Presentation hint carried by a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FormatHint {
    #[default]
    General,
    Number,
    Date,
    Text,
}

impl FormatHint {
    pub fn keyword(self) -> &'static str {
        match self {
            FormatHint::General => "general",
            FormatHint::Number => "number",
            FormatHint::Date => "date",
            FormatHint::Text => "text",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "general" => Some(FormatHint::General),
            "number" => Some(FormatHint::Number),
            "date" => Some(FormatHint::Date),
            "text" => Some(FormatHint::Text),
            _ => None,
        }
    }

    /// Renders a value under this hint.
    pub fn render(self, value: &CellValue) -> String {
        match (self, value) {
            (FormatHint::Number, CellValue::Number(n)) => format!("{:.2}", n),
            (FormatHint::Date, CellValue::Number(n)) => {
                crate::dates::serial_to_iso(n.trunc() as i64).unwrap_or_else(|_| format_display(*n))
            }
            (FormatHint::General, CellValue::Number(n)) => format_display(*n),
            (FormatHint::Text, CellValue::Number(n)) => format_general(*n),
            (_, other) => other.to_text(),
        }
    }
}

/// A rectangular block of values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    values: Vec<CellValue>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, values: Vec<CellValue>) -> Self {
        assert_eq!(rows * cols, values.len(), "grid shape does not match value count");
        Self { rows, cols, values }
    }

    pub fn scalar(value: CellValue) -> Self {
        Self::new(1, 1, vec![value])
    }

    /// Builds a grid from rows; every row must have the same length.
    pub fn from_rows(rows: Vec<Vec<CellValue>>) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        let n = rows.len();
        Some(Self::new(n, cols, rows.into_iter().flatten().collect()))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// 0-based access.
    pub fn get(&self, row: usize, col: usize) -> Option<&CellValue> {
        (row < self.rows && col < self.cols).then(|| &self.values[row * self.cols + col])
    }

    pub fn values(&self) -> &[CellValue] {
        &self.values
    }

    pub fn into_values(self) -> Vec<CellValue> {
        self.values
    }

    pub fn row_vec(&self, row: usize) -> &[CellValue] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<CellValue>> {
        (0..self.rows).map(|r| self.row_vec(r).to_vec()).collect()
    }

    pub fn is_single(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// 1-D view of a single row or column.
    pub fn as_vector(&self) -> Option<&[CellValue]> {
        (self.rows == 1 || self.cols == 1).then_some(&self.values[..])
    }
}

// JSON form: numbers, strings and booleans map to themselves, blank is `null`,
// and errors are `{"error": "#DIV/0!"}`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ValueRepr {
    Blank(()),
    Number(f64),
    Boolean(bool),
    Text(String),
    Error { error: String },
}

impl Serialize for CellValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            CellValue::Number(n) => ValueRepr::Number(*n),
            CellValue::Text(s) => ValueRepr::Text(s.clone()),
            CellValue::Boolean(b) => ValueRepr::Boolean(*b),
            CellValue::Blank => ValueRepr::Blank(()),
            CellValue::Error(e) => ValueRepr::Error {
                error: e.as_str().to_string(),
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CellValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(match ValueRepr::deserialize(deserializer)? {
            ValueRepr::Blank(()) => CellValue::Blank,
            ValueRepr::Number(n) => CellValue::number(n),
            ValueRepr::Boolean(b) => CellValue::Boolean(b),
            ValueRepr::Text(s) => CellValue::Text(s),
            ValueRepr::Error { error } => CellValue::Error(
                ErrorKind::from_literal(&error)
                    .ok_or_else(|| serde::de::Error::custom(format!("unknown error value {error}")))?,
            ),
        })
    }
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<CellValue>>::deserialize(deserializer)?;
        Grid::from_rows(rows).ok_or_else(|| serde::de::Error::custom("ragged grid"))
    }
}
