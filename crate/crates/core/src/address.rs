//! A1-style cell and range addresses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest column index (`XFD`).
pub const MAX_COL: u32 = 16_384;
/// Largest row index.
pub const MAX_ROW: u32 = 1_048_576;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid address `{text}`: {reason}")]
pub struct AddressError {
    pub text: String,
    pub reason: &'static str,
}

impl AddressError {
    fn new(text: &str, reason: &'static str) -> Self {
        Self {
            text: text.to_string(),
            reason,
        }
    }
}

/// A fully qualified cell position. Columns and rows are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellAddress {
    pub sheet: String,
    pub col: u32,
    pub row: u32,
}

impl CellAddress {
    pub fn new(sheet: impl Into<String>, col: u32, row: u32) -> Self {
        Self {
            sheet: sheet.into(),
            col,
            row,
        }
    }

    /// Parses `Sheet!A1`, or a bare `A1` when `default_sheet` is given.
    pub fn parse(text: &str, default_sheet: Option<&str>) -> Result<Self, AddressError> {
        let (sheet, local) = split_sheet(text, default_sheet)?;
        let (col, row) =
            parse_a1(local).ok_or_else(|| AddressError::new(text, "expected a cell like A1"))?;
        Ok(Self { sheet, col, row })
    }

    /// The `A1` part without the sheet.
    pub fn local(&self) -> String {
        format!("{}{}", col_to_letters(self.col), self.row)
    }
}

impl fmt::Display for CellAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}!{}", quote_sheet(&self.sheet), self.local())
    }
}

impl FromStr for CellAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, None)
    }
}

impl Serialize for CellAddress {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellAddress {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A rectangular block of cells on one sheet. `start` is the top-left corner.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RangeAddress {
    pub sheet: String,
    pub start: (u32, u32),
    pub end: (u32, u32),
}

impl RangeAddress {
    /// Builds a range from two corners in any order.
    pub fn new(sheet: impl Into<String>, a: (u32, u32), b: (u32, u32)) -> Self {
        Self {
            sheet: sheet.into(),
            start: (a.0.min(b.0), a.1.min(b.1)),
            end: (a.0.max(b.0), a.1.max(b.1)),
        }
    }

    pub fn single(addr: &CellAddress) -> Self {
        Self::new(addr.sheet.clone(), (addr.col, addr.row), (addr.col, addr.row))
    }

    /// Parses `Sheet!A1:B3`, `Sheet!A1`, or the unqualified forms with `default_sheet`.
    pub fn parse(text: &str, default_sheet: Option<&str>) -> Result<Self, AddressError> {
        let (sheet, local) = split_sheet(text, default_sheet)?;
        let (a, b) = match local.split_once(':') {
            Some((a, b)) => (a, b),
            None => (local, local),
        };
        let a = parse_a1(a).ok_or_else(|| AddressError::new(text, "bad range start"))?;
        let b = parse_a1(b).ok_or_else(|| AddressError::new(text, "bad range end"))?;
        Ok(Self::new(sheet, a, b))
    }

    pub fn rows(&self) -> u32 {
        self.end.1 - self.start.1 + 1
    }

    pub fn cols(&self) -> u32 {
        self.end.0 - self.start.0 + 1
    }

    pub fn is_single(&self) -> bool {
        self.start == self.end
    }

    pub fn top_left(&self) -> CellAddress {
        CellAddress::new(self.sheet.clone(), self.start.0, self.start.1)
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellAddress> + '_ {
        (self.start.1..=self.end.1).flat_map(move |row| {
            (self.start.0..=self.end.0).map(move |col| CellAddress::new(self.sheet.clone(), col, row))
        })
    }
}

impl fmt::Display for RangeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}!{}{}",
            quote_sheet(&self.sheet),
            col_to_letters(self.start.0),
            self.start.1
        )?;
        if !self.is_single() {
            write!(f, ":{}{}", col_to_letters(self.end.0), self.end.1)?;
        }
        Ok(())
    }
}

/// Converts a 1-based column index to letters (`1 -> A`, `27 -> AA`).
pub fn col_to_letters(mut col: u32) -> String {
    let mut out = Vec::new();
    while col > 0 {
        let rem = (col - 1) % 26;
        out.push(b'A' + rem as u8);
        col = (col - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Converts column letters to a 1-based index; case-insensitive.
pub fn letters_to_col(letters: &str) -> Option<u32> {
    if letters.is_empty() || letters.len() > 3 {
        return None;
    }
    let mut col: u32 = 0;
    for b in letters.bytes() {
        if !b.is_ascii_alphabetic() {
            return None;
        }
        col = col * 26 + u32::from(b.to_ascii_uppercase() - b'A' + 1);
    }
    (col <= MAX_COL).then_some(col)
}

/// Parses a local `A1` (optionally with `$` markers) into `(col, row)`.
pub fn parse_a1(text: &str) -> Option<(u32, u32)> {
    let text = text.trim();
    let text = text.strip_prefix('$').unwrap_or(text);
    let split = text.find(|c: char| !c.is_ascii_alphabetic())?;
    let (letters, rest) = text.split_at(split);
    let digits = rest.strip_prefix('$').unwrap_or(rest);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    let col = letters_to_col(letters)?;
    let row: u32 = digits.parse().ok()?;
    (row <= MAX_ROW).then_some((col, row))
}

/// True when `text` reads as a cell address, which makes it unusable as a name.
pub fn looks_like_cell(text: &str) -> bool {
    !text.contains('$') && parse_a1(text).is_some()
}

pub(crate) fn quote_sheet(name: &str) -> String {
    let plain = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && !looks_like_cell(name);
    if plain {
        name.to_string()
    } else {
        format!("'{}'", name.replace('\'', "''"))
    }
}

fn split_sheet<'a>(
    text: &'a str,
    default_sheet: Option<&str>,
) -> Result<(String, &'a str), AddressError> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix('\'') {
        // 'Quoted Sheet'!A1 with '' as an escaped quote.
        let mut name = String::new();
        let mut chars = rest.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if c == '\'' {
                if matches!(chars.peek(), Some((_, '\''))) {
                    chars.next();
                    name.push('\'');
                    continue;
                }
                let after = &rest[i + 1..];
                let local = after
                    .strip_prefix('!')
                    .ok_or_else(|| AddressError::new(text, "expected `!` after sheet name"))?;
                if name.is_empty() {
                    return Err(AddressError::new(text, "empty sheet name"));
                }
                return Ok((name, local));
            }
            name.push(c);
        }
        return Err(AddressError::new(text, "unterminated sheet name"));
    }
    match text.rsplit_once('!') {
        Some((sheet, local)) if !sheet.is_empty() => Ok((sheet.to_string(), local)),
        Some(_) => Err(AddressError::new(text, "empty sheet name")),
        None => match default_sheet {
            Some(sheet) => Ok((sheet.to_string(), text)),
            None => Err(AddressError::new(text, "missing sheet name")),
        },
    }
}
