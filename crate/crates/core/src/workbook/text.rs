//! The line-oriented workbook document format. See `docs/workbook-format.md`.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use super::{ActionScript, ActionStep, Pos, Target, Workbook, WorkbookError};
use crate::address::{CellAddress, RangeAddress};
use crate::formula::{parse_formula, Expr};
use crate::value::{CellValue, ErrorKind, FormatHint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: WorkbookError,
    },
}

impl LoadError {
    pub fn line(&self) -> usize {
        match self {
            LoadError::Format { line, .. } | LoadError::Invalid { line, .. } => *line,
        }
    }

    /// The model-level rejection, when the line was well formed.
    pub fn workbook_error(&self) -> Option<&WorkbookError> {
        match self {
            LoadError::Invalid { source, .. } => Some(source),
            LoadError::Format { .. } => None,
        }
    }
}

fn format_err(line: usize, reason: impl Into<String>) -> LoadError {
    LoadError::Format {
        line,
        reason: reason.into(),
    }
}

fn at(line: usize) -> impl Fn(WorkbookError) -> LoadError {
    move |source| LoadError::Invalid { line, source }
}

enum CellBody {
    Literal(CellValue),
    Formula(Expr),
}

struct CellLine {
    line: usize,
    addr: CellAddress,
    format: FormatHint,
    body: CellBody,
}

struct ActionLines {
    line: usize,
    name: String,
    status: CellAddress,
    steps: Vec<ActionStep>,
}

pub(super) fn load(document: &str, cap: usize) -> Result<Workbook, LoadError> {
    let mut title: Option<String> = None;
    let mut sheets: Vec<(usize, String)> = Vec::new();
    let mut cells: Vec<CellLine> = Vec::new();
    let mut names: Vec<(usize, String, RangeAddress)> = Vec::new();
    let mut actions: Vec<ActionLines> = Vec::new();
    let mut current_sheet: Option<String> = None;
    let mut in_action = false;

    for (index, raw) in document.lines().enumerate() {
        let line = index + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let indented = raw.starts_with([' ', '\t']);
        if indented {
            if !in_action {
                return Err(format_err(line, "indented line outside an action"));
            }
            let sheet = current_sheet.as_deref();
            let step = parse_step(trimmed, sheet).map_err(|r| format_err(line, r))?;
            actions.last_mut().expect("in action").steps.push(step);
            continue;
        }
        in_action = false;
        let (keyword, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        let rest = rest.trim();
        if title.is_none() {
            if keyword != "workbook" {
                return Err(format_err(line, "document must start with `workbook <title>`"));
            }
            title = Some(rest.to_string());
            continue;
        }
        match keyword {
            "workbook" => return Err(format_err(line, "second `workbook` header")),
            "sheet" => {
                if rest.is_empty() {
                    return Err(format_err(line, "missing sheet name"));
                }
                sheets.push((line, rest.to_string()));
                current_sheet = Some(rest.to_string());
            }
            "cell" => {
                let cell = parse_cell(rest, current_sheet.as_deref()).map_err(|r| format_err(line, r))?;
                let (addr, format, body) = cell;
                let body = match body {
                    RawBody::Literal(v) => CellBody::Literal(v),
                    RawBody::Formula(text) => CellBody::Formula(
                        parse_formula(&text).map_err(|e| at(line)(WorkbookError::Formula(e)))?,
                    ),
                };
                cells.push(CellLine {
                    line,
                    addr,
                    format,
                    body,
                });
            }
            "name" => {
                let (name, target) = rest
                    .split_once('=')
                    .ok_or_else(|| format_err(line, "expected `name <ident> = <range>`"))?;
                let range = RangeAddress::parse(target.trim(), current_sheet.as_deref())
                    .map_err(|e| format_err(line, e.to_string()))?;
                names.push((line, name.trim().to_string(), range));
            }
            "action" => {
                let (name, status) = rest
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| format_err(line, "expected `action <ident> status=<cell>`"))?;
                let status = status
                    .trim()
                    .strip_prefix("status=")
                    .ok_or_else(|| format_err(line, "expected `status=<cell>`"))?;
                let status = CellAddress::parse(status.trim(), current_sheet.as_deref())
                    .map_err(|e| format_err(line, e.to_string()))?;
                actions.push(ActionLines {
                    line,
                    name: name.to_string(),
                    status,
                    steps: Vec::new(),
                });
                in_action = true;
            }
            other => return Err(format_err(line, format!("unknown keyword `{other}`"))),
        }
    }

    let title = title.ok_or_else(|| format_err(1, "empty document"))?;
    let mut wb = Workbook::with_cap(title, cap);
    for (line, name) in &sheets {
        wb.add_sheet(name).map_err(at(*line))?;
    }
    for (line, name, range) in names {
        wb.define_name(&name, range).map_err(at(line))?;
    }
    let mut seen: HashSet<Pos> = HashSet::with_capacity(cells.len());
    for cell in cells {
        let pos = wb.pos_of(&cell.addr).map_err(at(cell.line))?;
        if !seen.insert(pos) {
            return Err(format_err(cell.line, format!("cell {} defined twice", cell.addr)));
        }
        if seen.len() > cap {
            return Err(at(cell.line)(WorkbookError::CapExceeded {
                count: seen.len(),
                cap,
            }));
        }
        match cell.body {
            CellBody::Literal(v) => wb.write_input(pos, v),
            CellBody::Formula(expr) => wb.set_formula_expr(&cell.addr, expr).map_err(at(cell.line))?,
        }
        if let Some(c) = wb.cells.get_mut(&pos) {
            c.format = cell.format;
        }
    }
    for action in actions {
        wb.define_action(ActionScript {
            name: action.name,
            status: action.status,
            steps: action.steps,
        })
        .map_err(at(action.line))?;
    }
    wb.dirty.clear();
    Ok(wb)
}

enum RawBody {
    Literal(CellValue),
    Formula(String),
}

/// `<addr> [format] = <literal>` or `<addr> [format] := <formula>`.
fn parse_cell(rest: &str, sheet: Option<&str>) -> Result<(CellAddress, FormatHint, RawBody), String> {
    let (addr, rest) = take_token(rest)?;
    let addr = CellAddress::parse(addr, sheet).map_err(|e| e.to_string())?;
    let mut rest = rest.trim_start();
    let mut format = FormatHint::General;
    if let Some((word, after)) = rest.split_once(char::is_whitespace) {
        if let Some(hint) = FormatHint::from_keyword(word) {
            format = hint;
            rest = after.trim_start();
        }
    }
    if let Some(formula) = rest.strip_prefix(":=") {
        let formula = formula.trim();
        if formula.is_empty() {
            return Err("empty formula".into());
        }
        let text = if formula.starts_with('=') {
            formula.to_string()
        } else {
            format!("={formula}")
        };
        return Ok((addr, format, RawBody::Formula(text)));
    }
    let literal = rest
        .strip_prefix('=')
        .ok_or_else(|| "expected `=` or `:=` after the address".to_string())?;
    let value = parse_literal(literal.trim())?;
    Ok((addr, format, RawBody::Literal(value)))
}

/// One address-like token; single-quoted sheet names may contain spaces.
fn take_token(text: &str) -> Result<(&str, &str), String> {
    let text = text.trim_start();
    let mut in_quote = false;
    for (i, c) in text.char_indices() {
        match c {
            '\'' => in_quote = !in_quote,
            c if c.is_whitespace() && !in_quote => return Ok((&text[..i], &text[i..])),
            _ => {}
        }
    }
    if in_quote {
        return Err("unterminated sheet quote".into());
    }
    if text.is_empty() {
        return Err("missing address".into());
    }
    Ok((text, ""))
}

/// Number, JSON-style string, TRUE/FALSE or an error literal such as `#N/A`.
pub fn parse_literal(text: &str) -> Result<CellValue, String> {
    if text.is_empty() {
        return Err("missing value".into());
    }
    if text.starts_with('"') {
        let s: String = serde_json::from_str(text).map_err(|e| format!("bad text literal: {e}"))?;
        return Ok(CellValue::Text(s));
    }
    if text.eq_ignore_ascii_case("TRUE") {
        return Ok(CellValue::Boolean(true));
    }
    if text.eq_ignore_ascii_case("FALSE") {
        return Ok(CellValue::Boolean(false));
    }
    if text.starts_with('#') {
        return ErrorKind::from_literal(text)
            .map(CellValue::Error)
            .ok_or_else(|| format!("unknown error literal `{text}`"));
    }
    let numeric = text
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    match text.parse::<f64>() {
        Ok(n) if numeric && n.is_finite() => Ok(CellValue::Number(n)),
        _ => Err(format!("`{text}` is not a literal")),
    }
}

pub(crate) fn write_literal(out: &mut String, v: &CellValue) {
    match v {
        CellValue::Number(n) => out.push_str(&number_text(*n)),
        CellValue::Text(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        CellValue::Boolean(true) => out.push_str("TRUE"),
        CellValue::Boolean(false) => out.push_str("FALSE"),
        CellValue::Error(e) => out.push_str(e.as_str()),
        CellValue::Blank => {}
    }
}

/// Shortest text that parses back to the same bits.
fn number_text(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 && !(n == 0.0 && n.is_sign_negative()) {
        format!("{}", n as i64)
    } else {
        format!("{n:?}")
    }
}

fn parse_target(text: &str, sheet: Option<&str>) -> Result<Target, String> {
    Target::parse(text, sheet).ok_or_else(|| format!("`{text}` is neither an address nor a name"))
}

fn parse_step(line: &str, sheet: Option<&str>) -> Result<ActionStep, String> {
    let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let rest = rest.trim();
    match keyword {
        "recalc" if rest.is_empty() => Ok(ActionStep::Recalc),
        "set" => {
            let (target, value) = rest.split_once('=').ok_or("expected `set <target> = <value>`")?;
            Ok(ActionStep::Set {
                target: parse_target(target.trim(), sheet)?,
                value: parse_literal(value.trim())?,
            })
        }
        "copy" => {
            let (source, dest) = rest.split_once("->").ok_or("expected `copy <source> -> <cell>`")?;
            Ok(ActionStep::Copy {
                source: parse_target(source.trim(), sheet)?,
                dest: CellAddress::parse(dest.trim(), sheet).map_err(|e| e.to_string())?,
            })
        }
        "clear" => Ok(ActionStep::Clear {
            target: parse_target(rest, sheet)?,
        }),
        "failif" => {
            if !rest.starts_with('"') {
                return Err("expected `failif \"<message>\" <formula>`".into());
            }
            let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<String>();
            let message = match stream.next() {
                Some(Ok(m)) => m,
                _ => return Err("bad failif message".into()),
            };
            let formula = rest[stream.byte_offset()..].trim();
            let formula = if formula.starts_with('=') {
                formula.to_string()
            } else {
                format!("={formula}")
            };
            let condition = parse_formula(&formula).map_err(|e| e.to_string())?;
            Ok(ActionStep::FailIf { condition, message })
        }
        other => Err(format!("unknown action step `{other}`")),
    }
}

pub(super) fn save(wb: &Workbook) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "workbook {}", wb.title);
    let mut by_sheet: Vec<Vec<Pos>> = vec![Vec::new(); wb.sheets.len()];
    for pos in wb.cells.keys() {
        by_sheet[pos.sheet as usize].push(*pos);
    }
    for (index, sheet) in wb.sheets.iter().enumerate() {
        let _ = writeln!(out, "sheet {sheet}");
        let positions = &mut by_sheet[index];
        positions.sort_unstable();
        for pos in positions.iter() {
            let cell = &wb.cells[pos];
            let addr = wb.address_of(*pos).local();
            out.push_str("cell ");
            out.push_str(&addr);
            if cell.format != FormatHint::General {
                out.push(' ');
                out.push_str(cell.format.keyword());
            }
            match &cell.formula {
                Some(f) => {
                    out.push_str(" := ");
                    let _ = write!(out, "{}", f.expr);
                }
                None => {
                    out.push_str(" = ");
                    write_literal(&mut out, &cell.input);
                }
            }
            out.push('\n');
        }
    }
    for named in wb.names.values() {
        let _ = writeln!(out, "name {} = {}", named.name, named.target);
    }
    for action in wb.actions.values() {
        let _ = writeln!(out, "action {} status={}", action.name, action.status);
        for step in &action.steps {
            out.push_str("  ");
            match step {
                ActionStep::Set { target, value } => {
                    let _ = write!(out, "set {target} = ");
                    write_literal(&mut out, value);
                }
                ActionStep::Copy { source, dest } => {
                    let _ = write!(out, "copy {source} -> {dest}");
                }
                ActionStep::Clear { target } => {
                    let _ = write!(out, "clear {target}");
                }
                ActionStep::Recalc => out.push_str("recalc"),
                ActionStep::FailIf { condition, message } => {
                    let message = serde_json::to_string(message).expect("string serializes");
                    let _ = write!(out, "failif {message} {}", condition.to_formula());
                }
            }
            out.push('\n');
        }
    }
    out
}
