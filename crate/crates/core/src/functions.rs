//! Built-in worksheet functions.
//!
//! Conventions: aggregates skip blanks, text and booleans found inside
//! ranges; scalar arithmetic coerces blank to 0; the first error argument
//! (in argument order) propagates, except through `ISERROR` and `IFERROR`.

use std::cmp::Ordering;

use crate::dates;
use crate::value::{CellValue, ErrorKind, Grid};

/// An evaluated function argument. Cell and range references arrive as
/// grids so that aggregates can tell referenced text from literal text.
#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Value(CellValue),
    Range(Grid),
}

impl Arg {
    /// Scalar view: a 1x1 range collapses to its value, larger ranges are `#VALUE!`.
    pub fn scalar(&self) -> CellValue {
        match self {
            Arg::Value(v) => v.clone(),
            Arg::Range(g) if g.is_single() => g.values()[0].clone(),
            Arg::Range(_) => CellValue::Error(ErrorKind::Value),
        }
    }

    fn grid(&self) -> Grid {
        match self {
            Arg::Value(v) => Grid::scalar(v.clone()),
            Arg::Range(g) => g.clone(),
        }
    }
}

impl From<CellValue> for Arg {
    fn from(v: CellValue) -> Self {
        Arg::Value(v)
    }
}

impl From<Grid> for Arg {
    fn from(g: Grid) -> Self {
        Arg::Range(g)
    }
}

/// Names accepted by [`eval_builtin`].
pub const SUPPORTED_FUNCTIONS: [&str; 31] = [
    "SUM", "AVERAGE", "MIN", "MAX", "COUNT", "COUNTA", "IF", "AND", "OR", "NOT", "ROUND", "ABS",
    "SQRT", "POWER", "CONCATENATE", "LEFT", "RIGHT", "LEN", "UPPER", "LOWER", "VLOOKUP", "HLOOKUP",
    "INDEX", "MATCH", "ISBLANK", "ISERROR", "IFERROR", "DATE", "YEAR", "MONTH", "DAY",
];

pub fn is_supported(name: &str) -> bool {
    SUPPORTED_FUNCTIONS.iter().any(|f| f.eq_ignore_ascii_case(name))
}

type Eval = Result<CellValue, ErrorKind>;

/// Evaluates a built-in function over already-evaluated arguments.
/// Unknown names yield `#NAME?`.
pub fn eval_builtin(name: &str, args: &[Arg]) -> CellValue {
    let upper = name.to_ascii_uppercase();
    let result = match upper.as_str() {
        "SUM" => numbers(args).map(|ns| CellValue::number(sum(&ns))),
        "AVERAGE" => numbers(args).and_then(|ns| {
            if ns.is_empty() {
                Err(ErrorKind::Div0)
            } else {
                Ok(CellValue::number(sum(&ns) / ns.len() as f64))
            }
        }),
        "MIN" => numbers(args).map(|ns| CellValue::number(ns.into_iter().reduce(f64::min).unwrap_or(0.0))),
        "MAX" => numbers(args).map(|ns| CellValue::number(ns.into_iter().reduce(f64::max).unwrap_or(0.0))),
        "COUNT" => Ok(count(args)),
        "COUNTA" => Ok(counta(args)),
        "IF" => if_fn(args),
        "AND" => logical(args, true),
        "OR" => logical(args, false),
        "NOT" => arity(args, 1, 1).and_then(|_| Ok(CellValue::Boolean(!to_bool(&args[0].scalar())?))),
        "ROUND" => arity(args, 2, 2).and_then(|_| {
            let x = to_number(&args[0].scalar())?;
            let digits = to_number(&args[1].scalar())?;
            Ok(CellValue::number(round_half_away(x, digits.trunc() as i32)))
        }),
        "ABS" => unary_num(args, |x| Ok(x.abs())),
        "SQRT" => unary_num(args, |x| if x < 0.0 { Err(ErrorKind::Value) } else { Ok(x.sqrt()) }),
        "POWER" => arity(args, 2, 2).and_then(|_| {
            let base = to_number(&args[0].scalar())?;
            let exp = to_number(&args[1].scalar())?;
            power(base, exp)
        }),
        "CONCATENATE" => args
            .iter()
            .map(|a| to_text(&a.scalar()))
            .collect::<Result<String, _>>()
            .map(CellValue::Text),
        "LEFT" => substring(args, true),
        "RIGHT" => substring(args, false),
        "LEN" => unary_text(args, |s| CellValue::Number(s.chars().count() as f64)),
        "UPPER" => unary_text(args, |s| CellValue::Text(s.to_uppercase())),
        "LOWER" => unary_text(args, |s| CellValue::Text(s.to_lowercase())),
        "VLOOKUP" => lookup(args, true),
        "HLOOKUP" => lookup(args, false),
        "INDEX" => index(args),
        "MATCH" => match_fn(args),
        "ISBLANK" => arity(args, 1, 1).map(|_| CellValue::Boolean(args[0].scalar().is_blank())),
        "ISERROR" => arity(args, 1, 1).map(|_| CellValue::Boolean(args[0].scalar().is_error())),
        "IFERROR" => arity(args, 2, 2).map(|_| match args[0].scalar() {
            CellValue::Error(_) => args[1].scalar(),
            v => v,
        }),
        "DATE" => arity(args, 3, 3).and_then(|_| {
            let y = to_number(&args[0].scalar())?;
            let m = to_number(&args[1].scalar())?;
            let d = to_number(&args[2].scalar())?;
            dates::date_serial_from_parts(y, m, d)
                .map(|s| CellValue::Number(s as f64))
                .ok_or(ErrorKind::Value)
        }),
        "YEAR" => date_part(args, |(y, _, _)| y as f64),
        "MONTH" => date_part(args, |(_, m, _)| m as f64),
        "DAY" => date_part(args, |(_, _, d)| d as f64),
        _ => Err(ErrorKind::Name),
    };
    result.unwrap_or_else(CellValue::Error)
}

fn arity(args: &[Arg], min: usize, max: usize) -> Result<(), ErrorKind> {
    if (min..=max).contains(&args.len()) {
        Ok(())
    } else {
        Err(ErrorKind::Value)
    }
}

pub(crate) fn to_number(v: &CellValue) -> Result<f64, ErrorKind> {
    match v {
        CellValue::Number(n) => Ok(*n),
        CellValue::Blank => Ok(0.0),
        CellValue::Boolean(b) => Ok(if *b { 1.0 } else { 0.0 }),
        CellValue::Text(s) => s.trim().parse::<f64>().ok().filter(|n| n.is_finite()).ok_or(ErrorKind::Value),
        CellValue::Error(e) => Err(*e),
    }
}

pub(crate) fn to_bool(v: &CellValue) -> Result<bool, ErrorKind> {
    match v {
        CellValue::Boolean(b) => Ok(*b),
        CellValue::Number(n) => Ok(*n != 0.0),
        CellValue::Blank => Ok(false),
        CellValue::Text(s) if s.eq_ignore_ascii_case("TRUE") => Ok(true),
        CellValue::Text(s) if s.eq_ignore_ascii_case("FALSE") => Ok(false),
        CellValue::Text(_) => Err(ErrorKind::Value),
        CellValue::Error(e) => Err(*e),
    }
}

pub(crate) fn to_text(v: &CellValue) -> Result<String, ErrorKind> {
    match v {
        CellValue::Error(e) => Err(*e),
        other => Ok(other.to_text()),
    }
}

/// Starts from `+0.0`; `Iterator::sum` for floats starts from `-0.0`.
fn sum(ns: &[f64]) -> f64 {
    ns.iter().fold(0.0, |acc, x| acc + x)
}

fn numbers(args: &[Arg]) -> Result<Vec<f64>, ErrorKind> {
    let mut out = Vec::new();
    for arg in args {
        match arg {
            Arg::Range(g) => {
                for v in g.values() {
                    match v {
                        CellValue::Number(n) => out.push(*n),
                        CellValue::Error(e) => return Err(*e),
                        _ => {}
                    }
                }
            }
            Arg::Value(CellValue::Blank) => {}
            Arg::Value(v) => out.push(to_number(v)?),
        }
    }
    Ok(out)
}

fn count(args: &[Arg]) -> CellValue {
    let n = args
        .iter()
        .map(|arg| match arg {
            Arg::Range(g) => g.values().iter().filter(|v| matches!(v, CellValue::Number(_))).count(),
            Arg::Value(v @ (CellValue::Number(_) | CellValue::Boolean(_) | CellValue::Text(_))) => {
                usize::from(to_number(v).is_ok())
            }
            Arg::Value(_) => 0,
        })
        .sum::<usize>();
    CellValue::Number(n as f64)
}

fn counta(args: &[Arg]) -> CellValue {
    let n = args
        .iter()
        .map(|arg| match arg {
            Arg::Range(g) => g.values().iter().filter(|v| !v.is_blank()).count(),
            Arg::Value(v) => usize::from(!v.is_blank()),
        })
        .sum::<usize>();
    CellValue::Number(n as f64)
}

fn if_fn(args: &[Arg]) -> Eval {
    arity(args, 2, 3)?;
    if to_bool(&args[0].scalar())? {
        Ok(args[1].scalar())
    } else {
        Ok(args.get(2).map_or(CellValue::Boolean(false), Arg::scalar))
    }
}

fn logical(args: &[Arg], all: bool) -> Eval {
    let mut seen = false;
    let mut acc = all;
    for arg in args {
        let vals: Vec<bool> = match arg {
            Arg::Range(g) => g
                .values()
                .iter()
                .filter_map(|v| match v {
                    CellValue::Boolean(b) => Some(Ok(*b)),
                    CellValue::Number(n) => Some(Ok(*n != 0.0)),
                    CellValue::Error(e) => Some(Err(*e)),
                    _ => None,
                })
                .collect::<Result<_, _>>()?,
            Arg::Value(CellValue::Blank) => vec![],
            Arg::Value(v) => vec![to_bool(v)?],
        };
        for b in vals {
            seen = true;
            acc = if all { acc && b } else { acc || b };
        }
    }
    if seen {
        Ok(CellValue::Boolean(acc))
    } else {
        Err(ErrorKind::Value)
    }
}

fn unary_num(args: &[Arg], f: impl Fn(f64) -> Result<f64, ErrorKind>) -> Eval {
    arity(args, 1, 1)?;
    Ok(CellValue::number(f(to_number(&args[0].scalar())?)?))
}

fn unary_text(args: &[Arg], f: impl Fn(&str) -> CellValue) -> Eval {
    arity(args, 1, 1)?;
    Ok(f(&to_text(&args[0].scalar())?))
}

fn power(base: f64, exp: f64) -> Eval {
    if base == 0.0 && exp < 0.0 {
        return Err(ErrorKind::Div0);
    }
    let r = base.powf(exp);
    if r.is_finite() {
        Ok(CellValue::Number(r))
    } else {
        Err(ErrorKind::Value)
    }
}

pub(crate) fn power_value(base: f64, exp: f64) -> CellValue {
    power(base, exp).unwrap_or_else(CellValue::Error)
}

/// Rounds to `digits` decimal places, halves away from zero, working on the
/// 15-significant-digit decimal form so that `2.675` rounds to `2.68`.
pub fn round_half_away(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let sci = format!("{:.14e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("exponent");
    let sig: Vec<u8> = mantissa.bytes().filter(u8::is_ascii_digit).map(|b| b - b'0').collect();
    // value = 0.d1 d2 ... d15 * 10^(exp + 1)
    let keep = exp + 1 + digits;
    if keep >= sig.len() as i32 {
        return x;
    }
    let magnitude = if keep < 0 {
        0.0
    } else {
        let mut int: u64 = sig[..keep as usize].iter().fold(0, |acc, d| acc * 10 + u64::from(*d));
        if sig[keep as usize] >= 5 {
            int += 1;
        }
        format!("{}e{}", int, exp + 1 - keep).parse::<f64>().expect("decimal")
    };
    magnitude.copysign(x)
}

fn substring(args: &[Arg], left: bool) -> Eval {
    arity(args, 1, 2)?;
    let text = to_text(&args[0].scalar())?;
    let n = match args.get(1) {
        Some(a) => to_number(&a.scalar())?.trunc(),
        None => 1.0,
    };
    if n < 0.0 {
        return Err(ErrorKind::Value);
    }
    let chars: Vec<char> = text.chars().collect();
    let n = (n as usize).min(chars.len());
    let slice = if left { &chars[..n] } else { &chars[chars.len() - n..] };
    Ok(CellValue::Text(slice.iter().collect()))
}

/// Cross-type ordering: numbers < text < booleans; text is case-insensitive.
pub(crate) fn compare(a: &CellValue, b: &CellValue) -> Ordering {
    fn rank(v: &CellValue) -> u8 {
        match v {
            CellValue::Number(_) | CellValue::Blank => 0,
            CellValue::Text(_) => 1,
            CellValue::Boolean(_) => 2,
            CellValue::Error(_) => 3,
        }
    }
    match (a, b) {
        (CellValue::Number(x), CellValue::Number(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (CellValue::Text(x), CellValue::Text(y)) => x.to_lowercase().cmp(&y.to_lowercase()),
        (CellValue::Boolean(x), CellValue::Boolean(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

fn same_kind(a: &CellValue, b: &CellValue) -> bool {
    matches!(
        (a, b),
        (CellValue::Number(_), CellValue::Number(_))
            | (CellValue::Text(_), CellValue::Text(_))
            | (CellValue::Boolean(_), CellValue::Boolean(_))
    )
}

fn lookup_key(v: CellValue) -> Result<CellValue, ErrorKind> {
    match v {
        CellValue::Error(e) => Err(e),
        CellValue::Blank => Ok(CellValue::Number(0.0)),
        other => Ok(other),
    }
}

/// Position of `needle` in `keys`: exact match, or the last key not greater
/// than `needle` in an ascending list (scan stops at the first larger key).
fn find_position(keys: &[CellValue], needle: &CellValue, exact: bool) -> Option<usize> {
    if exact {
        return keys
            .iter()
            .position(|k| same_kind(k, needle) && compare(k, needle) == Ordering::Equal);
    }
    let mut found = None;
    for (i, k) in keys.iter().enumerate() {
        if !same_kind(k, needle) {
            continue;
        }
        match compare(k, needle) {
            Ordering::Greater => break,
            _ => found = Some(i),
        }
    }
    found
}

fn lookup(args: &[Arg], vertical: bool) -> Eval {
    arity(args, 3, 4)?;
    let needle = lookup_key(args[0].scalar())?;
    let table = args[1].grid();
    let index = to_number(&args[2].scalar())?.trunc();
    let approximate = match args.get(3) {
        Some(a) => to_bool(&a.scalar())?,
        None => true,
    };
    let span = if vertical { table.cols() } else { table.rows() };
    if index < 1.0 {
        return Err(ErrorKind::Value);
    }
    if index as usize > span {
        return Err(ErrorKind::Ref);
    }
    let keys: Vec<CellValue> = if vertical {
        (0..table.rows()).map(|r| table.get(r, 0).cloned().unwrap_or_default()).collect()
    } else {
        table.row_vec(0).to_vec()
    };
    let hit = find_position(&keys, &needle, !approximate).ok_or(ErrorKind::Na)?;
    let offset = index as usize - 1;
    let cell = if vertical { table.get(hit, offset) } else { table.get(offset, hit) };
    Ok(cell.cloned().unwrap_or_default())
}

fn index(args: &[Arg]) -> Eval {
    arity(args, 2, 3)?;
    let grid = args[0].grid();
    let first = to_number(&args[1].scalar())?.trunc();
    let second = match args.get(2) {
        Some(a) => Some(to_number(&a.scalar())?.trunc()),
        None => None,
    };
    let (row, col) = match second {
        Some(c) => (first, c),
        None if grid.rows() == 1 => (1.0, first),
        None if grid.cols() == 1 => (first, 1.0),
        None => return Err(ErrorKind::Ref),
    };
    // whole-row/column selection (index 0) would need array results
    if row < 1.0 || col < 1.0 {
        return Err(ErrorKind::Value);
    }
    grid.get(row as usize - 1, col as usize - 1)
        .cloned()
        .ok_or(ErrorKind::Ref)
}

fn match_fn(args: &[Arg]) -> Eval {
    arity(args, 2, 3)?;
    let needle = lookup_key(args[0].scalar())?;
    let grid = args[1].grid();
    let keys = grid.as_vector().ok_or(ErrorKind::Na)?;
    let mode = match args.get(2) {
        Some(a) => to_number(&a.scalar())?.trunc(),
        None => 1.0,
    };
    let hit = if mode == 0.0 {
        find_position(keys, &needle, true)
    } else if mode > 0.0 {
        find_position(keys, &needle, false)
    } else {
        let mut found = None;
        for (i, k) in keys.iter().enumerate() {
            if !same_kind(k, &needle) {
                continue;
            }
            match compare(k, &needle) {
                Ordering::Less => break,
                _ => found = Some(i),
            }
        }
        found
    };
    hit.map(|i| CellValue::Number((i + 1) as f64)).ok_or(ErrorKind::Na)
}

fn date_part(args: &[Arg], pick: impl Fn((i32, u32, u32)) -> f64) -> Eval {
    arity(args, 1, 1)?;
    let serial = to_number(&args[0].scalar())?;
    dates::serial_parts(serial)
        .map(|p| CellValue::Number(pick(p)))
        .ok_or(ErrorKind::Value)
}
