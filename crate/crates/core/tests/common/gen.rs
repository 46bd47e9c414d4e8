//! Random workbooks and edit sequences for recalculation property tests.
//!
//! Cells are given a creation index; a formula only reads cells with a lower
//! index (or empty cells), so generated graphs are acyclic unless
//! `allow_cycles` is set.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

pub const SHEETS: [&str; 2] = ["S1", "Data Two"];
const COLS: u32 = 12;
const ROWS: u32 = 45;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct P {
    pub sheet: usize,
    pub col: u32,
    pub row: u32,
}

impl P {
    pub fn local(&self) -> String {
        format!("{}{}", col_letters(self.col), self.row)
    }

    pub fn qualified(&self) -> String {
        format!("{}!{}", quoted(SHEETS[self.sheet]), self.local())
    }
}

fn quoted(sheet: &str) -> String {
    if sheet.chars().all(|c| c.is_ascii_alphanumeric()) {
        sheet.to_string()
    } else {
        format!("'{sheet}'")
    }
}

fn col_letters(mut c: u32) -> String {
    let mut s = Vec::new();
    while c > 0 {
        let r = (c - 1) % 26;
        s.push(b'A' + r as u8);
        c = (c - 1) / 26;
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

#[derive(Clone, Debug)]
pub enum Content {
    Literal(String),
    Formula(String),
}

#[derive(Clone, Debug)]
pub struct Model {
    /// Creation index per populated position.
    pub index: HashMap<P, i64>,
    pub cells: HashMap<P, Content>,
    /// name -> (sheet, c1, r1, c2, r2)
    pub names: Vec<(String, usize, u32, u32, u32, u32)>,
    pub next_index: i64,
    /// Indices handed to empty cells when a formula first reads them.
    pub next_low: i64,
    pub allow_cycles: bool,
}

pub fn literal<R: Rng>(rng: &mut R) -> String {
    match rng.gen_range(0..10) {
        0..=4 => format!("{}", rng.gen_range(-20i32..50)),
        5 | 6 => {
            let v: f64 = rng.gen_range(-1000.0..1000.0);
            format!("{v:?}")
        }
        7 => ["\"a\"", "\"B\"", "\"abc\"", "\"10\"", "\"\""][rng.gen_range(0..5)].to_string(),
        8 => ["TRUE", "FALSE"][rng.gen_range(0..2)].to_string(),
        _ => ["#N/A", "#DIV/0!", "0.5", "1e3"][rng.gen_range(0..4)].to_string(),
    }
}

impl Model {
    fn new(allow_cycles: bool) -> Self {
        Self {
            index: HashMap::new(),
            cells: HashMap::new(),
            names: Vec::new(),
            next_index: 0,
            next_low: -1,
            allow_cycles,
        }
    }

    fn random_pos<R: Rng>(rng: &mut R) -> P {
        P {
            sheet: rng.gen_range(0..SHEETS.len()),
            col: rng.gen_range(1..=COLS),
            row: rng.gen_range(1..=ROWS),
        }
    }

    /// Claims `p` for reading by a formula with index `limit`: empty cells
    /// get an index below every existing one.
    fn claim(&mut self, p: P, limit: i64) -> bool {
        match self.index.get(&p) {
            Some(&i) => i < limit || self.allow_cycles,
            None => {
                self.index.insert(p, self.next_low);
                self.next_low -= 1;
                true
            }
        }
    }

    fn readable<R: Rng>(&mut self, rng: &mut R, limit: i64) -> P {
        for _ in 0..20 {
            let p = Self::random_pos(rng);
            if self.claim(p, limit) {
                return p;
            }
        }
        let mut earlier: Vec<P> = self.index.iter().filter(|(_, &i)| i < limit).map(|(p, _)| *p).collect();
        earlier.sort();
        match earlier.choose(rng) {
            Some(p) => *p,
            None => {
                let p = P {
                    sheet: 0,
                    col: COLS + 1,
                    row: ROWS + 1,
                };
                self.claim(p, limit);
                p
            }
        }
    }

    fn claim_area(&mut self, sheet: usize, c1: u32, r1: u32, c2: u32, r2: u32, limit: i64) -> bool {
        if self.allow_cycles {
            return true;
        }
        let cells: Vec<P> = (r1..=r2)
            .flat_map(|row| (c1..=c2).map(move |col| P { sheet, col, row }))
            .collect();
        if cells.iter().any(|p| self.index.get(p).is_some_and(|&i| i >= limit)) {
            return false;
        }
        for p in cells {
            self.claim(p, limit);
        }
        true
    }

    fn range<R: Rng>(&mut self, rng: &mut R, limit: i64, home: usize) -> Option<String> {
        for _ in 0..10 {
            if !self.names.is_empty() && rng.gen_bool(0.25) {
                let (name, sheet, c1, r1, c2, r2) = self.names[rng.gen_range(0..self.names.len())].clone();
                if self.claim_area(sheet, c1, r1, c2, r2, limit) {
                    return Some(name);
                }
                continue;
            }
            let sheet = rng.gen_range(0..SHEETS.len());
            let c1 = rng.gen_range(1..=COLS);
            let r1 = rng.gen_range(1..=ROWS);
            let c2 = (c1 + rng.gen_range(0..3)).min(COLS);
            let r2 = (r1 + rng.gen_range(0..6)).min(ROWS);
            if self.claim_area(sheet, c1, r1, c2, r2, limit) {
                let a = P { sheet, col: c1, row: r1 };
                let b = P { sheet, col: c2, row: r2 };
                return Some(if sheet == home {
                    format!("{}:{}", a.local(), b.local())
                } else {
                    format!("{}:{}", a.qualified(), b.local())
                });
            }
        }
        None
    }

    fn reference<R: Rng>(&mut self, rng: &mut R, limit: i64, home: usize) -> String {
        let p = self.readable(rng, limit);
        if p.sheet == home && rng.gen_bool(0.7) {
            p.local()
        } else {
            p.qualified()
        }
    }

    fn expr<R: Rng>(&mut self, rng: &mut R, limit: i64, home: usize, depth: u32) -> String {
        let leaf = depth == 0 || rng.gen_bool(0.3);
        if leaf {
            return match rng.gen_range(0..10) {
                0..=5 => self.reference(rng, limit, home),
                6..=8 => format!("{}", rng.gen_range(0..30)),
                _ => literal(rng),
            };
        }
        let d = depth - 1;
        match rng.gen_range(0..22) {
            0..=5 => {
                let op = ["+", "-", "*", "/", "^", "&", "=", "<>", "<", "<=", ">", ">="][rng.gen_range(0..12)];
                let a = self.expr(rng, limit, home, d);
                let b = self.expr(rng, limit, home, d);
                format!("({a}{op}{b})")
            }
            6 => format!("-{}", self.expr(rng, limit, home, d)),
            7..=9 => {
                let f = ["SUM", "AVERAGE", "MIN", "MAX", "COUNT", "COUNTA"][rng.gen_range(0..6)];
                match self.range(rng, limit, home) {
                    Some(r) if rng.gen_bool(0.7) => format!("{f}({r})"),
                    Some(r) => format!("{f}({r},{})", self.expr(rng, limit, home, d)),
                    None => format!("{f}({})", self.expr(rng, limit, home, d)),
                }
            }
            10 => format!(
                "IF({},{},{})",
                self.expr(rng, limit, home, d),
                self.expr(rng, limit, home, d),
                self.expr(rng, limit, home, d)
            ),
            11 => {
                let f = ["AND", "OR"][rng.gen_range(0..2)];
                format!("{f}({},{})", self.expr(rng, limit, home, d), self.expr(rng, limit, home, d))
            }
            12 => {
                let f = ["NOT", "ABS", "SQRT", "LEN", "UPPER", "LOWER", "ISBLANK", "ISERROR"][rng.gen_range(0..8)];
                format!("{f}({})", self.expr(rng, limit, home, d))
            }
            13 => format!("ROUND({},{})", self.expr(rng, limit, home, d), rng.gen_range(-1..3)),
            14 => format!("POWER({},{})", self.expr(rng, limit, home, d), rng.gen_range(0..4)),
            15 => format!(
                "CONCATENATE({},{})",
                self.expr(rng, limit, home, d),
                self.expr(rng, limit, home, d)
            ),
            16 => {
                let f = ["LEFT", "RIGHT"][rng.gen_range(0..2)];
                format!("{f}({},{})", self.expr(rng, limit, home, d), rng.gen_range(0..4))
            }
            17 => format!(
                "IFERROR({},{})",
                self.expr(rng, limit, home, d),
                self.expr(rng, limit, home, d)
            ),
            18 => match self.range(rng, limit, home) {
                Some(r) => {
                    let f = ["VLOOKUP", "HLOOKUP"][rng.gen_range(0..2)];
                    let exact = ["FALSE", "TRUE"][rng.gen_range(0..2)];
                    format!("{f}({},{r},{},{exact})", self.expr(rng, limit, home, d), rng.gen_range(1..3))
                }
                None => self.reference(rng, limit, home),
            },
            19 => match self.range(rng, limit, home) {
                Some(r) => format!("INDEX({r},{},{})", rng.gen_range(0..4), rng.gen_range(0..3)),
                None => self.reference(rng, limit, home),
            },
            20 => match self.range(rng, limit, home) {
                Some(r) => format!("MATCH({},{r},{})", self.expr(rng, limit, home, d), rng.gen_range(-1..2)),
                None => self.reference(rng, limit, home),
            },
            _ => {
                if rng.gen_bool(0.5) {
                    format!(
                        "DATE({},{},{})",
                        rng.gen_range(1899..2100),
                        self.expr(rng, limit, home, d),
                        rng.gen_range(-5..40)
                    )
                } else {
                    let f = ["YEAR", "MONTH", "DAY"][rng.gen_range(0..3)];
                    format!("{f}({})", self.expr(rng, limit, home, d))
                }
            }
        }
    }

    pub fn formula_for<R: Rng>(&mut self, rng: &mut R, p: P, limit: i64) -> String {
        self.expr(rng, limit, p.sheet, 3)
    }

    fn place<R: Rng>(&mut self, rng: &mut R, p: P, formula_share: f64) {
        let idx = match self.index.get(&p) {
            Some(&i) => i,
            None => {
                let i = self.next_index;
                self.next_index += 1;
                self.index.insert(p, i);
                i
            }
        };
        let content = if rng.gen_bool(formula_share) {
            Content::Formula(self.formula_for(rng, p, idx))
        } else {
            Content::Literal(literal(rng))
        };
        self.cells.insert(p, content);
    }

    pub fn document(&self) -> String {
        let mut out = String::from("workbook generated\n");
        for (s, sheet) in SHEETS.iter().enumerate() {
            out.push_str(&format!("sheet {sheet}\n"));
            let mut cells: Vec<(&P, &Content)> = self.cells.iter().filter(|(p, _)| p.sheet == s).collect();
            cells.sort_by_key(|(p, _)| (p.row, p.col));
            for (p, c) in cells {
                match c {
                    Content::Literal(l) => out.push_str(&format!("cell {} = {l}\n", p.local())),
                    Content::Formula(f) => out.push_str(&format!("cell {} := {f}\n", p.local())),
                }
            }
        }
        for (name, sheet, c1, r1, c2, r2) in &self.names {
            let a = P { sheet: *sheet, col: *c1, row: *r1 };
            let b = P { sheet: *sheet, col: *c2, row: *r2 };
            out.push_str(&format!("name {name} = {}:{}\n", a.qualified(), b.local()));
        }
        out
    }
}

pub fn random_model<R: Rng>(rng: &mut R, max_cells: usize, allow_cycles: bool) -> Model {
    let mut m = Model::new(allow_cycles);
    for i in 0..rng.gen_range(0..4) {
        let sheet = rng.gen_range(0..SHEETS.len());
        let c1 = rng.gen_range(1..=COLS);
        let r1 = rng.gen_range(1..=ROWS);
        let c2 = (c1 + rng.gen_range(0..3)).min(COLS);
        let r2 = (r1 + rng.gen_range(0..4)).min(ROWS);
        m.names.push((format!("Named{i}"), sheet, c1, r1, c2, r2));
    }
    let n = rng.gen_range(1..=max_cells);
    let formula_share = rng.gen_range(0.2..0.7);
    for _ in 0..n * 2 {
        if m.cells.len() >= n {
            break;
        }
        let p = Model::random_pos(rng);
        if !m.cells.contains_key(&p) {
            m.place(rng, p, formula_share);
        }
    }
    m
}

#[derive(Clone, Debug)]
pub enum Edit {
    Literal(P, String),
    Formula(P, String),
    Clear(P),
}

impl Edit {
    pub fn pos(&self) -> P {
        match self {
            Edit::Literal(p, _) | Edit::Formula(p, _) | Edit::Clear(p) => *p,
        }
    }
}

/// Picks an edit and applies it to the model. New formulas keep the graph
/// acyclic by reading only cells created before the edited one.
pub fn random_edit<R: Rng>(rng: &mut R, m: &mut Model) -> Edit {
    let existing: Vec<P> = {
        let mut v: Vec<P> = m.cells.keys().copied().collect();
        v.sort();
        v
    };
    let p = if !existing.is_empty() && rng.gen_bool(0.8) {
        *existing.choose(rng).unwrap()
    } else {
        Model::random_pos(rng)
    };
    let idx = match m.index.get(&p) {
        Some(&i) => i,
        None => {
            let i = m.next_index;
            m.next_index += 1;
            m.index.insert(p, i);
            i
        }
    };
    let edit = match rng.gen_range(0..10) {
        0..=4 => Edit::Literal(p, literal(rng)),
        5..=7 => Edit::Formula(p, m.formula_for(rng, p, idx)),
        _ => Edit::Clear(p),
    };
    match &edit {
        Edit::Literal(_, l) => {
            m.cells.insert(p, Content::Literal(l.clone()));
        }
        Edit::Formula(_, f) => {
            m.cells.insert(p, Content::Formula(f.clone()));
        }
        Edit::Clear(_) => {
            m.cells.remove(&p);
        }
    }
    edit
}
