//! In-memory workbook: sheets of sparse cells, named ranges, action scripts,
//! and dependency-driven recalculation.
//!
//! A `Workbook` is not shared between threads while in use; clone it to get
//! an independent instance.

mod action;
mod eval;
mod graph;
mod text;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{ActionOutcome, ActionScript, ActionStep};
pub use eval::MAX_AREA_CELLS;
pub use text::{parse_literal, LoadError};

use crate::address::{looks_like_cell, CellAddress, RangeAddress, MAX_COL, MAX_ROW};
use crate::formula::{parse_formula, Expr, ParseError};
use crate::value::{CellValue, FormatHint, Grid};
use eval::{Evaluator, Node, Resolver};
use graph::DependencyGraph;

/// Default limit on populated cells per workbook.
pub const DEFAULT_CELL_CAP: usize = 300_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkbookError {
    #[error("unknown sheet `{0}`")]
    UnknownSheet(String),
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("unknown cell {0}")]
    UnknownCell(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("shape mismatch: target is {expected:?} (rows, cols) but value is {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("`{0}` is not a valid name")]
    InvalidName(String),
    #[error("name `{0}` is already defined")]
    DuplicateName(String),
    #[error("`{0}` is not a valid sheet name")]
    InvalidSheet(String),
    #[error("sheet `{0}` already exists")]
    DuplicateSheet(String),
    #[error("{count} populated cells exceed the cap of {cap}")]
    CapExceeded { count: usize, cap: usize },
    #[error(transparent)]
    Formula(#[from] ParseError),
    #[error("action `{name}`: {reason}")]
    InvalidAction { name: String, reason: String },
    #[error("{0} extends past the edge of the sheet")]
    OutOfBounds(String),
}

/// Identifies the stored revision a workbook instance was loaded from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkbookRef {
    pub id: String,
    pub revision: u32,
}

impl WorkbookRef {
    pub fn new(id: impl Into<String>, revision: u32) -> Self {
        Self {
            id: id.into(),
            revision,
        }
    }
}

impl std::fmt::Display for WorkbookRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.id, self.revision)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedRange {
    pub name: String,
    pub target: RangeAddress,
}

/// Where a write or read lands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Name(String),
    Cell(CellAddress),
    Range(RangeAddress),
}

impl Target {
    pub fn name(name: impl Into<String>) -> Self {
        Target::Name(name.into())
    }

    /// Reads `Sheet!A1`, `A1:B2` (with `default_sheet`) or a bare name.
    pub fn parse(text: &str, default_sheet: Option<&str>) -> Option<Self> {
        let text = text.trim();
        let local = text.rsplit_once('!').map_or(text, |(_, l)| l);
        if text.contains('!') || looks_like_cell(local.split(':').next().unwrap_or("")) {
            let range = RangeAddress::parse(text, default_sheet).ok()?;
            return Some(if range.is_single() {
                Target::Cell(range.top_left())
            } else {
                Target::Range(range)
            });
        }
        is_valid_name(text).then(|| Target::Name(text.to_string()))
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Name(n) => f.write_str(n),
            Target::Cell(c) => write!(f, "{c}"),
            Target::Range(r) => write!(f, "{r}"),
        }
    }
}

/// A value or a grid of values for [`Workbook::set_value`].
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Value(CellValue),
    Grid(Grid),
}

impl From<CellValue> for Input {
    fn from(v: CellValue) -> Self {
        Input::Value(v)
    }
}

impl From<Grid> for Input {
    fn from(g: Grid) -> Self {
        Input::Grid(g)
    }
}

impl From<f64> for Input {
    fn from(n: f64) -> Self {
        Input::Value(CellValue::number(n))
    }
}

/// `[A-Za-z_][A-Za-z0-9_.]*`, not readable as a cell address or boolean.
pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    let head_ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    head_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !looks_like_cell(name)
        && !name.eq_ignore_ascii_case("TRUE")
        && !name.eq_ignore_ascii_case("FALSE")
}

fn is_valid_sheet_name(name: &str) -> bool {
    !name.is_empty()
        && name.trim() == name
        && !name.starts_with('\'')
        && !name.contains(['!', '[', ']', ':', '*', '?', '/', '\\'])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Pos {
    pub sheet: u32,
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct Area {
    pub sheet: u32,
    pub c1: u32,
    pub r1: u32,
    pub c2: u32,
    pub r2: u32,
}

impl Area {
    fn single(p: Pos) -> Self {
        Self {
            sheet: p.sheet,
            c1: p.col,
            r1: p.row,
            c2: p.col,
            r2: p.row,
        }
    }

    pub fn rows(&self) -> u32 {
        self.r2 - self.r1 + 1
    }

    pub fn cols(&self) -> u32 {
        self.c2 - self.c1 + 1
    }

    pub fn len(&self) -> u64 {
        u64::from(self.rows()) * u64::from(self.cols())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows() as usize, self.cols() as usize)
    }

    /// Row-major.
    pub fn positions(self) -> impl Iterator<Item = Pos> {
        (self.r1..=self.r2).flat_map(move |row| {
            (self.c1..=self.c2).map(move |col| Pos {
                sheet: self.sheet,
                row,
                col,
            })
        })
    }
}

#[derive(Debug)]
struct FormulaCell {
    expr: Expr,
    node: Node,
}

#[derive(Debug, Clone)]
struct Cell {
    /// Literal input; blank for formula cells.
    input: CellValue,
    formula: Option<Arc<FormulaCell>>,
    format: FormatHint,
}

#[derive(Debug, Clone)]
pub struct Workbook {
    title: String,
    sheets: Vec<String>,
    sheet_index: HashMap<String, u32>,
    /// Only populated cells (non-blank literal or formula) are stored.
    cells: HashMap<Pos, Cell>,
    names: BTreeMap<String, NamedRange>,
    name_areas: HashMap<String, Area>,
    actions: BTreeMap<String, ActionScript>,
    graph: DependencyGraph,
    values: HashMap<Pos, CellValue>,
    dirty: HashSet<Pos>,
    calculated: bool,
    cap: usize,
    origin: Option<WorkbookRef>,
    last_evaluated: Vec<Pos>,
}

struct WorkbookResolver<'a>(&'a Workbook);

impl Resolver for WorkbookResolver<'_> {
    fn sheet_index(&self, name: &str) -> Option<u32> {
        self.0.sheet_index.get(&name.to_lowercase()).copied()
    }

    fn name_area(&self, name: &str) -> Option<Area> {
        self.0.name_areas.get(&name.to_lowercase()).copied()
    }
}

impl Workbook {
    pub fn new(title: impl Into<String>) -> Self {
        Self::with_cap(title, DEFAULT_CELL_CAP)
    }

    pub fn with_cap(title: impl Into<String>, cap: usize) -> Self {
        Self {
            title: title.into(),
            sheets: Vec::new(),
            sheet_index: HashMap::new(),
            cells: HashMap::new(),
            names: BTreeMap::new(),
            name_areas: HashMap::new(),
            actions: BTreeMap::new(),
            graph: DependencyGraph::default(),
            values: HashMap::new(),
            dirty: HashSet::new(),
            calculated: false,
            cap,
            origin: None,
            last_evaluated: Vec::new(),
        }
    }

    /// Parses the line-oriented workbook document with the default cell cap.
    pub fn load(document: &str) -> Result<Self, LoadError> {
        text::load(document, DEFAULT_CELL_CAP)
    }

    pub fn load_with_cap(document: &str, cap: usize) -> Result<Self, LoadError> {
        text::load(document, cap)
    }

    /// Canonical document text; `load(save(wb))` reproduces `wb`.
    pub fn save(&self) -> String {
        text::save(self)
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn sheets(&self) -> &[String] {
        &self.sheets
    }

    pub fn populated_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn origin(&self) -> Option<&WorkbookRef> {
        self.origin.as_ref()
    }

    pub fn set_origin(&mut self, origin: WorkbookRef) {
        self.origin = Some(origin);
    }

    pub fn add_sheet(&mut self, name: &str) -> Result<(), WorkbookError> {
        if !is_valid_sheet_name(name) {
            return Err(WorkbookError::InvalidSheet(name.to_string()));
        }
        let key = name.to_lowercase();
        if self.sheet_index.contains_key(&key) {
            return Err(WorkbookError::DuplicateSheet(name.to_string()));
        }
        self.sheet_index.insert(key, self.sheets.len() as u32);
        self.sheets.push(name.to_string());
        Ok(())
    }

    /// Registers a name. Formulas already compiled against an unknown name
    /// keep their `#NAME?` result, so define names before formulas.
    pub fn define_name(&mut self, name: &str, target: RangeAddress) -> Result<(), WorkbookError> {
        if !is_valid_name(name) {
            return Err(WorkbookError::InvalidName(name.to_string()));
        }
        let key = name.to_lowercase();
        if self.names.contains_key(&key) {
            return Err(WorkbookError::DuplicateName(name.to_string()));
        }
        let area = self.area_of(&target)?;
        let target = RangeAddress::new(
            self.sheets[area.sheet as usize].clone(),
            (area.c1, area.r1),
            (area.c2, area.r2),
        );
        self.name_areas.insert(key.clone(), area);
        self.names.insert(
            key,
            NamedRange {
                name: name.to_string(),
                target,
            },
        );
        Ok(())
    }

    pub fn named_range(&self, name: &str) -> Option<&NamedRange> {
        self.names.get(&name.to_lowercase())
    }

    pub fn names(&self) -> impl Iterator<Item = &NamedRange> {
        self.names.values()
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionScript> {
        self.actions.values()
    }

    pub fn action(&self, name: &str) -> Option<&ActionScript> {
        self.actions.get(&name.to_lowercase())
    }

    /// Shape (rows, cols) of a named range.
    pub fn name_shape(&self, name: &str) -> Option<(usize, usize)> {
        self.name_areas.get(&name.to_lowercase()).map(Area::shape)
    }

    pub fn format_hint(&self, addr: &CellAddress) -> FormatHint {
        self.pos_of(addr)
            .ok()
            .and_then(|p| self.cells.get(&p))
            .map_or(FormatHint::General, |c| c.format)
    }

    /// Format hint of the top-left cell of a name.
    pub fn name_format(&self, name: &str) -> Option<FormatHint> {
        let area = self.name_areas.get(&name.to_lowercase())?;
        let top_left = Pos {
            sheet: area.sheet,
            row: area.r1,
            col: area.c1,
        };
        Some(self.cells.get(&top_left).map_or(FormatHint::General, |c| c.format))
    }

    pub fn set_format(&mut self, addr: &CellAddress, hint: FormatHint) -> Result<(), WorkbookError> {
        let pos = self.pos_of(addr)?;
        if let Some(cell) = self.cells.get_mut(&pos) {
            cell.format = hint;
        }
        Ok(())
    }

    /// Sets a formula cell from text such as `=A1+1`.
    pub fn set_formula(&mut self, addr: &CellAddress, formula: &str) -> Result<(), WorkbookError> {
        let expr = parse_formula(formula)?;
        self.set_formula_expr(addr, expr)
    }

    pub fn set_formula_expr(&mut self, addr: &CellAddress, expr: Expr) -> Result<(), WorkbookError> {
        let pos = self.pos_of(addr)?;
        if !self.cells.contains_key(&pos) && self.cells.len() >= self.cap {
            return Err(WorkbookError::CapExceeded {
                count: self.cells.len() + 1,
                cap: self.cap,
            });
        }
        let node = eval::compile(&expr, pos.sheet, &WorkbookResolver(self));
        let mut reads = Vec::new();
        eval::collect_reads(&node, &mut reads);
        self.graph.set_precedents(pos, reads);
        let format = self.cells.get(&pos).map_or(FormatHint::General, |c| c.format);
        self.cells.insert(
            pos,
            Cell {
                input: CellValue::Blank,
                formula: Some(Arc::new(FormulaCell { expr, node })),
                format,
            },
        );
        self.dirty.insert(pos);
        Ok(())
    }

    pub fn formula(&self, addr: &CellAddress) -> Option<&Expr> {
        let pos = self.pos_of(addr).ok()?;
        self.cells.get(&pos)?.formula.as_ref().map(|f| &f.expr)
    }

    /// Current (last calculated) value of a cell.
    pub fn value(&self, addr: &CellAddress) -> CellValue {
        self.pos_of(addr)
            .ok()
            .and_then(|p| self.values.get(&p).cloned())
            .unwrap_or_default()
    }

    pub fn values(&self) -> Values<'_> {
        Values { wb: self }
    }

    /// Writes a literal value or grid. Formulas in the targeted cells are
    /// replaced, and the cells are marked dirty for the next recalculation.
    pub fn set_value(&mut self, target: &Target, input: Input) -> Result<(), WorkbookError> {
        let area = self.resolve(target)?;
        let grid = match input {
            Input::Value(v) => {
                if area.shape() != (1, 1) {
                    return Err(WorkbookError::ShapeMismatch {
                        expected: area.shape(),
                        actual: (1, 1),
                    });
                }
                Grid::scalar(v)
            }
            Input::Grid(g) => {
                if g.shape() != area.shape() {
                    return Err(WorkbookError::ShapeMismatch {
                        expected: area.shape(),
                        actual: g.shape(),
                    });
                }
                g
            }
        };
        self.write_area(area, grid.into_values())
    }

    fn write_area(&mut self, area: Area, values: Vec<CellValue>) -> Result<(), WorkbookError> {
        let mut count = self.cells.len();
        for (pos, v) in area.positions().zip(&values) {
            match (self.cells.contains_key(&pos), v.is_blank()) {
                (false, false) => count += 1,
                (true, true) => count -= 1,
                _ => {}
            }
        }
        if count > self.cap {
            return Err(WorkbookError::CapExceeded { count, cap: self.cap });
        }
        for (pos, v) in area.positions().zip(values) {
            self.write_input(pos, v);
        }
        Ok(())
    }

    fn write_input(&mut self, pos: Pos, value: CellValue) {
        if self.cells.get(&pos).is_some_and(|c| c.formula.is_some()) {
            self.graph.remove(pos);
        }
        if value.is_blank() {
            self.cells.remove(&pos);
            self.values.remove(&pos);
        } else {
            let format = self.cells.get(&pos).map_or(FormatHint::General, |c| c.format);
            self.values.insert(pos, value.clone());
            self.cells.insert(
                pos,
                Cell {
                    input: value,
                    formula: None,
                    format,
                },
            );
        }
        self.dirty.insert(pos);
    }

    /// Current values under a named range, row-major.
    pub fn get_range(&self, name: &str) -> Result<Grid, WorkbookError> {
        let area = self
            .name_areas
            .get(&name.to_lowercase())
            .ok_or_else(|| WorkbookError::UnknownName(name.to_string()))?;
        Ok(self.read_area(*area))
    }

    /// Current values under any target.
    pub fn read(&self, target: &Target) -> Result<Grid, WorkbookError> {
        let area = self.resolve(target)?;
        Ok(self.read_area(area))
    }

    fn read_area(&self, area: Area) -> Grid {
        let values = area
            .positions()
            .map(|p| self.values.get(&p).cloned().unwrap_or_default())
            .collect();
        Grid::new(area.rows() as usize, area.cols() as usize, values)
    }

    /// Evaluates every formula cell in dependency order.
    pub fn recalc_full(&mut self) -> Values<'_> {
        if self.graph.is_stale() {
            self.graph.rebuild_order();
        }
        let order = self.graph.order().to_vec();
        for &pos in &order {
            self.evaluate(pos);
        }
        self.last_evaluated = order;
        self.dirty.clear();
        self.calculated = true;
        self.values()
    }

    /// Re-evaluates `changed`, the cells marked dirty since the last
    /// recalculation, and everything that transitively reads them.
    pub fn recalc_incremental(&mut self, changed: &[CellAddress]) -> Result<Values<'_>, WorkbookError> {
        let mut seeds = Vec::with_capacity(changed.len());
        for addr in changed {
            let pos = self
                .pos_of(addr)
                .map_err(|_| WorkbookError::UnknownCell(addr.to_string()))?;
            seeds.push(pos);
        }
        Ok(self.recalc_from(seeds))
    }

    /// Recalculates whatever is dirty; a full pass if never calculated.
    pub fn recalc(&mut self) -> Values<'_> {
        self.recalc_from(Vec::new())
    }

    fn recalc_from(&mut self, seeds: Vec<Pos>) -> Values<'_> {
        if !self.calculated {
            return self.recalc_full();
        }
        if self.graph.is_stale() {
            self.graph.rebuild_order();
        }
        let dirty = std::mem::take(&mut self.dirty);
        let affected = self.graph.transitive_dependents(seeds.into_iter().chain(dirty));
        let mut formulas: Vec<Pos> = affected
            .into_iter()
            .filter(|p| self.graph.is_formula(*p))
            .collect();
        formulas.sort_unstable_by_key(|p| self.graph.rank(*p));
        for &pos in &formulas {
            self.evaluate(pos);
        }
        self.last_evaluated = formulas;
        self.values()
    }

    fn evaluate(&mut self, pos: Pos) {
        let Some(formula) = self.cells.get(&pos).and_then(|c| c.formula.clone()) else {
            return;
        };
        let value = if self.graph.is_cyclic(pos) {
            CellValue::Error(crate::value::ErrorKind::Cycle)
        } else {
            Evaluator { values: &self.values }.cell_result(&formula.node)
        };
        self.values.insert(pos, value);
    }

    /// Formula cells evaluated by the most recent recalculation, in order.
    pub fn last_evaluated(&self) -> Vec<CellAddress> {
        self.last_evaluated.iter().map(|p| self.address_of(*p)).collect()
    }

    pub fn is_calculated(&self) -> bool {
        self.calculated
    }

    /// Cells read by the formula at `addr`.
    pub fn precedents(&self, addr: &CellAddress) -> Vec<CellAddress> {
        self.pos_of(addr)
            .map(|p| self.graph.precedents_of(p).iter().map(|q| self.address_of(*q)).collect())
            .unwrap_or_default()
    }

    /// Formula cells that read `addr` directly.
    pub fn dependents(&self, addr: &CellAddress) -> Vec<CellAddress> {
        self.pos_of(addr)
            .map(|p| self.graph.dependents_of(p).iter().map(|q| self.address_of(*q)).collect())
            .unwrap_or_default()
    }

    pub fn is_on_cycle(&self, addr: &CellAddress) -> bool {
        self.pos_of(addr).is_ok_and(|p| self.graph.is_cyclic(p))
    }

    // -- addressing ---------------------------------------------------------

    fn sheet_of(&self, name: &str) -> Result<u32, WorkbookError> {
        self.sheet_index
            .get(&name.to_lowercase())
            .copied()
            .ok_or_else(|| WorkbookError::UnknownSheet(name.to_string()))
    }

    fn pos_of(&self, addr: &CellAddress) -> Result<Pos, WorkbookError> {
        let sheet = self.sheet_of(&addr.sheet)?;
        if !(1..=MAX_COL).contains(&addr.col) || !(1..=MAX_ROW).contains(&addr.row) {
            return Err(WorkbookError::OutOfBounds(addr.to_string()));
        }
        Ok(Pos {
            sheet,
            row: addr.row,
            col: addr.col,
        })
    }

    fn address_of(&self, p: Pos) -> CellAddress {
        CellAddress::new(self.sheets[p.sheet as usize].clone(), p.col, p.row)
    }

    fn area_of(&self, range: &RangeAddress) -> Result<Area, WorkbookError> {
        let sheet = self.sheet_of(&range.sheet)?;
        let in_bounds = |(c, r): (u32, u32)| (1..=MAX_COL).contains(&c) && (1..=MAX_ROW).contains(&r);
        if !in_bounds(range.start) || !in_bounds(range.end) {
            return Err(WorkbookError::OutOfBounds(range.to_string()));
        }
        Ok(Area {
            sheet,
            c1: range.start.0,
            r1: range.start.1,
            c2: range.end.0,
            r2: range.end.1,
        })
    }

    fn resolve(&self, target: &Target) -> Result<Area, WorkbookError> {
        match target {
            Target::Name(n) => self
                .name_areas
                .get(&n.to_lowercase())
                .copied()
                .ok_or_else(|| WorkbookError::UnknownName(n.clone())),
            Target::Cell(c) => self.pos_of(c).map(Area::single),
            Target::Range(r) => self.area_of(r),
        }
    }

    pub(crate) fn resolver(&self) -> impl Resolver + '_ {
        WorkbookResolver(self)
    }
}

/// Read-only view of the calculated value map (populated cells only).
pub struct Values<'a> {
    wb: &'a Workbook,
}

impl Values<'_> {
    pub fn get(&self, addr: &CellAddress) -> CellValue {
        self.wb.value(addr)
    }

    pub fn len(&self) -> usize {
        self.wb.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wb.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellAddress, &CellValue)> + '_ {
        self.wb.values.iter().map(|(p, v)| (self.wb.address_of(*p), v))
    }

    pub fn to_map(&self) -> BTreeMap<CellAddress, CellValue> {
        self.iter().map(|(a, v)| (a, v.clone())).collect()
    }

    /// Same cells, and every value equal bit for bit.
    pub fn bit_identical(&self, other: &Values<'_>) -> bool {
        if self.len() != other.len() {
            return false;
        }
        if self.wb.sheets == other.wb.sheets {
            return self
                .wb
                .values
                .iter()
                .all(|(p, v)| other.wb.values.get(p).is_some_and(|o| v.bit_eq(o)));
        }
        let a = self.to_map();
        let b = other.to_map();
        a.len() == b.len() && a.iter().zip(&b).all(|((ka, va), (kb, vb))| ka == kb && va.bit_eq(vb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::ErrorKind;

    fn addr(s: &str) -> CellAddress {
        CellAddress::parse(s, Some("S")).unwrap()
    }

    fn book() -> Workbook {
        let mut wb = Workbook::new("t");
        wb.add_sheet("S").unwrap();
        wb
    }

    fn put(wb: &mut Workbook, a: &str, v: f64) {
        wb.set_value(&Target::Cell(addr(a)), v.into()).unwrap();
    }

    #[test]
    fn simple_sum() {
        let mut wb = book();
        put(&mut wb, "A1", 1.0);
        put(&mut wb, "A2", 2.0);
        wb.set_formula(&addr("A3"), "=A1+A2").unwrap();
        let values = wb.recalc_full();
        assert_eq!(values.get(&addr("A3")), CellValue::Number(3.0));
        assert_eq!(values.len(), 3);
    }

    #[test]
    fn two_cycle_and_division() {
        let mut wb = book();
        wb.set_formula(&addr("A1"), "=B1").unwrap();
        wb.set_formula(&addr("B1"), "=A1").unwrap();
        wb.set_formula(&addr("C1"), "=1/0").unwrap();
        wb.set_formula(&addr("D1"), "=A1+1").unwrap();
        wb.set_formula(&addr("E1"), "=5").unwrap();
        wb.recalc_full();
        assert_eq!(wb.value(&addr("A1")), CellValue::Error(ErrorKind::Cycle));
        assert_eq!(wb.value(&addr("B1")), CellValue::Error(ErrorKind::Cycle));
        assert_eq!(wb.value(&addr("C1")), CellValue::Error(ErrorKind::Div0));
        // off-cycle reader gets the propagated error, unrelated cells still evaluate
        assert_eq!(wb.value(&addr("D1")), CellValue::Error(ErrorKind::Cycle));
        assert!(!wb.is_on_cycle(&addr("D1")));
        assert_eq!(wb.value(&addr("E1")), CellValue::Number(5.0));
    }

    #[test]
    fn breaking_a_cycle_by_overwrite() {
        let mut wb = book();
        wb.set_formula(&addr("A1"), "=B1").unwrap();
        wb.set_formula(&addr("B1"), "=A1*2").unwrap();
        wb.recalc_full();
        put(&mut wb, "A1", 4.0);
        wb.recalc_incremental(&[addr("A1")]).unwrap();
        assert_eq!(wb.value(&addr("B1")), CellValue::Number(8.0));
        assert!(wb.formula(&addr("A1")).is_none());
    }

    #[test]
    fn incremental_touches_only_dependents() {
        let mut wb = book();
        put(&mut wb, "A1", 1.0);
        wb.set_formula(&addr("A2"), "=A1*2").unwrap();
        wb.set_formula(&addr("A3"), "=A2+1").unwrap();
        wb.set_formula(&addr("B1"), "=10").unwrap();
        put(&mut wb, "C1", 7.0);
        wb.recalc_full();
        put(&mut wb, "A1", 5.0);
        wb.recalc_incremental(&[addr("A1")]).unwrap();
        assert_eq!(wb.last_evaluated(), vec![addr("A2"), addr("A3")]);
        assert_eq!(wb.value(&addr("A3")), CellValue::Number(11.0));
        put(&mut wb, "C1", 8.0);
        wb.recalc_incremental(&[addr("C1")]).unwrap();
        assert!(wb.last_evaluated().is_empty());
        assert_eq!(wb.value(&addr("C1")), CellValue::Number(8.0));
    }

    #[test]
    fn unknown_cell_in_incremental() {
        let mut wb = book();
        wb.recalc_full();
        let err = wb.recalc_incremental(&[CellAddress::new("Nope", 1, 1)]);
        assert!(matches!(err, Err(WorkbookError::UnknownCell(_))));
    }

    #[test]
    fn named_ranges_and_shapes() {
        let mut wb = book();
        wb.define_name("Cash", RangeAddress::parse("S!B2", None).unwrap()).unwrap();
        wb.define_name("Block", RangeAddress::parse("S!A1:B3", None).unwrap()).unwrap();
        wb.set_value(&Target::name("cash"), 100.0.into()).unwrap();
        assert_eq!(wb.get_range("Cash").unwrap(), Grid::scalar(CellValue::Number(100.0)));
        let block = wb.get_range("Block").unwrap();
        assert_eq!(block.shape(), (3, 2));
        assert_eq!(block.get(1, 1), Some(&CellValue::Number(100.0)));
        assert_eq!(block.get(0, 0), Some(&CellValue::Blank));

        let two_by_two = Grid::new(2, 2, vec![CellValue::Number(1.0); 4]);
        assert_eq!(
            wb.set_value(&Target::name("Cash"), two_by_two.into()),
            Err(WorkbookError::ShapeMismatch {
                expected: (1, 1),
                actual: (2, 2)
            })
        );
        assert_eq!(
            wb.set_value(&Target::name("Missing"), 1.0.into()),
            Err(WorkbookError::UnknownName("Missing".into()))
        );
        assert!(matches!(wb.get_range("Missing"), Err(WorkbookError::UnknownName(_))));
    }

    #[test]
    fn name_rules() {
        let mut wb = book();
        let r = RangeAddress::parse("S!A1", None).unwrap();
        assert_eq!(wb.define_name("A1", r.clone()), Err(WorkbookError::InvalidName("A1".into())));
        assert_eq!(wb.define_name("1x", r.clone()), Err(WorkbookError::InvalidName("1x".into())));
        assert_eq!(wb.define_name("True", r.clone()), Err(WorkbookError::InvalidName("True".into())));
        wb.define_name("Rate.Base", r.clone()).unwrap();
        assert_eq!(
            wb.define_name("RATE.base", r),
            Err(WorkbookError::DuplicateName("RATE.base".into()))
        );
    }

    #[test]
    fn overwrite_clears_formula_and_counts() {
        let mut wb = book();
        wb.set_formula(&addr("A1"), "=1+1").unwrap();
        put(&mut wb, "B1", 3.0);
        assert_eq!(wb.populated_cells(), 2);
        put(&mut wb, "A1", 9.0);
        assert!(wb.formula(&addr("A1")).is_none());
        wb.set_value(&Target::Cell(addr("B1")), CellValue::Blank.into()).unwrap();
        assert_eq!(wb.populated_cells(), 1);
        assert!(wb.graph.check_inverse());
    }

    #[test]
    fn cap_is_enforced_on_writes() {
        let mut wb = Workbook::with_cap("t", 2);
        wb.add_sheet("S").unwrap();
        put(&mut wb, "A1", 1.0);
        put(&mut wb, "A2", 1.0);
        assert_eq!(
            wb.set_value(&Target::Cell(addr("A3")), 1.0.into()),
            Err(WorkbookError::CapExceeded { count: 3, cap: 2 })
        );
        // replacing an existing cell is fine
        put(&mut wb, "A2", 2.0);
    }

    #[test]
    fn unknown_sheet_and_name_in_formulas() {
        let mut wb = book();
        wb.set_formula(&addr("A1"), "=Other!A1").unwrap();
        wb.set_formula(&addr("A2"), "=NoSuchName+1").unwrap();
        wb.set_formula(&addr("A3"), "=NOW()").unwrap();
        wb.recalc_full();
        assert_eq!(wb.value(&addr("A1")), CellValue::Error(ErrorKind::Ref));
        assert_eq!(wb.value(&addr("A2")), CellValue::Error(ErrorKind::Name));
        assert_eq!(wb.value(&addr("A3")), CellValue::Error(ErrorKind::Name));
    }

    #[test]
    fn sheets_are_case_insensitive() {
        let mut wb = book();
        assert_eq!(wb.add_sheet("s"), Err(WorkbookError::DuplicateSheet("s".into())));
        wb.add_sheet("Second").unwrap();
        put(&mut wb, "A1", 2.0);
        wb.set_formula(&CellAddress::new("second", 1, 1), "=s!A1*3").unwrap();
        wb.recalc_full();
        assert_eq!(wb.value(&CellAddress::new("SECOND", 1, 1)), CellValue::Number(6.0));
    }

    #[test]
    fn blank_reference_results_read_as_zero() {
        let mut wb = book();
        wb.set_formula(&addr("A1"), "=B1").unwrap();
        wb.set_formula(&addr("A2"), "=ISBLANK(B1)").unwrap();
        wb.recalc_full();
        assert_eq!(wb.value(&addr("A1")), CellValue::Number(0.0));
        assert_eq!(wb.value(&addr("A2")), CellValue::Boolean(true));
    }

    #[test]
    fn target_parsing() {
        assert_eq!(Target::parse("Total", None), Some(Target::name("Total")));
        assert_eq!(Target::parse("A1", Some("S")), Some(Target::Cell(addr("A1"))));
        assert!(matches!(Target::parse("S!A1:B2", None), Some(Target::Range(_))));
        assert_eq!(Target::parse("9bad", None), None);
    }
}
