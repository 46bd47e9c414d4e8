//! Workbook engine and app-definition model.
//!
//! A [`Workbook`] holds sheets of cells, named ranges and action scripts and
//! recalculates through a static dependency graph. The [`appdef`] module
//! describes forms bound to a workbook by name and drives submissions
//! through them.

pub mod address;
pub mod appdef;
pub mod dates;
pub mod digest;
pub mod formula;
pub mod functions;
pub mod value;
pub mod workbook;

pub use address::{CellAddress, RangeAddress};
pub use dates::{iso_to_serial, serial_to_iso, DateError};
pub use formula::{parse_formula, Expr, ParseError};
pub use value::{CellValue, ErrorKind, FormatHint, Grid};
pub use workbook::{
    ActionOutcome, ActionScript, ActionStep, Input, LoadError, NamedRange, Target, Values, Workbook,
    WorkbookError, WorkbookRef,
};
