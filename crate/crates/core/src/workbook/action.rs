//! Action scripts: short lists of cell operations run when a button is pressed.
//! Failures never escape as errors; they are written into the script's
//! status cell as `ERR: <message>`.

use serde::{Deserialize, Serialize};

use super::{eval, Area, Evaluator, Target, Workbook, WorkbookError};
use crate::address::{CellAddress, MAX_COL, MAX_ROW};
use crate::formula::Expr;
use crate::functions;
use crate::value::CellValue;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionStep {
    /// Writes one literal into a single cell.
    Set { target: Target, value: CellValue },
    /// Copies current values (not formulas) with `dest` as the top-left anchor.
    Copy { source: Target, dest: CellAddress },
    Clear { target: Target },
    Recalc,
    /// Stops the script with `message` when `condition` is true, or evaluates
    /// to an error. References without a sheet resolve against the sheet of
    /// the status cell.
    FailIf { condition: Expr, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionScript {
    pub name: String,
    pub status: CellAddress,
    pub steps: Vec<ActionStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub ok: bool,
    /// Empty on success.
    pub message: String,
}

impl ActionOutcome {
    fn ok() -> Self {
        Self {
            ok: true,
            message: String::new(),
        }
    }
}

pub const STATUS_PREFIX: &str = "ERR: ";

impl Workbook {
    /// Registers an action after checking that its status cell and every
    /// step target resolve.
    pub fn define_action(&mut self, script: ActionScript) -> Result<(), WorkbookError> {
        let invalid = |reason: String| WorkbookError::InvalidAction {
            name: script.name.clone(),
            reason,
        };
        if !super::is_valid_name(&script.name) {
            return Err(WorkbookError::InvalidName(script.name.clone()));
        }
        let key = script.name.to_lowercase();
        if self.actions.contains_key(&key) {
            return Err(invalid("defined twice".into()));
        }
        if script.steps.is_empty() {
            return Err(invalid("no steps".into()));
        }
        self.pos_of(&script.status)?;
        for step in &script.steps {
            match step {
                ActionStep::Set { target, .. } => {
                    if self.resolve(target)?.shape() != (1, 1) {
                        return Err(invalid(format!("set target {target} is not a single cell")));
                    }
                }
                ActionStep::Copy { source, dest } => {
                    self.resolve(source)?;
                    self.pos_of(dest)?;
                }
                ActionStep::Clear { target } => {
                    self.resolve(target)?;
                }
                ActionStep::Recalc | ActionStep::FailIf { .. } => {}
            }
        }
        self.actions.insert(key, script);
        Ok(())
    }

    /// Runs an action. The only error is an unknown action name; step
    /// failures are reported through the outcome and the status cell.
    pub fn run_action(&mut self, name: &str) -> Result<ActionOutcome, WorkbookError> {
        let script = self
            .actions
            .get(&name.to_lowercase())
            .cloned()
            .ok_or_else(|| WorkbookError::UnknownAction(name.to_string()))?;
        let mut outcome = ActionOutcome::ok();
        for step in &script.steps {
            if let Err(message) = self.run_step(step, &script.status) {
                let status = Target::Cell(script.status.clone());
                let text = CellValue::Text(format!("{STATUS_PREFIX}{message}"));
                if let Err(e) = self.set_value(&status, text.into()) {
                    // the status cell was validated at definition; only the cap can refuse it
                    outcome.message = format!("{message}; status cell not written: {e}");
                } else {
                    outcome.message = message;
                }
                outcome.ok = false;
                break;
            }
        }
        self.recalc();
        Ok(outcome)
    }

    fn run_step(&mut self, step: &ActionStep, status: &CellAddress) -> Result<(), String> {
        match step {
            ActionStep::Set { target, value } => self
                .set_value(target, value.clone().into())
                .map_err(|e| e.to_string()),
            ActionStep::Clear { target } => {
                let area = self.resolve(target).map_err(|e| e.to_string())?;
                let blanks = vec![CellValue::Blank; area.len() as usize];
                self.write_area(area, blanks).map_err(|e| e.to_string())
            }
            ActionStep::Copy { source, dest } => {
                let from = self.resolve(source).map_err(|e| e.to_string())?;
                let anchor = self.pos_of(dest).map_err(|e| e.to_string())?;
                let c2 = u64::from(anchor.col) + u64::from(from.cols()) - 1;
                let r2 = u64::from(anchor.row) + u64::from(from.rows()) - 1;
                if c2 > u64::from(MAX_COL) || r2 > u64::from(MAX_ROW) {
                    return Err(format!(
                        "copy of {source} to {dest} extends past the edge of the sheet"
                    ));
                }
                let to = Area {
                    sheet: anchor.sheet,
                    c1: anchor.col,
                    r1: anchor.row,
                    c2: c2 as u32,
                    r2: r2 as u32,
                };
                let snapshot = self.read_area(from).into_values();
                self.write_area(to, snapshot).map_err(|e| e.to_string())
            }
            ActionStep::Recalc => {
                self.recalc();
                Ok(())
            }
            ActionStep::FailIf { condition, message } => {
                self.recalc();
                let sheet = self.sheet_of(&status.sheet).map_err(|e| e.to_string())?;
                let node = eval::compile(condition, sheet, &self.resolver());
                let value = Evaluator { values: &self.values }.scalar(&node);
                match value {
                    CellValue::Error(e) => Err(format!("{message} (condition is {})", e.as_str())),
                    v => match functions::to_bool(&v) {
                        Ok(false) => Ok(()),
                        Ok(true) => Err(message.clone()),
                        Err(e) => Err(format!("{message} (condition is {})", e.as_str())),
                    },
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::RangeAddress;
    use crate::formula::parse_formula;

    fn addr(s: &str) -> CellAddress {
        CellAddress::parse(s, Some("S")).unwrap()
    }

    fn book() -> Workbook {
        let mut wb = Workbook::new("t");
        wb.add_sheet("S").unwrap();
        wb
    }

    #[test]
    fn set_then_recalc() {
        let mut wb = book();
        wb.set_formula(&addr("B1"), "=A1*10").unwrap();
        wb.recalc_full();
        wb.define_action(ActionScript {
            name: "go".into(),
            status: addr("Z1"),
            steps: vec![
                ActionStep::Set {
                    target: Target::Cell(addr("A1")),
                    value: CellValue::Number(2.0),
                },
                ActionStep::Recalc,
            ],
        })
        .unwrap();
        let out = wb.run_action("GO").unwrap();
        assert!(out.ok);
        assert_eq!(wb.value(&addr("A1")), CellValue::Number(2.0));
        assert_eq!(wb.value(&addr("B1")), CellValue::Number(20.0));
        assert_eq!(wb.value(&addr("Z1")), CellValue::Blank);
    }

    #[test]
    fn fail_if_writes_status_and_stops() {
        let mut wb = book();
        wb.set_value(&Target::Cell(addr("A1")), (-1.0).into()).unwrap();
        wb.define_action(ActionScript {
            name: "check".into(),
            status: addr("Z1"),
            steps: vec![
                ActionStep::FailIf {
                    condition: parse_formula("=A1<0").unwrap(),
                    message: "negative input".into(),
                },
                ActionStep::Set {
                    target: Target::Cell(addr("A2")),
                    value: CellValue::Number(1.0),
                },
            ],
        })
        .unwrap();
        let out = wb.run_action("check").unwrap();
        assert!(!out.ok);
        assert_eq!(out.message, "negative input");
        assert_eq!(wb.value(&addr("Z1")), CellValue::text("ERR: negative input"));
        assert_eq!(wb.value(&addr("A2")), CellValue::Blank);
    }

    #[test]
    fn copy_past_edge_fails_without_writing() {
        let mut wb = book();
        for a in ["A1", "B1", "A2", "B2"] {
            wb.set_value(&Target::Cell(addr(a)), 1.0.into()).unwrap();
        }
        let edge = CellAddress::new("S", MAX_COL, 1);
        wb.define_action(ActionScript {
            name: "move".into(),
            status: addr("Z1"),
            steps: vec![ActionStep::Copy {
                source: Target::Range(RangeAddress::parse("S!A1:B2", None).unwrap()),
                dest: edge.clone(),
            }],
        })
        .unwrap();
        let before = wb.populated_cells();
        let out = wb.run_action("move").unwrap();
        assert!(!out.ok);
        assert_eq!(wb.value(&edge), CellValue::Blank);
        assert_eq!(wb.populated_cells(), before + 1);
        assert!(matches!(wb.value(&addr("Z1")), CellValue::Text(t) if t.starts_with("ERR: copy")));
    }

    #[test]
    fn unknown_action_and_bad_definitions() {
        let mut wb = book();
        assert_eq!(wb.run_action("nope"), Err(WorkbookError::UnknownAction("nope".into())));
        let bad = ActionScript {
            name: "x".into(),
            status: addr("A1"),
            steps: vec![ActionStep::Clear {
                target: Target::name("Missing"),
            }],
        };
        assert_eq!(wb.define_action(bad), Err(WorkbookError::UnknownName("Missing".into())));
        let empty = ActionScript {
            name: "y".into(),
            status: addr("A1"),
            steps: vec![],
        };
        assert!(matches!(wb.define_action(empty), Err(WorkbookError::InvalidAction { .. })));
    }
}
