//! Formula compilation (names and sheets resolved to positions) and evaluation.

use std::collections::HashMap;
use std::sync::Arc;

use super::{Area, Pos};
use crate::formula::{BinaryOp, Expr, UnaryOp};
use crate::functions::{self, eval_builtin, Arg};
use crate::value::{CellValue, ErrorKind, Grid};

/// Ranges larger than this compile to `#REF!` instead of expanding into
/// millions of dependency edges.
pub const MAX_AREA_CELLS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Lit(CellValue),
    Cell(Pos),
    Area(Area),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Call(Arc<str>, Vec<Node>),
}

/// What the compiler needs from the workbook.
pub(crate) trait Resolver {
    fn sheet_index(&self, name: &str) -> Option<u32>;
    fn name_area(&self, name: &str) -> Option<Area>;
}

pub(crate) fn compile(expr: &Expr, sheet: u32, resolver: &dyn Resolver) -> Node {
    match expr {
        Expr::Literal(v) => Node::Lit(v.clone()),
        Expr::Ref(r) => {
            let sheet = match &r.sheet {
                Some(name) => match resolver.sheet_index(name) {
                    Some(s) => s,
                    None => return Node::Lit(CellValue::Error(ErrorKind::Ref)),
                },
                None => sheet,
            };
            Node::Cell(Pos {
                sheet,
                row: r.row,
                col: r.col,
            })
        }
        Expr::Range(r) => {
            let sheet = match &r.sheet {
                Some(name) => match resolver.sheet_index(name) {
                    Some(s) => s,
                    None => return Node::Lit(CellValue::Error(ErrorKind::Ref)),
                },
                None => sheet,
            };
            let area = Area {
                sheet,
                c1: r.start.0,
                r1: r.start.1,
                c2: r.end.0,
                r2: r.end.1,
            };
            if area.len() > MAX_AREA_CELLS {
                Node::Lit(CellValue::Error(ErrorKind::Ref))
            } else {
                Node::Area(area)
            }
        }
        Expr::Name(n) => match resolver.name_area(n) {
            Some(area) => Node::Area(area),
            None => Node::Lit(CellValue::Error(ErrorKind::Name)),
        },
        Expr::Unary(op, inner) => Node::Unary(*op, Box::new(compile(inner, sheet, resolver))),
        Expr::Binary(op, l, r) => Node::Binary(
            *op,
            Box::new(compile(l, sheet, resolver)),
            Box::new(compile(r, sheet, resolver)),
        ),
        Expr::Call(name, args) => Node::Call(
            Arc::from(name.as_str()),
            args.iter().map(|a| compile(a, sheet, resolver)).collect(),
        ),
    }
}

/// Every position a compiled formula reads.
pub(crate) fn collect_reads(node: &Node, out: &mut Vec<Pos>) {
    match node {
        Node::Lit(_) => {}
        Node::Cell(p) => out.push(*p),
        Node::Area(a) => out.extend(a.positions()),
        Node::Unary(_, inner) => collect_reads(inner, out),
        Node::Binary(_, l, r) => {
            collect_reads(l, out);
            collect_reads(r, out);
        }
        Node::Call(_, args) => args.iter().for_each(|a| collect_reads(a, out)),
    }
}

pub(crate) struct Evaluator<'a> {
    pub values: &'a HashMap<Pos, CellValue>,
}

impl Evaluator<'_> {
    fn read(&self, p: Pos) -> CellValue {
        self.values.get(&p).cloned().unwrap_or(CellValue::Blank)
    }

    fn grid(&self, a: &Area) -> Grid {
        let values = a.positions().map(|p| self.read(p)).collect();
        Grid::new(a.rows() as usize, a.cols() as usize, values)
    }

    /// Value a formula cell stores: a blank result reads as 0.
    pub fn cell_result(&self, node: &Node) -> CellValue {
        match self.scalar(node) {
            CellValue::Blank => CellValue::Number(0.0),
            CellValue::Number(n) => CellValue::number(n),
            v => v,
        }
    }

    pub fn scalar(&self, node: &Node) -> CellValue {
        match node {
            Node::Lit(v) => v.clone(),
            Node::Cell(p) => self.read(*p),
            Node::Area(a) if a.len() == 1 => self.read(Pos {
                sheet: a.sheet,
                row: a.r1,
                col: a.c1,
            }),
            Node::Area(_) => CellValue::Error(ErrorKind::Value),
            Node::Unary(op, inner) => {
                let v = self.scalar(inner);
                match op {
                    UnaryOp::Plus => v,
                    UnaryOp::Neg => match functions::to_number(&v) {
                        Ok(n) => CellValue::number(-n),
                        Err(e) => CellValue::Error(e),
                    },
                }
            }
            Node::Binary(op, l, r) => binary(*op, self.scalar(l), self.scalar(r)),
            Node::Call(name, args) => {
                let args: Vec<Arg> = args.iter().map(|a| self.arg(a)).collect();
                eval_builtin(name, &args)
            }
        }
    }

    fn arg(&self, node: &Node) -> Arg {
        match node {
            Node::Cell(p) => Arg::Range(Grid::scalar(self.read(*p))),
            Node::Area(a) => Arg::Range(self.grid(a)),
            other => Arg::Value(self.scalar(other)),
        }
    }
}

fn binary(op: BinaryOp, l: CellValue, r: CellValue) -> CellValue {
    use std::cmp::Ordering;
    match op {
        BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div | BinaryOp::Pow => {
            let a = match functions::to_number(&l) {
                Ok(a) => a,
                Err(e) => return CellValue::Error(e),
            };
            let b = match functions::to_number(&r) {
                Ok(b) => b,
                Err(e) => return CellValue::Error(e),
            };
            match op {
                BinaryOp::Add => CellValue::number(a + b),
                BinaryOp::Sub => CellValue::number(a - b),
                BinaryOp::Mul => CellValue::number(a * b),
                BinaryOp::Div if b == 0.0 => CellValue::Error(ErrorKind::Div0),
                BinaryOp::Div => CellValue::number(a / b),
                _ => functions::power_value(a, b),
            }
        }
        BinaryOp::Concat => match (functions::to_text(&l), functions::to_text(&r)) {
            (Ok(a), Ok(b)) => CellValue::Text(a + &b),
            (Err(e), _) | (_, Err(e)) => CellValue::Error(e),
        },
        _ => {
            if let CellValue::Error(e) = l {
                return CellValue::Error(e);
            }
            if let CellValue::Error(e) = r {
                return CellValue::Error(e);
            }
            let (l, r) = (blank_as(&l, &r), blank_as(&r, &l));
            let ord = functions::compare(&l, &r);
            let result = match op {
                BinaryOp::Eq => ord == Ordering::Equal,
                BinaryOp::Ne => ord != Ordering::Equal,
                BinaryOp::Lt => ord == Ordering::Less,
                BinaryOp::Le => ord != Ordering::Greater,
                BinaryOp::Gt => ord == Ordering::Greater,
                _ => ord != Ordering::Less,
            };
            CellValue::Boolean(result)
        }
    }
}

/// In comparisons a blank takes the zero value of the other side's type.
fn blank_as(v: &CellValue, other: &CellValue) -> CellValue {
    match (v, other) {
        (CellValue::Blank, CellValue::Text(_)) => CellValue::Text(String::new()),
        (CellValue::Blank, CellValue::Boolean(_)) => CellValue::Boolean(false),
        (CellValue::Blank, _) => CellValue::Number(0.0),
        (v, _) => v.clone(),
    }
}
