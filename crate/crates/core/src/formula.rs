//! Formula syntax tree, parser and printer.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! formula    = "=" expr
//! expr       = concat (("=" | "<>" | "<" | "<=" | ">" | ">=") concat)*
//! concat     = additive ("&" additive)*
//! additive   = term (("+" | "-") term)*
//! term       = power (("*" | "/") power)*
//! power      = unary ("^" unary)*
//! unary      = ("-" | "+") unary | primary
//! primary    = number | string | TRUE | FALSE | error-literal | "(" expr ")"
//!            | ident "(" [expr ("," expr)*] ")"
//!            | [sheet "!"] cell [":" cell]
//!            | name
//! ```
//!
//! Every binary operator is left-associative, and unary minus binds tighter
//! than `^`, so `-2^2` is `4`.

use std::fmt;

use thiserror::Error;

use crate::address::{col_to_letters, parse_a1, quote_sheet};
use crate::value::{CellValue, ErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Concat,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
            BinaryOp::Concat => "&",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
        }
    }

    fn level(self) -> u8 {
        match self {
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 1,
            BinaryOp::Concat => 2,
            BinaryOp::Add | BinaryOp::Sub => 3,
            BinaryOp::Mul | BinaryOp::Div => 4,
            BinaryOp::Pow => 5,
        }
    }
}

/// A cell reference as written; `sheet` is `None` for same-sheet references.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub sheet: Option<String>,
    pub col: u32,
    pub row: u32,
}

/// A rectangular reference as written, corners normalised.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RangeRef {
    pub sheet: Option<String>,
    pub start: (u32, u32),
    pub end: (u32, u32),
}

/// Parsed formula.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(CellValue),
    Ref(CellRef),
    Range(RangeRef),
    Name(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Function name is upper-cased by the parser.
    Call(String, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error("references to other workbooks are not supported (position {position})")]
    XRefUnsupported { position: usize },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { position, .. } | ParseError::XRefUnsupported { position } => *position,
        }
    }
}

/// Parses formula text such as `=SUM(A1:A3)`.
pub fn parse_formula(text: &str) -> Result<Expr, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    if chars.first() != Some(&'=') {
        return Err(ParseError::Syntax {
            position: 0,
            expected: "`=`".into(),
        });
    }
    let tokens = lex(&chars)?;
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.expr()?;
    match parser.peek() {
        Tok::Eof => Ok(expr),
        _ => Err(parser.error("operator or end of formula")),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Str(String),
    Ident(String),
    QuotedSheet(String),
    ErrorLit(ErrorKind),
    Bang,
    LParen,
    RParen,
    Comma,
    Colon,
    Op(&'static str),
    Eof,
}

struct Token {
    tok: Tok,
    pos: usize,
}

fn lex(chars: &[char]) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut i = 1;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '[' => return Err(ParseError::XRefUnsupported { position: i }),
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            ':' => {
                i += 1;
                Tok::Colon
            }
            '!' => {
                i += 1;
                Tok::Bang
            }
            '+' | '-' | '*' | '/' | '^' | '&' | '=' => {
                i += 1;
                Tok::Op(match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    '/' => "/",
                    '^' => "^",
                    '&' => "&",
                    _ => "=",
                })
            }
            '<' => {
                i += 1;
                match chars.get(i) {
                    Some('=') => {
                        i += 1;
                        Tok::Op("<=")
                    }
                    Some('>') => {
                        i += 1;
                        Tok::Op("<>")
                    }
                    _ => Tok::Op("<"),
                }
            }
            '>' => {
                i += 1;
                if chars.get(i) == Some(&'=') {
                    i += 1;
                    Tok::Op(">=")
                } else {
                    Tok::Op(">")
                }
            }
            '"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => {
                            return Err(ParseError::Syntax {
                                position: i,
                                expected: "closing `\"`".into(),
                            })
                        }
                        Some('"') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                Tok::Str(s)
            }
            '\'' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => {
                            return Err(ParseError::Syntax {
                                position: i,
                                expected: "closing `'`".into(),
                            })
                        }
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            if ch == '[' {
                                return Err(ParseError::XRefUnsupported { position: i });
                            }
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                Tok::QuotedSheet(s)
            }
            '#' => {
                let rest: String = chars[i..].iter().take(8).collect();
                let kind = ErrorKind::ALL
                    .into_iter()
                    .filter(|k| rest.to_ascii_uppercase().starts_with(k.as_str()))
                    .max_by_key(|k| k.as_str().len())
                    .ok_or(ParseError::Syntax {
                        position: i,
                        expected: "error literal".into(),
                    })?;
                i += kind.as_str().chars().count();
                Tok::ErrorLit(kind)
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                }
                if chars.get(i) == Some(&'.') {
                    i += 1;
                    while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                        i += 1;
                    }
                }
                if matches!(chars.get(i), Some('e' | 'E')) {
                    let mut j = i + 1;
                    if matches!(chars.get(j), Some('+' | '-')) {
                        j += 1;
                    }
                    if chars.get(j).is_some_and(|d| d.is_ascii_digit()) {
                        i = j;
                        while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let n: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    position: start,
                    expected: "number".into(),
                })?;
                if !n.is_finite() {
                    return Err(ParseError::Syntax {
                        position: start,
                        expected: "finite number".into(),
                    });
                }
                Tok::Number(n)
            }
            c if c.is_ascii_alphabetic() || c == '_' || c == '$' => {
                while chars
                    .get(i)
                    .is_some_and(|d| d.is_ascii_alphanumeric() || matches!(d, '_' | '.' | '$'))
                {
                    i += 1;
                }
                if chars.get(i) == Some(&'[') {
                    return Err(ParseError::XRefUnsupported { position: i });
                }
                Tok::Ident(chars[start..i].iter().collect())
            }
            _ => {
                return Err(ParseError::Syntax {
                    position: i,
                    expected: "expression".into(),
                })
            }
        };
        out.push(Token { tok, pos: start });
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: chars.len(),
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn position(&self) -> usize {
        self.tokens[self.pos].pos
    }

    fn advance(&mut self) -> Tok {
        let tok = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            position: self.position(),
            expected: expected.to_string(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn binary_op(&self) -> Option<BinaryOp> {
        match self.peek() {
            Tok::Op(op) => Some(match *op {
                "+" => BinaryOp::Add,
                "-" => BinaryOp::Sub,
                "*" => BinaryOp::Mul,
                "/" => BinaryOp::Div,
                "^" => BinaryOp::Pow,
                "&" => BinaryOp::Concat,
                "=" => BinaryOp::Eq,
                "<>" => BinaryOp::Ne,
                "<" => BinaryOp::Lt,
                "<=" => BinaryOp::Le,
                ">" => BinaryOp::Gt,
                ">=" => BinaryOp::Ge,
                _ => return None,
            }),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binary(&mut self, min_level: u8) -> Result<Expr, ParseError> {
        let mut lhs = if min_level > 5 {
            self.unary()?
        } else {
            self.binary(min_level + 1)?
        };
        if min_level > 5 {
            return Ok(lhs);
        }
        while let Some(op) = self.binary_op().filter(|op| op.level() == min_level) {
            self.advance();
            let rhs = self.binary(min_level + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Op("-") => {
                self.advance();
                Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)))
            }
            Tok::Op("+") => {
                self.advance();
                Ok(Expr::Unary(UnaryOp::Plus, Box::new(self.unary()?)))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.position();
        match self.advance() {
            Tok::Number(n) => Ok(Expr::Literal(CellValue::Number(n))),
            Tok::Str(s) => Ok(Expr::Literal(CellValue::Text(s))),
            Tok::ErrorLit(k) => Ok(Expr::Literal(CellValue::Error(k))),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::QuotedSheet(sheet) => {
                self.expect(Tok::Bang, "`!` after sheet name")?;
                self.reference(Some(sheet))
            }
            Tok::Ident(id) => match self.peek() {
                Tok::LParen => {
                    self.advance();
                    if id.contains('$') || id.contains('.') {
                        return Err(ParseError::Syntax {
                            position: start,
                            expected: "function name".into(),
                        });
                    }
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if *self.peek() == Tok::Comma {
                                self.advance();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen, "`,` or `)`")?;
                    Ok(Expr::Call(id.to_ascii_uppercase(), args))
                }
                Tok::Bang => {
                    self.advance();
                    self.reference(Some(id))
                }
                _ => {
                    if id.eq_ignore_ascii_case("TRUE") {
                        return Ok(Expr::Literal(CellValue::Boolean(true)));
                    }
                    if id.eq_ignore_ascii_case("FALSE") {
                        return Ok(Expr::Literal(CellValue::Boolean(false)));
                    }
                    if parse_a1(&id).is_some() {
                        self.pos -= 1;
                        return self.reference(None);
                    }
                    if id.contains('$') {
                        return Err(ParseError::Syntax {
                            position: start,
                            expected: "cell reference".into(),
                        });
                    }
                    Ok(Expr::Name(id))
                }
            },
            Tok::Eof => Err(ParseError::Syntax {
                position: start,
                expected: "expression".into(),
            }),
            _ => Err(ParseError::Syntax {
                position: start,
                expected: "expression".into(),
            }),
        }
    }

    /// Cell or range after an optional sheet prefix.
    fn reference(&mut self, sheet: Option<String>) -> Result<Expr, ParseError> {
        let first = self.cell()?;
        if *self.peek() == Tok::Colon && matches!(self.peek_at(1), Tok::Ident(_)) {
            self.advance();
            let second = self.cell()?;
            return Ok(Expr::Range(RangeRef {
                sheet,
                start: (first.0.min(second.0), first.1.min(second.1)),
                end: (first.0.max(second.0), first.1.max(second.1)),
            }));
        }
        Ok(Expr::Ref(CellRef {
            sheet,
            col: first.0,
            row: first.1,
        }))
    }

    fn cell(&mut self) -> Result<(u32, u32), ParseError> {
        let position = self.position();
        match self.advance() {
            Tok::Ident(id) => parse_a1(&id).ok_or(ParseError::Syntax {
                position,
                expected: "cell reference".into(),
            }),
            _ => Err(ParseError::Syntax {
                position,
                expected: "cell reference".into(),
            }),
        }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(sheet) = &self.sheet {
            write!(f, "{}!", quote_sheet(sheet))?;
        }
        write!(f, "{}{}", col_to_letters(self.col), self.row)
    }
}

impl fmt::Display for RangeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(sheet) = &self.sheet {
            write!(f, "{}!", quote_sheet(sheet))?;
        }
        write!(
            f,
            "{}{}:{}{}",
            col_to_letters(self.start.0),
            self.start.1,
            col_to_letters(self.end.0),
            self.end.1
        )
    }
}

impl Expr {
    fn level(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.level(),
            _ => u8::MAX,
        }
    }

    /// Formula text including the leading `=`.
    pub fn to_formula(&self) -> String {
        format!("={self}")
    }
}

/// Prints without the leading `=`, parenthesised only where precedence needs it.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => write_literal(f, v),
            Expr::Ref(r) => write!(f, "{r}"),
            Expr::Range(r) => write!(f, "{r}"),
            Expr::Name(n) => f.write_str(n),
            Expr::Unary(op, inner) => {
                f.write_str(match op {
                    UnaryOp::Neg => "-",
                    UnaryOp::Plus => "+",
                })?;
                if matches!(**inner, Expr::Binary(..)) {
                    write!(f, "({inner})")
                } else {
                    write!(f, "{inner}")
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let level = op.level();
                let lhs_parens = lhs.level() < level;
                let rhs_parens = rhs.level() <= level;
                if lhs_parens {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                f.write_str(op.symbol())?;
                if rhs_parens {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
            Expr::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, v: &CellValue) -> fmt::Result {
    match v {
        CellValue::Number(n) if *n < 0.0 || (*n == 0.0 && n.is_sign_negative()) => write!(f, "(-{})", -n),
        CellValue::Number(n) => write!(f, "{n}"),
        CellValue::Text(s) => write!(f, "\"{}\"", s.replace('"', "\"\"")),
        CellValue::Boolean(true) => f.write_str("TRUE"),
        CellValue::Boolean(false) => f.write_str("FALSE"),
        CellValue::Blank => f.write_str("\"\""),
        CellValue::Error(e) => f.write_str(e.as_str()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(n: f64) -> Expr {
        Expr::Literal(CellValue::Number(n))
    }

    fn cell(col: u32, row: u32) -> Expr {
        Expr::Ref(CellRef { sheet: None, col, row })
    }

    #[test]
    fn sum_over_range() {
        assert_eq!(
            parse_formula("=SUM(A1:A3)").unwrap(),
            Expr::Call(
                "SUM".into(),
                vec![Expr::Range(RangeRef {
                    sheet: None,
                    start: (1, 1),
                    end: (1, 3)
                })]
            )
        );
    }

    #[test]
    fn truncated_expression_reports_position() {
        let err = parse_formula("=1+").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { position: 3, .. }), "{err:?}");
    }

    #[test]
    fn external_references_rejected() {
        assert_eq!(
            parse_formula("=[Other.xlsx]Sheet1!A1"),
            Err(ParseError::XRefUnsupported { position: 1 })
        );
        assert!(matches!(
            parse_formula("='C:\\x\\[Other.xlsx]Sheet1'!A1"),
            Err(ParseError::XRefUnsupported { .. })
        ));
        assert!(matches!(
            parse_formula("=SUM(1,Book1[x])"),
            Err(ParseError::XRefUnsupported { .. })
        ));
    }

    #[test]
    fn precedence_and_associativity() {
        // 1+2*3
        assert_eq!(
            parse_formula("=1+2*3").unwrap(),
            Expr::Binary(
                BinaryOp::Add,
                Box::new(num(1.0)),
                Box::new(Expr::Binary(BinaryOp::Mul, Box::new(num(2.0)), Box::new(num(3.0))))
            )
        );
        // -2^2 is (-2)^2
        assert_eq!(
            parse_formula("=-2^2").unwrap(),
            Expr::Binary(
                BinaryOp::Pow,
                Box::new(Expr::Unary(UnaryOp::Neg, Box::new(num(2.0)))),
                Box::new(num(2.0))
            )
        );
        // 8-2-1 is (8-2)-1
        assert_eq!(
            parse_formula("=8-2-1").unwrap(),
            Expr::Binary(
                BinaryOp::Sub,
                Box::new(Expr::Binary(BinaryOp::Sub, Box::new(num(8.0)), Box::new(num(2.0)))),
                Box::new(num(1.0))
            )
        );
        // comparison binds loosest, & sits between it and +
        assert_eq!(
            parse_formula("=A1&1+2=B1").unwrap().to_string(),
            "A1&1+2=B1"
        );
    }

    #[test]
    fn references_names_and_literals() {
        assert_eq!(
            parse_formula("='My Sheet'!$B$2").unwrap(),
            Expr::Ref(CellRef {
                sheet: Some("My Sheet".into()),
                col: 2,
                row: 2
            })
        );
        assert_eq!(
            parse_formula("=Sheet2!B3:A1").unwrap(),
            Expr::Range(RangeRef {
                sheet: Some("Sheet2".into()),
                start: (1, 1),
                end: (2, 3)
            })
        );
        assert_eq!(parse_formula("=Total_Assets").unwrap(), Expr::Name("Total_Assets".into()));
        assert_eq!(parse_formula("=true").unwrap(), Expr::Literal(CellValue::Boolean(true)));
        assert_eq!(
            parse_formula("=\"say \"\"hi\"\"\"").unwrap(),
            Expr::Literal(CellValue::text("say \"hi\""))
        );
        assert_eq!(
            parse_formula("=#DIV/0!").unwrap(),
            Expr::Literal(CellValue::Error(ErrorKind::Div0))
        );
        assert_eq!(parse_formula("=1.5e3").unwrap(), num(1500.0));
        assert_eq!(parse_formula("=sum()").unwrap(), Expr::Call("SUM".into(), vec![]));
        assert_eq!(
            parse_formula("= a1 + 1 ").unwrap(),
            Expr::Binary(BinaryOp::Add, Box::new(cell(1, 1)), Box::new(num(1.0)))
        );
    }

    #[test]
    fn syntax_errors() {
        for bad in ["", "1+2", "=", "=(1", "=SUM(1,", "=1 2", "=\"open", "=A1:", "=$Name", "=#BOGUS"] {
            assert!(parse_formula(bad).is_err(), "{bad} should fail");
        }
        assert!(matches!(
            parse_formula("=(1"),
            Err(ParseError::Syntax { position: 3, .. })
        ));
    }

    #[test]
    fn printer_parenthesises_by_precedence() {
        for src in ["=(1+2)*3", "=1-(2-3)", "=2^(3^2)", "=-(A1+B1)", "=IF(A1>0,\"y\",\"n\")", "=(1&2)&3"] {
            let e = parse_formula(src).unwrap();
            assert_eq!(parse_formula(&e.to_formula()).unwrap(), e, "{src}");
        }
        assert_eq!(parse_formula("=(1+2)*3").unwrap().to_string(), "(1+2)*3");
        assert_eq!(parse_formula("=(1*2)+3").unwrap().to_string(), "1*2+3");
    }
}
