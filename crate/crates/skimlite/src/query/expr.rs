//! Selection expression language: a small grammar of comparisons, boolean
//! logic, arithmetic, `abs`, and the `sum`/`count` aggregates.
//!
//! Precedence, tightest first: unary (`!`, `-`), `*`, `+ -`, comparisons,
//! `&&`, `||`. Comparisons do not chain.

use crate::error::{Result, SkimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Add,
    Sub,
    Mul,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }
}

/// An aggregate over a collection's objects, filtered by that collection's
/// object-selection mask when one exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregateSpec {
    /// Sum of a jagged branch's values over selected objects.
    Sum { branch: String },
    /// Number of selected objects in a collection.
    Count { collection: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Number(f64),
    Bool(bool),
    Ident(String),
    Neg(Box<ExprNode>),
    Not(Box<ExprNode>),
    Abs(Box<ExprNode>),
    Binary {
        op: BinOp,
        lhs: Box<ExprNode>,
        rhs: Box<ExprNode>,
    },
    Aggregate(AggregateSpec),
}

impl ExprNode {
    /// Every identifier in the tree, in evaluation order. Aggregate targets
    /// are not included; walk aggregates separately.
    pub fn idents(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |node| {
            if let ExprNode::Ident(name) = node {
                out.push(name.as_str());
            }
        });
        out
    }

    pub fn aggregates(&self) -> Vec<&AggregateSpec> {
        let mut out = Vec::new();
        self.walk(&mut |node| {
            if let ExprNode::Aggregate(agg) = node {
                out.push(agg);
            }
        });
        out
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ExprNode)) {
        f(self);
        match self {
            ExprNode::Neg(x) | ExprNode::Not(x) | ExprNode::Abs(x) => x.walk(f),
            ExprNode::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            _ => {}
        }
    }

    /// Rewrites every identifier with `f`. Used to expand object-selection
    /// shorthand (`pt` -> `Electron_pt`).
    pub fn map_idents(&self, f: &impl Fn(&str) -> String) -> ExprNode {
        match self {
            ExprNode::Ident(name) => ExprNode::Ident(f(name)),
            ExprNode::Neg(x) => ExprNode::Neg(Box::new(x.map_idents(f))),
            ExprNode::Not(x) => ExprNode::Not(Box::new(x.map_idents(f))),
            ExprNode::Abs(x) => ExprNode::Abs(Box::new(x.map_idents(f))),
            ExprNode::Binary { op, lhs, rhs } => ExprNode::Binary {
                op: *op,
                lhs: Box::new(lhs.map_idents(f)),
                rhs: Box::new(rhs.map_idents(f)),
            },
            other => other.clone(),
        }
    }
}

/// Fully parenthesized rendering; `parse_expression` inverts it.
impl std::fmt::Display for ExprNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExprNode::Number(x) => {
                if x.fract() == 0.0 && x.abs() < 1e15 {
                    write!(f, "{x:.1}")
                } else {
                    write!(f, "{x}")
                }
            }
            ExprNode::Bool(b) => write!(f, "{b}"),
            ExprNode::Ident(name) => write!(f, "{name}"),
            ExprNode::Neg(x) => write!(f, "(-{x})"),
            ExprNode::Not(x) => write!(f, "(!{x})"),
            ExprNode::Abs(x) => write!(f, "abs({x})"),
            ExprNode::Binary { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            ExprNode::Aggregate(AggregateSpec::Sum { branch }) => write!(f, "sum({branch})"),
            ExprNode::Aggregate(AggregateSpec::Count { collection }) => {
                write!(f, "count({collection})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Ident(String),
    Op(BinOp),
    Not,
    LParen,
    RParen,
    True,
    False,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, pos: usize, msg: impl Into<String>) -> SkimError {
        SkimError::Expr { pos, msg: msg.into() }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let start = self.pos;
            let c = self.src[self.pos];
            match c {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    self.pos += 1;
                }
                b'(' => {
                    out.push((start, Tok::LParen));
                    self.pos += 1;
                }
                b')' => {
                    out.push((start, Tok::RParen));
                    self.pos += 1;
                }
                b'+' => {
                    out.push((start, Tok::Op(BinOp::Add)));
                    self.pos += 1;
                }
                b'-' => {
                    out.push((start, Tok::Op(BinOp::Sub)));
                    self.pos += 1;
                }
                b'*' => {
                    out.push((start, Tok::Op(BinOp::Mul)));
                    self.pos += 1;
                }
                b'<' => {
                    if self.peek(1) == Some(b'=') {
                        out.push((start, Tok::Op(BinOp::Le)));
                        self.pos += 2;
                    } else {
                        out.push((start, Tok::Op(BinOp::Lt)));
                        self.pos += 1;
                    }
                }
                b'>' => {
                    if self.peek(1) == Some(b'=') {
                        out.push((start, Tok::Op(BinOp::Ge)));
                        self.pos += 2;
                    } else {
                        out.push((start, Tok::Op(BinOp::Gt)));
                        self.pos += 1;
                    }
                }
                b'=' => {
                    if self.peek(1) == Some(b'=') {
                        out.push((start, Tok::Op(BinOp::Eq)));
                        self.pos += 2;
                    } else {
                        return Err(self.err(start, "expected '==' (single '=' is not assignment)"));
                    }
                }
                b'!' => {
                    if self.peek(1) == Some(b'=') {
                        out.push((start, Tok::Op(BinOp::Ne)));
                        self.pos += 2;
                    } else {
                        out.push((start, Tok::Not));
                        self.pos += 1;
                    }
                }
                b'&' => {
                    if self.peek(1) == Some(b'&') {
                        out.push((start, Tok::Op(BinOp::And)));
                        self.pos += 2;
                    } else {
                        return Err(self.err(start, "expected '&&'"));
                    }
                }
                b'|' => {
                    if self.peek(1) == Some(b'|') {
                        out.push((start, Tok::Op(BinOp::Or)));
                        self.pos += 2;
                    } else {
                        return Err(self.err(start, "expected '||'"));
                    }
                }
                b'0'..=b'9' | b'.' => {
                    let mut end = self.pos;
                    while end < self.src.len()
                        && matches!(self.src[end], b'0'..=b'9' | b'.' | b'e' | b'E')
                    {
                        // allow exponent signs: 1e-3
                        if matches!(self.src[end], b'e' | b'E')
                            && matches!(self.src.get(end + 1), Some(b'+') | Some(b'-'))
                        {
                            end += 1;
                        }
                        end += 1;
                    }
                    let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                    let value: f64 = text
                        .parse()
                        .map_err(|_| self.err(start, format!("bad numeric literal {text:?}")))?;
                    out.push((start, Tok::Number(value)));
                    self.pos = end;
                }
                b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                    let mut end = self.pos;
                    while end < self.src.len()
                        && matches!(self.src[end], b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_')
                    {
                        end += 1;
                    }
                    let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                    let tok = match text {
                        "true" => Tok::True,
                        "false" => Tok::False,
                        _ => Tok::Ident(text.to_string()),
                    };
                    out.push((start, tok));
                    self.pos = end;
                }
                other => {
                    return Err(self.err(start, format!("unexpected character {:?}", other as char)))
                }
            }
        }
        Ok(out)
    }

    fn peek(&self, ahead: usize) -> Option<u8> {
        self.src.get(self.pos + ahead).copied()
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.src_len)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> SkimError {
        SkimError::Expr { pos: self.here(), msg: msg.into() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn parse_or(&mut self) -> Result<ExprNode> {
        let mut lhs = self.parse_and()?;
        while self.peek() == Some(&Tok::Op(BinOp::Or)) {
            self.pos += 1;
            let rhs = self.parse_and()?;
            lhs = ExprNode::Binary { op: BinOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<ExprNode> {
        let mut lhs = self.parse_cmp()?;
        while self.peek() == Some(&Tok::Op(BinOp::And)) {
            self.pos += 1;
            let rhs = self.parse_cmp()?;
            lhs = ExprNode::Binary { op: BinOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn parse_cmp(&mut self) -> Result<ExprNode> {
        let lhs = self.parse_add()?;
        if let Some(Tok::Op(op)) = self.peek() {
            let op = *op;
            if op.is_comparison() {
                self.pos += 1;
                let rhs = self.parse_add()?;
                if let Some(Tok::Op(next)) = self.peek() {
                    if next.is_comparison() {
                        return Err(self.err("comparisons do not chain; parenthesize"));
                    }
                }
                return Ok(ExprNode::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) });
            }
        }
        Ok(lhs)
    }

    fn parse_add(&mut self) -> Result<ExprNode> {
        let mut lhs = self.parse_mul()?;
        while let Some(Tok::Op(op @ (BinOp::Add | BinOp::Sub))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.parse_mul()?;
            lhs = ExprNode::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn parse_mul(&mut self) -> Result<ExprNode> {
        let mut lhs = self.parse_unary()?;
        while self.peek() == Some(&Tok::Op(BinOp::Mul)) {
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = ExprNode::Binary { op: BinOp::Mul, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<ExprNode> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(ExprNode::Not(Box::new(self.parse_unary()?)))
            }
            Some(Tok::Op(BinOp::Sub)) => {
                self.pos += 1;
                Ok(ExprNode::Neg(Box::new(self.parse_unary()?)))
            }
            _ => self.parse_primary(),
        }
    }

    fn parse_primary(&mut self) -> Result<ExprNode> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Number(x)) => Ok(ExprNode::Number(x)),
            Some(Tok::True) => Ok(ExprNode::Bool(true)),
            Some(Tok::False) => Ok(ExprNode::Bool(false)),
            Some(Tok::LParen) => {
                let inner = self.parse_or()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let node = match name.as_str() {
                        "abs" => {
                            let arg = self.parse_or()?;
                            ExprNode::Abs(Box::new(arg))
                        }
                        "sum" => {
                            let arg = self.ident_arg("sum")?;
                            ExprNode::Aggregate(AggregateSpec::Sum { branch: arg })
                        }
                        "count" => {
                            let arg = self.ident_arg("count")?;
                            ExprNode::Aggregate(AggregateSpec::Count { collection: arg })
                        }
                        other => {
                            return Err(SkimError::Expr {
                                pos,
                                msg: format!(
                                    "unknown function {other:?} (only abs, sum, count)"
                                ),
                            })
                        }
                    };
                    self.expect(Tok::RParen, "')'")?;
                    Ok(node)
                } else {
                    Ok(ExprNode::Ident(name))
                }
            }
            Some(_) => Err(SkimError::Expr { pos, msg: "expected a value".into() }),
            None => Err(SkimError::Expr { pos, msg: "unexpected end of expression".into() }),
        }
    }

    fn ident_arg(&mut self, func: &str) -> Result<String> {
        match self.bump() {
            Some(Tok::Ident(name)) => Ok(name),
            _ => Err(self.err(format!("{func}() takes a single branch or collection name"))),
        }
    }
}

/// Parses a selection expression; returns a complete tree or a positioned
/// error, never a partial tree.
pub fn parse_expression(text: &str) -> Result<ExprNode> {
    let toks = Lexer { src: text.as_bytes(), pos: 0 }.tokens()?;
    let mut parser = Parser { toks, pos: 0, src_len: text.len() };
    let expr = parser.parse_or()?;
    if parser.peek().is_some() {
        return Err(parser.err("trailing input after expression"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmp(op: BinOp, lhs: ExprNode, rhs: ExprNode) -> ExprNode {
        ExprNode::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    #[test]
    fn grammar_smoke() {
        let e = parse_expression("pt > 20 && abs(eta) < 2.4").unwrap();
        let expect = cmp(
            BinOp::And,
            cmp(BinOp::Gt, ExprNode::Ident("pt".into()), ExprNode::Number(20.0)),
            cmp(
                BinOp::Lt,
                ExprNode::Abs(Box::new(ExprNode::Ident("eta".into()))),
                ExprNode::Number(2.4),
            ),
        );
        assert_eq!(e, expect);
    }

    #[test]
    fn or_binds_looser_than_and() {
        let e = parse_expression("a || b && c").unwrap();
        let expect = cmp(
            BinOp::Or,
            ExprNode::Ident("a".into()),
            cmp(BinOp::And, ExprNode::Ident("b".into()), ExprNode::Ident("c".into())),
        );
        assert_eq!(e, expect);
    }

    #[test]
    fn count_cut_shape() {
        let e = parse_expression("nElectron >= 1").unwrap();
        assert_eq!(
            e,
            cmp(BinOp::Ge, ExprNode::Ident("nElectron".into()), ExprNode::Number(1.0))
        );
    }

    #[test]
    fn arithmetic_above_comparisons() {
        let e = parse_expression("a + b * c > 10").unwrap();
        let expect = cmp(
            BinOp::Gt,
            cmp(
                BinOp::Add,
                ExprNode::Ident("a".into()),
                cmp(BinOp::Mul, ExprNode::Ident("b".into()), ExprNode::Ident("c".into())),
            ),
            ExprNode::Number(10.0),
        );
        assert_eq!(e, expect);
    }

    #[test]
    fn aggregates_parse() {
        assert_eq!(
            parse_expression("sum(Jet_pt)").unwrap(),
            ExprNode::Aggregate(AggregateSpec::Sum { branch: "Jet_pt".into() })
        );
        assert_eq!(
            parse_expression("count(Electron)").unwrap(),
            ExprNode::Aggregate(AggregateSpec::Count { collection: "Electron".into() })
        );
    }

    #[test]
    fn unknown_function_is_rejected_with_position() {
        match parse_expression("pt > 20 && sqrt(x) < 2") {
            Err(SkimError::Expr { pos, msg }) => {
                assert_eq!(pos, 11);
                assert!(msg.contains("sqrt"));
            }
            other => panic!("expected positioned error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_are_positioned() {
        assert!(matches!(parse_expression("a >"), Err(SkimError::Expr { .. })));
        assert!(matches!(parse_expression("(a && b"), Err(SkimError::Expr { .. })));
        assert!(matches!(parse_expression("a b"), Err(SkimError::Expr { .. })));
        assert!(matches!(parse_expression("1 < 2 < 3"), Err(SkimError::Expr { .. })));
        assert!(matches!(parse_expression("a & b"), Err(SkimError::Expr { .. })));
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "pt > 20 && abs(eta) < 2.4",
            "a || b && !c",
            "-x + 3.5 * y <= 7",
            "HT > 100 || (nJet >= 2 && HLT_mu)",
            "sum(Jet_pt) > 100",
            "count(Electron) == 2",
            "true || false",
        ] {
            let e = parse_expression(text).unwrap();
            let printed = e.to_string();
            let reparsed = parse_expression(&printed).unwrap();
            assert_eq!(e, reparsed, "round trip failed for {text:?} -> {printed:?}");
        }
    }
}
