//! Recursive-descent parser and exact evaluator for three-operand prompts.

use std::fmt;

use super::{ExprError, Operator};

/// Parsed expression tree. `Group` records explicit parentheses so that
/// rendering reproduces the canonical text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ast {
    Num(i64),
    Binary {
        op: Operator,
        lhs: Box<Ast>,
        rhs: Box<Ast>,
    },
    Group(Box<Ast>),
}

impl Ast {
    pub fn num(n: i64) -> Self {
        Ast::Num(n)
    }

    pub fn binary(op: Operator, lhs: Ast, rhs: Ast) -> Self {
        Ast::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn group(inner: Ast) -> Self {
        Ast::Group(Box::new(inner))
    }

    /// Strips any parenthesis wrappers.
    pub fn ungrouped(&self) -> &Ast {
        match self {
            Ast::Group(inner) => inner.ungrouped(),
            other => other,
        }
    }

    pub fn has_group(&self) -> bool {
        match self {
            Ast::Num(_) => false,
            Ast::Group(_) => true,
            Ast::Binary { lhs, rhs, .. } => lhs.has_group() || rhs.has_group(),
        }
    }

    pub fn operand_count(&self) -> usize {
        match self {
            Ast::Num(_) => 1,
            Ast::Group(inner) => inner.operand_count(),
            Ast::Binary { lhs, rhs, .. } => lhs.operand_count() + rhs.operand_count(),
        }
    }

    /// Operators in order of textual appearance.
    pub fn operators(&self) -> Vec<Operator> {
        let mut out = Vec::new();
        self.collect_ops(&mut out);
        out
    }

    fn collect_ops(&self, out: &mut Vec<Operator>) {
        match self {
            Ast::Num(_) => {}
            Ast::Group(inner) => inner.collect_ops(out),
            Ast::Binary { op, lhs, rhs } => {
                lhs.collect_ops(out);
                out.push(*op);
                rhs.collect_ops(out);
            }
        }
    }

    /// Canonical prompt text: single-spaced tokens followed by `" = "`.
    pub fn to_prompt(&self) -> String {
        format!("{self} = ")
    }

    /// Evaluates the tree exactly, returning every binary step in
    /// evaluation (post-) order.
    pub fn eval_steps(&self) -> Result<(Rational, Vec<EvalStep>), ExprError> {
        let mut steps = Vec::new();
        let value = self.eval_into(&mut steps, &mut 0)?;
        Ok((value, steps))
    }

    fn eval_into(&self, steps: &mut Vec<EvalStep>, op_index: &mut usize) -> Result<Rational, ExprError> {
        match self {
            Ast::Num(n) => Ok(Rational::from_int(*n)),
            Ast::Group(inner) => inner.eval_into(steps, op_index),
            Ast::Binary { op, lhs, rhs } => {
                let l = lhs.eval_into(steps, op_index)?;
                // textual position of this operator: everything on the left
                // has already been numbered
                let position = *op_index;
                *op_index += 1;
                let r = rhs.eval_into(steps, op_index)?;
                let value = op.apply(l, r).ok_or(ExprError::DivisionByZero)?;
                steps.push(EvalStep {
                    op: *op,
                    position,
                    value,
                });
                Ok(value)
            }
        }
    }
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ast::Num(n) => write!(f, "{n}"),
            Ast::Binary { op, lhs, rhs } => write!(f, "{lhs} {op} {rhs}"),
            Ast::Group(inner) => write!(f, "( {inner} )"),
        }
    }
}

/// One binary operation performed during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalStep {
    pub op: Operator,
    /// Zero-based textual position of the operator.
    pub position: usize,
    pub value: Rational,
}

/// Minimal exact rational with a positive, reduced denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: i64,
    den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num.abs(), den.abs()).max(1);
        let sign = if den < 0 { -1 } else { 1 };
        Some(Self {
            num: sign * num / g,
            den: sign * den / g,
        })
    }

    pub fn from_int(n: i64) -> Self {
        Self { num: n, den: 1 }
    }

    pub fn numer(&self) -> i64 {
        self.num
    }

    pub fn denom(&self) -> i64 {
        self.den
    }

    pub fn is_whole(&self) -> bool {
        self.den == 1
    }

    pub fn as_whole(&self) -> Option<i64> {
        self.is_whole().then_some(self.num)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Operator {
    pub(crate) fn apply(self, l: Rational, r: Rational) -> Option<Rational> {
        match self {
            Operator::Add => Rational::new(l.num * r.den + r.num * l.den, l.den * r.den),
            Operator::Sub => Rational::new(l.num * r.den - r.num * l.den, l.den * r.den),
            Operator::Mul => Rational::new(l.num * r.num, l.den * r.den),
            Operator::Div => Rational::new(l.num * r.den, l.den * r.num),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Lexeme {
    Num(i64),
    Op(Operator),
    LParen,
    RParen,
    Equals,
}

fn lex(text: &str) -> Result<Vec<Lexeme>, ExprError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        match ch {
            c if c.is_whitespace() => {}
            '0'..='9' => {
                let mut end = i + 1;
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_ascii_digit() {
                        end = j + 1;
                        chars.next();
                    } else {
                        break;
                    }
                }
                let n = text[i..end]
                    .parse()
                    .map_err(|_| ExprError::Malformed(format!("number too large at byte {i}")))?;
                out.push(Lexeme::Num(n));
            }
            '(' => out.push(Lexeme::LParen),
            ')' => out.push(Lexeme::RParen),
            '=' => out.push(Lexeme::Equals),
            c => match Operator::from_symbol(c) {
                Some(op) => out.push(Lexeme::Op(op)),
                None => return Err(ExprError::Malformed(format!("unexpected character {c:?} at byte {i}"))),
            },
        }
    }
    Ok(out)
}

struct Parser {
    lexemes: Vec<Lexeme>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lexeme> {
        self.lexemes.get(self.pos)
    }

    fn next(&mut self) -> Option<Lexeme> {
        let lx = self.lexemes.get(self.pos).cloned();
        self.pos += 1;
        lx
    }

    fn expr(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Lexeme::Op(op)) = self.peek() {
            let op = *op;
            if op.precedence_level() != 2 {
                break;
            }
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Ast::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.factor()?;
        while let Some(Lexeme::Op(op)) = self.peek() {
            let op = *op;
            if op.precedence_level() != 1 {
                break;
            }
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Ast::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Ast, ExprError> {
        match self.next() {
            Some(Lexeme::Num(n)) => Ok(Ast::Num(n)),
            Some(Lexeme::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Lexeme::RParen) => Ok(Ast::group(inner)),
                    None | Some(Lexeme::Equals) => Err(ExprError::UnbalancedParentheses),
                    Some(other) => Err(ExprError::Malformed(format!("expected ')', found {other:?}"))),
                }
            }
            Some(Lexeme::RParen) => Err(ExprError::UnbalancedParentheses),
            Some(other) => Err(ExprError::Malformed(format!("expected operand, found {other:?}"))),
            None => Err(ExprError::Malformed("unexpected end of input".into())),
        }
    }
}

/// Parses a three-operand expression with at most one pair of parentheses
/// and an optional trailing `=`.
pub fn parse_expression(text: &str) -> Result<Ast, ExprError> {
    let mut lexemes = lex(text)?;
    let opens = lexemes.iter().filter(|l| **l == Lexeme::LParen).count();
    let closes = lexemes.iter().filter(|l| **l == Lexeme::RParen).count();
    if opens != closes {
        return Err(ExprError::UnbalancedParentheses);
    }
    if opens > 1 {
        return Err(ExprError::Malformed("at most one pair of parentheses is allowed".into()));
    }
    if let Some(eq) = lexemes.iter().position(|l| *l == Lexeme::Equals) {
        if eq + 1 != lexemes.len() {
            return Err(ExprError::Malformed("'=' must be the last token".into()));
        }
        lexemes.pop();
    }
    let numbers = lexemes.iter().filter(|l| matches!(l, Lexeme::Num(_))).count();

    let mut parser = Parser { lexemes, pos: 0 };
    let ast = parser.expr()?;
    if let Some(extra) = parser.peek() {
        return Err(match extra {
            Lexeme::RParen => ExprError::UnbalancedParentheses,
            other => ExprError::Malformed(format!("unexpected trailing {other:?}")),
        });
    }
    if numbers != 3 || ast.operand_count() != 3 {
        return Err(ExprError::WrongOperandCount(numbers));
    }
    if matches!(ast, Ast::Group(_)) {
        return Err(ExprError::Malformed("parentheses around the whole expression".into()));
    }
    Ok(ast)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(v: i64) -> Ast {
        Ast::num(v)
    }

    #[test]
    fn parses_grouped_right_operand() {
        let ast = parse_expression("2 * ( 3 + 4 ) = ").unwrap();
        assert_eq!(
            ast,
            Ast::binary(Operator::Mul, n(2), Ast::group(Ast::binary(Operator::Add, n(3), n(4))))
        );
        assert_eq!(ast.to_prompt(), "2 * ( 3 + 4 ) = ");
    }

    #[test]
    fn standard_precedence_without_parens() {
        let ast = parse_expression("2 + 3 * 3 = ").unwrap();
        assert_eq!(ast, Ast::binary(Operator::Add, n(2), Ast::binary(Operator::Mul, n(3), n(3))));
        let ast = parse_expression("8 / 4 - 1").unwrap();
        assert_eq!(ast, Ast::binary(Operator::Sub, Ast::binary(Operator::Div, n(8), n(4)), n(1)));
    }

    #[test]
    fn normalizes_whitespace() {
        let ast = parse_expression("2 *  ( 3 + 4 ) =").unwrap();
        assert_eq!(ast.to_prompt(), "2 * ( 3 + 4 ) = ");
        assert_eq!(parse_expression("2+3*3=").unwrap().to_prompt(), "2 + 3 * 3 = ");
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(parse_expression("2 + + 3"), Err(ExprError::Malformed(_))));
        assert!(matches!(parse_expression("2 ^ 2 + 1"), Err(ExprError::Malformed(_))));
        assert!(matches!(parse_expression("2 + 3 = 5"), Err(ExprError::Malformed(_))));
        assert!(matches!(parse_expression("( 2 + 3 * 4"), Err(ExprError::UnbalancedParentheses)));
        assert!(matches!(parse_expression("2 + 3 ) * 4"), Err(ExprError::UnbalancedParentheses)));
        assert!(matches!(parse_expression("2 + 3"), Err(ExprError::WrongOperandCount(2))));
        assert!(matches!(parse_expression("1 + 2 * 3 - 4"), Err(ExprError::WrongOperandCount(4))));
        assert!(matches!(parse_expression("( 1 + 2 * 3 )"), Err(ExprError::Malformed(_))));
        assert!(matches!(parse_expression(""), Err(ExprError::Malformed(_))));
    }

    #[test]
    fn steps_follow_evaluation_order() {
        let ast = parse_expression("2 * ( 3 + 4 )").unwrap();
        let (value, steps) = ast.eval_steps().unwrap();
        assert_eq!(value, Rational::from_int(14));
        assert_eq!(steps[0].op, Operator::Add);
        assert_eq!(steps[0].position, 1);
        assert_eq!(steps[1].position, 0);
    }

    #[test]
    fn rational_reduces() {
        let r = Rational::new(6, -4).unwrap();
        assert_eq!((r.numer(), r.denom()), (-3, 2));
        assert!(Rational::new(1, 0).is_none());
        assert_eq!(Rational::new(0, 5).unwrap(), Rational::from_int(0));
    }
}
