//! Synthetic three-operand arithmetic dataset.
//!
//! Every combination of operands, a mixed-precedence operator pair and one of
//! six structural templates is rendered to a canonical prompt, parsed back,
//! evaluated exactly and kept only if it passes the [`FilterPolicy`].

mod parser;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parser::{parse_expression, Ast, EvalStep, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("malformed expression: {0}")]
    Malformed(String),
    #[error("unbalanced parentheses")]
    UnbalancedParentheses,
    #[error("expected 3 operands, found {0}")]
    WrongOperandCount(usize),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-whole result {0}")]
    NonWholeResult(String),
    #[error("result {0} below the allowed minimum")]
    NonPositiveResult(i64),
    #[error("operator pair ({0}, {1}) does not mix precedence levels")]
    SamePrecedence(Operator, Operator),
    #[error("empty operand range")]
    EmptyOperandRange,
    #[error("bad record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Add, Operator::Sub, Operator::Mul, Operator::Div];

    pub fn symbol(self) -> char {
        match self {
            Operator::Add => '+',
            Operator::Sub => '-',
            Operator::Mul => '*',
            Operator::Div => '/',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.symbol() == c)
    }

    /// 1 for `*` and `/`, 2 for `+` and `-`; lower binds tighter.
    pub fn precedence_level(self) -> u8 {
        match self {
            Operator::Mul | Operator::Div => 1,
            Operator::Add | Operator::Sub => 2,
        }
    }

    /// Single-letter name used in operator labels.
    pub fn letter(self) -> char {
        match self {
            Operator::Add => 'p',
            Operator::Sub => 's',
            Operator::Mul => 'm',
            Operator::Div => 'd',
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// The four mixed-precedence pairs, in canonical order.
pub const MIXED_PAIRS: [(Operator, Operator); 4] = [
    (Operator::Add, Operator::Mul),
    (Operator::Sub, Operator::Mul),
    (Operator::Add, Operator::Div),
    (Operator::Sub, Operator::Div),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureVariant {
    /// `( a o1 b ) o2 c`
    LeftParen,
    /// `a o1 ( b o2 c )`
    RightParen,
    /// `( a o2 b ) o1 c`
    FlippedLeftParen,
    /// `a o2 ( b o1 c )`
    FlippedRightParen,
    /// `a o1 b o2 c`
    NoParenNatural,
    /// `a o2 b o1 c`
    NoParenFlipped,
}

impl StructureVariant {
    pub const ALL: [StructureVariant; 6] = [
        StructureVariant::LeftParen,
        StructureVariant::RightParen,
        StructureVariant::FlippedLeftParen,
        StructureVariant::FlippedRightParen,
        StructureVariant::NoParenNatural,
        StructureVariant::NoParenFlipped,
    ];

    pub fn is_parenthesized(self) -> bool {
        !matches!(self, StructureVariant::NoParenNatural | StructureVariant::NoParenFlipped)
    }

    pub fn name(self) -> &'static str {
        match self {
            StructureVariant::LeftParen => "LeftParen",
            StructureVariant::RightParen => "RightParen",
            StructureVariant::FlippedLeftParen => "FlippedLeftParen",
            StructureVariant::FlippedRightParen => "FlippedRightParen",
            StructureVariant::NoParenNatural => "NoParenNatural",
            StructureVariant::NoParenFlipped => "NoParenFlipped",
        }
    }

    /// Builds the expression tree for this template.
    pub fn build(self, a: i64, b: i64, c: i64, o1: Operator, o2: Operator) -> Ast {
        use StructureVariant::*;
        let n = Ast::num;
        match self {
            LeftParen => Ast::binary(o2, Ast::group(Ast::binary(o1, n(a), n(b))), n(c)),
            RightParen => Ast::binary(o1, n(a), Ast::group(Ast::binary(o2, n(b), n(c)))),
            FlippedLeftParen => Ast::binary(o1, Ast::group(Ast::binary(o2, n(a), n(b))), n(c)),
            FlippedRightParen => Ast::binary(o2, n(a), Ast::group(Ast::binary(o1, n(b), n(c)))),
            NoParenNatural => parse_expression(&format!("{a} {o1} {b} {o2} {c}")).expect("template is well formed"),
            NoParenFlipped => parse_expression(&format!("{a} {o2} {b} {o1} {c}")).expect("template is well formed"),
        }
    }
}

impl fmt::Display for StructureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StructureVariant {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ExprError::BadRecord(format!("unknown variant {s:?}")))
    }
}

/// Which evaluation results count as admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterPolicy {
    /// Every step whole and at least 1.
    StrictPositive,
    /// Every step whole and at least 0. Reproduces the reference count of
    /// 8,547 prompts, so it is the default.
    WholeNonNegative,
    /// Only the final value must be whole and at least 1.
    FinalPositive,
    /// Only the final value must be whole and at least 0.
    FinalNonNegative,
    /// Keep every candidate (counting only).
    Unfiltered,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy::WholeNonNegative
    }
}

impl FilterPolicy {
    pub const ALL: [FilterPolicy; 5] = [
        FilterPolicy::StrictPositive,
        FilterPolicy::WholeNonNegative,
        FilterPolicy::FinalPositive,
        FilterPolicy::FinalNonNegative,
        FilterPolicy::Unfiltered,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterPolicy::StrictPositive => "strict-positive",
            FilterPolicy::WholeNonNegative => "whole-nonnegative",
            FilterPolicy::FinalPositive => "final-positive",
            FilterPolicy::FinalNonNegative => "final-nonnegative",
            FilterPolicy::Unfiltered => "unfiltered",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            FilterPolicy::StrictPositive => "every step whole and >= 1",
            FilterPolicy::WholeNonNegative => "every step whole and >= 0",
            FilterPolicy::FinalPositive => "final value whole and >= 1",
            FilterPolicy::FinalNonNegative => "final value whole and >= 0",
            FilterPolicy::Unfiltered => "no filter (division by zero still excluded)",
        }
    }

    /// Whether this policy can yield integer intermediate values, i.e. can
    /// produce [`Expression`] records rather than just counts.
    pub fn checks_every_step(self) -> bool {
        matches!(self, FilterPolicy::StrictPositive | FilterPolicy::WholeNonNegative)
    }

    fn check_value(min: i64, value: Rational) -> Result<i64, ExprError> {
        let whole = value
            .as_whole()
            .ok_or_else(|| ExprError::NonWholeResult(value.to_string()))?;
        if whole < min {
            return Err(ExprError::NonPositiveResult(whole));
        }
        Ok(whole)
    }

    /// Checks a step sequence against the policy.
    pub fn admits(self, steps: &[EvalStep]) -> Result<(), ExprError> {
        let last = steps.last().map(|s| s.value).unwrap_or(Rational::from_int(0));
        match self {
            FilterPolicy::StrictPositive => steps.iter().try_for_each(|s| Self::check_value(1, s.value).map(drop)),
            FilterPolicy::WholeNonNegative => steps.iter().try_for_each(|s| Self::check_value(0, s.value).map(drop)),
            FilterPolicy::FinalPositive => Self::check_value(1, last).map(drop),
            FilterPolicy::FinalNonNegative => Self::check_value(0, last).map(drop),
            FilterPolicy::Unfiltered => Ok(()),
        }
    }
}

impl FromStr for FilterPolicy {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ExprError::BadRecord(format!("unknown filter {s:?}")))
    }
}

/// `<position><letter><rank>`, e.g. `1m2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OperatorLabel {
    /// 1 or 2, order of appearance.
    pub position: u8,
    pub op: Operator,
    /// 1 or 2, order of evaluation.
    pub precedence_rank: u8,
}

impl OperatorLabel {
    pub fn surface(&self) -> String {
        self.to_string()
    }

    /// Binary probe target: 0 if evaluated first, 1 if second.
    pub fn evaluated_second(&self) -> bool {
        self.precedence_rank == 2
    }
}

impl fmt::Display for OperatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.position, self.op.letter(), self.precedence_rank)
    }
}

impl FromStr for OperatorLabel {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExprError::BadRecord(format!("bad operator label {s:?}"));
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 3 {
            return Err(bad());
        }
        let position = chars[0].to_digit(10).filter(|d| (1..=2).contains(d)).ok_or_else(bad)? as u8;
        let op = Operator::ALL.into_iter().find(|o| o.letter() == chars[1]).ok_or_else(bad)?;
        let precedence_rank = chars[2].to_digit(10).filter(|d| (1..=2).contains(d)).ok_or_else(bad)? as u8;
        Ok(Self {
            position,
            op,
            precedence_rank,
        })
    }
}

/// One dataset prompt with its exact evaluation and operator labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expression {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub o1: Operator,
    pub o2: Operator,
    pub variant: StructureVariant,
    pub text: String,
    pub intermediate: i64,
    pub final_value: i64,
    pub swapped_final: Option<i64>,
    pub labels: [OperatorLabel; 2],
}

impl Expression {
    /// Builds and evaluates one template instance under `policy`.
    pub fn build(
        a: i64,
        b: i64,
        c: i64,
        o1: Operator,
        o2: Operator,
        variant: StructureVariant,
        policy: FilterPolicy,
    ) -> Result<Self, ExprError> {
        if o1.precedence_level() == o2.precedence_level() {
            return Err(ExprError::SamePrecedence(o1, o2));
        }
        let ast = variant.build(a, b, c, o1, o2);
        let text = ast.to_prompt();
        let (intermediate, final_value) = eval_ast(&ast, policy)?;
        let labels = labels_of(&ast)?;
        let swapped_final = swapped_of(&ast);
        Ok(Self {
            a,
            b,
            c,
            o1,
            o2,
            variant,
            text,
            intermediate,
            final_value,
            swapped_final,
            labels,
        })
    }

    /// Recovers the template instance behind a prompt such as `"3 + 4 * 5 = "`.
    pub fn from_prompt(text: &str, policy: FilterPolicy) -> Result<Self, ExprError> {
        let canonical = parse_expression(text)?.to_prompt();
        let nums: Vec<i64> = canonical.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        let [a, b, c] = nums[..] else {
            return Err(ExprError::WrongOperandCount(nums.len()));
        };
        for &(o1, o2) in &MIXED_PAIRS {
            for v in StructureVariant::ALL {
                if v.build(a, b, c, o1, o2).to_prompt() == canonical {
                    return Self::build(a, b, c, o1, o2, v, policy);
                }
            }
        }
        Err(ExprError::Malformed(format!("{:?} matches no template", text.trim_end())))
    }

    pub fn ast(&self) -> Ast {
        self.variant.build(self.a, self.b, self.c, self.o1, self.o2)
    }

    /// Intermediate equals final, so lens detection cannot tell them apart.
    pub fn is_degenerate(&self) -> bool {
        self.intermediate == self.final_value
    }

    /// The same operands with the two operator tokens exchanged in place
    /// (natural ↔ flipped for the no-paren templates).
    pub fn operator_exchanged_text(&self) -> String {
        let ast = self.ast();
        let ops = ast.operators();
        let mut out = String::new();
        let mut k = 0;
        for tok in self.text.split_whitespace() {
            let mut ch = tok.chars();
            match (ch.next().and_then(Operator::from_symbol), ch.next()) {
                (Some(_), None) => {
                    out.push(ops[1 - k].symbol());
                    k += 1;
                }
                _ => out.push_str(tok),
            }
            out.push(' ');
        }
        out
    }
}

pub(crate) fn eval_ast(ast: &Ast, policy: FilterPolicy) -> Result<(i64, i64), ExprError> {
    let (_, steps) = ast.eval_steps()?;
    if steps.len() != 2 {
        return Err(ExprError::WrongOperandCount(ast.operand_count()));
    }
    FilterPolicy::admits(policy, &steps)?;
    let whole = |r: Rational| r.as_whole().ok_or_else(|| ExprError::NonWholeResult(r.to_string()));
    Ok((whole(steps[0].value)?, whole(steps[1].value)?))
}

fn labels_of(ast: &Ast) -> Result<[OperatorLabel; 2], ExprError> {
    let (_, steps) = ast.eval_steps()?;
    let ops = ast.operators();
    if steps.len() != 2 || ops.len() != 2 {
        return Err(ExprError::WrongOperandCount(ast.operand_count()));
    }
    let label = |position: usize| OperatorLabel {
        position: position as u8 + 1,
        op: ops[position],
        precedence_rank: if steps[0].position == position { 1 } else { 2 },
    };
    Ok([label(0), label(1)])
}

/// Regrouping of an ungrouped tree that gives the other operator priority.
fn swapped_grouping(ast: &Ast) -> Option<Ast> {
    if ast.has_group() {
        return None;
    }
    match ast {
        Ast::Binary { op, lhs, rhs } => match (&**lhs, &**rhs) {
            // a o (b p c)  →  (a o b) p c
            (Ast::Num(a), Ast::Binary { op: inner, lhs: b, rhs: c }) => Some(Ast::binary(
                *inner,
                Ast::binary(*op, Ast::Num(*a), (**b).clone()),
                (**c).clone(),
            )),
            // (a p b) o c  →  a p (b o c)
            (Ast::Binary { op: inner, lhs: a, rhs: b }, Ast::Num(c)) => Some(Ast::binary(
                *inner,
                (**a).clone(),
                Ast::binary(*op, (**b).clone(), Ast::Num(*c)),
            )),
            _ => None,
        },
        _ => None,
    }
}

fn swapped_of(ast: &Ast) -> Option<i64> {
    let swapped = swapped_grouping(ast)?;
    eval_ast(&swapped, FilterPolicy::StrictPositive).ok().map(|(_, f)| f)
}

/// `(intermediate, final)` of a canonical prompt under `policy`.
pub fn eval_expression(text: &str, policy: FilterPolicy) -> Result<(i64, i64), ExprError> {
    eval_ast(&parse_expression(text)?, policy)
}

/// Value obtained when the two operators' precedence ranks are exchanged.
/// `None` for parenthesized prompts and when any swapped step is not a
/// positive whole number.
pub fn eval_swapped_precedence(text: &str) -> Result<Option<i64>, ExprError> {
    Ok(swapped_of(&parse_expression(text)?))
}

pub fn operator_labels(text: &str) -> Result<[OperatorLabel; 2], ExprError> {
    labels_of(&parse_expression(text)?)
}

/// One `(a, b, c, pair, variant)` tuple before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub pair: (Operator, Operator),
    pub variant: StructureVariant,
}

/// Lexicographic over `(a, b, c, pair index, variant index)`.
pub fn enumerate_candidates(
    operands: &[i64],
    pairs: &[(Operator, Operator)],
) -> Result<Vec<Candidate>, ExprError> {
    if operands.is_empty() {
        return Err(ExprError::EmptyOperandRange);
    }
    if let Some(&(x, y)) = pairs.iter().find(|(x, y)| x.precedence_level() == y.precedence_level()) {
        return Err(ExprError::SamePrecedence(x, y));
    }
    let mut operands = operands.to_vec();
    operands.sort_unstable();
    operands.dedup();
    let mut out = Vec::with_capacity(operands.len().pow(3) * pairs.len() * 6);
    for &a in &operands {
        for &b in &operands {
            for &c in &operands {
                for &pair in pairs {
                    for variant in StructureVariant::ALL {
                        out.push(Candidate { a, b, c, pair, variant });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Every admissible expression, in deterministic lexicographic order.
pub fn enumerate_dataset(
    operands: &[i64],
    pairs: &[(Operator, Operator)],
    policy: FilterPolicy,
) -> Result<Vec<Expression>, ExprError> {
    if !policy.checks_every_step() {
        return Err(ExprError::BadRecord(format!(
            "policy {} admits non-whole intermediates; use count_admitted",
            policy.name()
        )));
    }
    Ok(enumerate_candidates(operands, pairs)?
        .into_iter()
        .filter_map(|k| Expression::build(k.a, k.b, k.c, k.pair.0, k.pair.1, k.variant, policy).ok())
        .collect())
}

/// Number of candidates admitted by `policy` (works for every policy).
pub fn count_admitted(operands: &[i64], pairs: &[(Operator, Operator)], policy: FilterPolicy) -> Result<usize, ExprError> {
    Ok(enumerate_candidates(operands, pairs)?
        .into_iter()
        .filter(|k| {
            let ast = k.variant.build(k.a, k.b, k.c, k.pair.0, k.pair.1);
            ast.eval_steps().is_ok_and(|(_, steps)| policy.admits(&steps).is_ok())
        })
        .count())
}

/// The reference dataset: operands 1..=9, all four pairs, default filter.
pub fn default_dataset() -> Vec<Expression> {
    enumerate_dataset(&(1..=9).collect::<Vec<_>>(), &MIXED_PAIRS, FilterPolicy::default())
        .expect("default construction is valid")
}

/// Line-delimited record layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressionRecord {
    pub text: String,
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub o1: Operator,
    pub o2: Operator,
    pub variant: StructureVariant,
    pub intermediate: i64,
    #[serde(rename = "final")]
    pub final_value: i64,
    pub swapped_final: Option<i64>,
    pub label1: String,
    pub label2: String,
}

impl From<&Expression> for ExpressionRecord {
    fn from(e: &Expression) -> Self {
        Self {
            text: e.text.clone(),
            a: e.a,
            b: e.b,
            c: e.c,
            o1: e.o1,
            o2: e.o2,
            variant: e.variant,
            intermediate: e.intermediate,
            final_value: e.final_value,
            swapped_final: e.swapped_final,
            label1: e.labels[0].surface(),
            label2: e.labels[1].surface(),
        }
    }
}

impl TryFrom<ExpressionRecord> for Expression {
    type Error = ExprError;

    /// Rebuilds from the operands and checks every stored field against a
    /// fresh evaluation.
    fn try_from(r: ExpressionRecord) -> Result<Self, Self::Error> {
        let e = Expression::build(r.a, r.b, r.c, r.o1, r.o2, r.variant, FilterPolicy::WholeNonNegative)?;
        let stored = ExpressionRecord::from(&e);
        if stored != r {
            return Err(ExprError::BadRecord(format!("record for {:?} disagrees with evaluation", r.text)));
        }
        Ok(e)
    }
}

pub fn write_jsonl<W: Write>(mut w: W, exprs: &[Expression]) -> std::io::Result<()> {
    for e in exprs {
        serde_json::to_writer(&mut w, &ExpressionRecord::from(e))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads records, reporting the 1-based line number of the first bad one.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Expression>, ExprError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| ExprError::BadRecord(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExpressionRecord =
            serde_json::from_str(&line).map_err(|e| ExprError::BadRecord(format!("line {}: {e}", i + 1)))?;
        out.push(Expression::try_from(rec).map_err(|e| ExprError::BadRecord(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_reference_prompts() {
        assert_eq!(eval_expression("2 + 3 * 3 = ", FilterPolicy::StrictPositive).unwrap(), (9, 11));
        assert_eq!(eval_expression("2 * ( 3 + 4 ) = ", FilterPolicy::StrictPositive).unwrap(), (7, 14));
        assert_eq!(eval_expression("1 + 1 * 1 = ", FilterPolicy::StrictPositive).unwrap(), (1, 2));
    }

    #[test]
    fn evaluation_errors() {
        assert!(matches!(
            eval_expression("3 / 2 + 1", FilterPolicy::StrictPositive),
            Err(ExprError::NonWholeResult(_))
        ));
        assert!(matches!(
            eval_expression("1 - 2 * 3", FilterPolicy::StrictPositive),
            Err(ExprError::NonPositiveResult(-5))
        ));
        assert!(matches!(
            eval_expression("( 3 - 3 ) * 4", FilterPolicy::StrictPositive),
            Err(ExprError::NonPositiveResult(0))
        ));
        assert_eq!(eval_expression("( 3 - 3 ) * 4", FilterPolicy::WholeNonNegative).unwrap(), (0, 0));
        assert!(matches!(
            eval_expression("4 / ( 3 - 3 )", FilterPolicy::WholeNonNegative),
            Err(ExprError::DivisionByZero)
        ));
    }

    #[test]
    fn swapped_precedence_values() {
        assert_eq!(eval_swapped_precedence("3 + 4 * 5 = ").unwrap(), Some(35));
        assert_eq!(eval_swapped_precedence("4 + 8 / 4 = ").unwrap(), Some(3));
        assert_eq!(eval_swapped_precedence("( 2 + 3 ) * 4 = ").unwrap(), None);
        // (1 - 2) * 3 goes negative
        assert_eq!(eval_swapped_precedence("1 - 2 * 3 = ").unwrap(), None);
        assert_eq!(eval_swapped_precedence("6 / 4 - 1 = ").unwrap(), Some(2));
        // 9 / ( 5 - 1 ) is not whole
        assert_eq!(eval_swapped_precedence("9 / 5 - 1 = ").unwrap(), None);
    }

    #[test]
    fn labels_follow_evaluation_order() {
        let s = |t: &str| operator_labels(t).unwrap().map(|l| l.surface());
        assert_eq!(s("2 * ( 3 + 4 ) = "), ["1m2", "2p1"]);
        assert_eq!(s("( 2 + 3 ) * 4 = "), ["1p1", "2m2"]);
        assert_eq!(s("2 + 3 * 3 = "), ["1p2", "2m1"]);
        assert_eq!(s("8 / 2 - 3 = "), ["1d1", "2s2"]);
    }

    #[test]
    fn label_round_trip_and_rejects() {
        let l: OperatorLabel = "2d1".parse().unwrap();
        assert_eq!(l.surface(), "2d1");
        assert!(!l.evaluated_second());
        for bad in ["3m1", "1x2", "1m", "1m3"] {
            assert!(bad.parse::<OperatorLabel>().is_err(), "{bad}");
        }
    }

    #[test]
    fn templates_render_as_documented() {
        use Operator::*;
        let texts: Vec<String> = StructureVariant::ALL
            .iter()
            .map(|v| v.build(1, 2, 3, Add, Mul).to_prompt())
            .collect();
        assert_eq!(
            texts,
            [
                "( 1 + 2 ) * 3 = ",
                "1 + ( 2 * 3 ) = ",
                "( 1 * 2 ) + 3 = ",
                "1 * ( 2 + 3 ) = ",
                "1 + 2 * 3 = ",
                "1 * 2 + 3 = ",
            ]
        );
    }

    #[test]
    fn all_ones_single_pair() {
        let ds = enumerate_dataset(&[1], &[(Operator::Add, Operator::Mul)], FilterPolicy::StrictPositive).unwrap();
        assert_eq!(ds.len(), 6);
        assert!(ds.iter().all(|e| e.final_value == 2));
    }

    #[test]
    fn rejects_same_precedence_pairs() {
        let err = enumerate_dataset(&[1, 2], &[(Operator::Add, Operator::Sub)], FilterPolicy::default()).unwrap_err();
        assert_eq!(err, ExprError::SamePrecedence(Operator::Add, Operator::Sub));
        assert_eq!(
            enumerate_dataset(&[], &MIXED_PAIRS, FilterPolicy::default()).unwrap_err(),
            ExprError::EmptyOperandRange
        );
    }

    #[test]
    fn candidate_count_without_filter() {
        let ops: Vec<i64> = (1..=9).collect();
        assert_eq!(enumerate_candidates(&ops, &MIXED_PAIRS).unwrap().len(), 17_496);
    }

    #[test]
    fn operator_exchange() {
        let e = Expression::build(3, 4, 5, Operator::Add, Operator::Mul, StructureVariant::NoParenNatural, FilterPolicy::StrictPositive)
            .unwrap();
        assert_eq!(e.operator_exchanged_text(), "3 * 4 + 5 = ");
        assert_eq!(e.swapped_final, Some(35));
        let f = Expression::build(3, 4, 5, Operator::Add, Operator::Mul, StructureVariant::NoParenFlipped, FilterPolicy::StrictPositive)
            .unwrap();
        assert_eq!(f.text, e.operator_exchanged_text());
        assert_eq!(f.operator_exchanged_text(), e.text);
    }

    #[test]
    fn jsonl_round_trip_and_bad_lines() {
        let ds: Vec<Expression> = default_dataset().into_iter().step_by(97).collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &ds).unwrap();
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        assert_eq!(
            first,
            r#"{"text":"( 1 + 1 ) * 1 = ","a":1,"b":1,"c":1,"o1":"+","o2":"*","variant":"LeftParen","intermediate":2,"final":2,"swapped_final":null,"label1":"1p1","label2":"2m2"}"#
        );
        assert_eq!(read_jsonl(&buf[..]).unwrap(), ds);

        let tampered = first.replace(r#""final":2"#, r#""final":3"#);
        let err = read_jsonl(tampered.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        assert!(read_jsonl("not json\n".as_bytes()).is_err());
    }
}
