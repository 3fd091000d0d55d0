//! Lexer and recursive-descent parser for the formula language.
//!
//! Precedence, loosest to tightest: `or`, `and`, comparisons, `+` `-`,
//! `*` `/`, `^` (right associative), unary minus, postfix `'`.
//! Whitespace is insignificant. Errors carry the byte offset of the
//! offending token together with an expected-token description.

use crate::formula::ast::{BinaryOp, Callee, Expr};
use crate::formula::FormulaError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Integer(i64),
    Real(f64),
    Ident(String),
    True,
    False,
    And,
    Or,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Quote,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
}

fn syntax(offset: usize, message: impl Into<String>) -> FormulaError {
    FormulaError::Syntax { offset, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, FormulaError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_real = false;
            if i < bytes.len() && bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                is_real = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_real = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let tok = if is_real {
                Tok::Real(text.parse::<f64>().expect("lexed real literal"))
            } else {
                match text.parse::<i64>() {
                    Ok(v) => Tok::Integer(v),
                    Err(_) => return Err(syntax(start, "integer literal out of range")),
                }
            };
            toks.push((start, tok));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            let tok = match word {
                "true" => Tok::True,
                "false" => Tok::False,
                "and" => Tok::And,
                "or" => Tok::Or,
                _ => Tok::Ident(word.to_string()),
            };
            toks.push((start, tok));
            continue;
        }
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'\'' => Tok::Quote,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b',' => Tok::Comma,
            b'<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    Tok::Le
                } else {
                    Tok::Lt
                }
            }
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    Tok::Ge
                } else {
                    Tok::Gt
                }
            }
            b'=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    Tok::EqEq
                } else {
                    return Err(syntax(start, "unexpected character `=`"));
                }
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    Tok::Ne
                } else {
                    return Err(syntax(start, "unexpected character `!`"));
                }
            }
            other => {
                let ch = src[start..].chars().next().unwrap_or(other as char);
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        i += 1;
        toks.push((start, tok));
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &Tok, what: &str) -> Result<(), FormulaError> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected {what}")))
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, FormulaError> {
        self.parse_or()
    }

    fn parse_or(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.parse_and()?;
        while self.eat(&Tok::Or) {
            let rhs = self.parse_and()?;
            lhs = Expr::binary(BinaryOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.parse_comparison()?;
        while self.eat(&Tok::And) {
            let rhs = self.parse_comparison()?;
            lhs = Expr::binary(BinaryOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    // comparisons do not chain: `a < b < c` is rejected
    fn parse_comparison(&mut self) -> Result<Expr, FormulaError> {
        let lhs = self.parse_additive()?;
        let op = match self.peek() {
            Some(Tok::Lt) => BinaryOp::Lt,
            Some(Tok::Le) => BinaryOp::Le,
            Some(Tok::Gt) => BinaryOp::Gt,
            Some(Tok::Ge) => BinaryOp::Ge,
            Some(Tok::EqEq) => BinaryOp::Eq,
            Some(Tok::Ne) => BinaryOp::Ne,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.parse_additive()?;
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn parse_additive(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.parse_multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinaryOp::Add,
                Some(Tok::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.parse_multiplicative()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn parse_multiplicative(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.parse_power()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinaryOp::Mul,
                Some(Tok::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.parse_power()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn parse_power(&mut self) -> Result<Expr, FormulaError> {
        let lhs = self.parse_unary()?;
        if self.eat(&Tok::Caret) {
            let rhs = self.parse_power()?;
            return Ok(Expr::binary(BinaryOp::Pow, lhs, rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, FormulaError> {
        if self.eat(&Tok::Minus) {
            // fold the sign into an adjacent bare literal so that`-3`
            // stays a literal; `-(3)` keeps an explicit negation node
            match self.peek() {
                Some(Tok::Integer(v)) => {
                    let v = *v;
                    self.pos += 1;
                    return self.parse_postfix_tail(Expr::Integer(-v));
                }
                Some(Tok::Real(v)) => {
                    let v = *v;
                    self.pos += 1;
                    return self.parse_postfix_tail(Expr::Real(-v));
                }
                _ => {}
            }
            let e = self.parse_unary()?;
            return Ok(Expr::neg(e));
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> Result<Expr, FormulaError> {
        let e = self.parse_primary()?;
        self.parse_postfix_tail(e)
    }

    fn parse_postfix_tail(&mut self, mut e: Expr) -> Result<Expr, FormulaError> {
        while self.eat(&Tok::Quote) {
            e = Expr::transpose(e);
        }
        Ok(e)
    }

    fn parse_primary(&mut self) -> Result<Expr, FormulaError> {
        let offset = self.offset();
        match self.bump() {
            Some(Tok::Integer(v)) => Ok(Expr::Integer(v)),
            Some(Tok::Real(v)) => Ok(Expr::Real(v)),
            Some(Tok::True) => Ok(Expr::Boolean(true)),
            Some(Tok::False) => Ok(Expr::Boolean(false)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let args = self.parse_args()?;
                    let callee = match name.as_str() {
                        "inv" => {
                            self.check_arity(offset, "inv", 1, args.len())?;
                            Callee::Inverse
                        }
                        "cross" => {
                            self.check_arity(offset, "cross", 2, args.len())?;
                            Callee::Cross
                        }
                        "delta" => {
                            self.check_arity(offset, "delta", 1, args.len())?;
                            Callee::Delta
                        }
                        _ => Callee::Named(name),
                    };
                    Ok(Expr::Call(callee, args))
                } else {
                    Ok(Expr::Variable(name))
                }
            }
            Some(Tok::LParen) => {
                let e = self.parse_expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::LBracket) => self.parse_bracketed(),
            _ => Err(syntax(offset, "expected expression")),
        }
    }

    fn check_arity(
        &self,
        offset: usize,
        name: &str,
        expected: usize,
        got: usize,
    ) -> Result<(), FormulaError> {
        if expected == got {
            Ok(())
        } else {
            let suffix = if expected == 1 { "" } else { "s" };
            Err(syntax(offset, format!("{name} expects {expected} argument{suffix}, got {got}")))
        }
    }

    fn parse_args(&mut self) -> Result<Vec<Expr>, FormulaError> {
        let mut args = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.parse_expr()?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RParen, "`,` or `)`")?;
            return Ok(args);
        }
    }

    // the opening `[` is already consumed; a second `[` starts a matrix
    fn parse_bracketed(&mut self) -> Result<Expr, FormulaError> {
        if self.peek() == Some(&Tok::LBracket) {
            let mut rows: Vec<Vec<Expr>> = Vec::new();
            loop {
                let row_offset = self.offset();
                self.expect(&Tok::LBracket, "`[`")?;
                let row = self.parse_element_list()?;
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(syntax(row_offset, "matrix rows must have equal length"));
                    }
                }
                rows.push(row);
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(&Tok::RBracket, "`,` or `]`")?;
                return Ok(Expr::Matrix(rows));
            }
        }
        let items = self.parse_element_list()?;
        Ok(Expr::Vector(items))
    }

    // elements up to and including the closing `]`
    fn parse_element_list(&mut self) -> Result<Vec<Expr>, FormulaError> {
        let mut items = Vec::new();
        loop {
            items.push(self.parse_expr()?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RBracket, "`,` or `]`")?;
            return Ok(items);
        }
    }
}

/// Parses a formula into its AST.
pub fn parse(src: &str) -> Result<Expr, FormulaError> {
    let toks = lex(src)?;
    let mut parser = Parser { toks, pos: 0, end: src.len() };
    let e = parser.parse_expr()?;
    if parser.pos < parser.toks.len() {
        return Err(syntax(parser.offset(), "expected end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str) -> Expr {
        parse(src).unwrap()
    }

    #[test]
    fn truncated_call_reports_offset_and_expectation() {
        let err = parse("sin(").unwrap_err();
        assert_eq!(err.to_string(), "syntax error at offset 4: expected expression");
    }

    #[test]
    fn unexpected_character_reports_offset() {
        let err = parse("2 $ 2").unwrap_err();
        assert_eq!(err.to_string(), "syntax error at offset 2: unexpected character `$`");
    }

    #[test]
    fn precedence_mul_over_add() {
        assert_eq!(
            p("2 + 3 * 4"),
            Expr::binary(
                BinaryOp::Add,
                Expr::Integer(2),
                Expr::binary(BinaryOp::Mul, Expr::Integer(3), Expr::Integer(4)),
            )
        );
    }

    #[test]
    fn pow_is_right_associative() {
        assert_eq!(
            p("a ^ b ^ c"),
            Expr::binary(
                BinaryOp::Pow,
                Expr::var("a"),
                Expr::binary(BinaryOp::Pow, Expr::var("b"), Expr::var("c")),
            )
        );
    }

    #[test]
    fn unary_minus_binds_tighter_than_pow() {
        assert_eq!(
            p("-x ^ 2"),
            Expr::binary(BinaryOp::Pow, Expr::neg(Expr::var("x")), Expr::Integer(2))
        );
    }

    #[test]
    fn sign_folds_into_literals_but_not_through_parens() {
        assert_eq!(p("-3"), Expr::Integer(-3));
        assert_eq!(p("-3.5"), Expr::Real(-3.5));
        assert_eq!(p("-(3)"), Expr::neg(Expr::Integer(3)));
        assert_eq!(p("--3"), Expr::neg(Expr::Integer(-3)));
    }

    #[test]
    fn transpose_is_postfix_and_repeatable() {
        assert_eq!(p("f'"), Expr::transpose(Expr::var("f")));
        assert_eq!(p("f''"), Expr::transpose(Expr::transpose(Expr::var("f"))));
        assert_eq!(p("-3'"), Expr::transpose(Expr::Integer(-3)));
    }

    #[test]
    fn quadratic_form_groups_left() {
        assert_eq!(
            p("f' * a * f"),
            Expr::binary(
                BinaryOp::Mul,
                Expr::binary(BinaryOp::Mul, Expr::transpose(Expr::var("f")), Expr::var("a")),
                Expr::var("f"),
            )
        );
    }

    #[test]
    fn vector_and_matrix_literals() {
        assert_eq!(p("[1, 2]"), Expr::Vector(vec![Expr::Integer(1), Expr::Integer(2)]));
        assert_eq!(
            p("[[1, 2], [3, 4]]"),
            Expr::Matrix(vec![
                vec![Expr::Integer(1), Expr::Integer(2)],
                vec![Expr::Integer(3), Expr::Integer(4)],
            ])
        );
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let err = parse("[[1, 2], [3]]").unwrap_err();
        assert_eq!(err.to_string(), "syntax error at offset 9: matrix rows must have equal length");
    }

    #[test]
    fn reserved_calls_check_arity() {
        assert_eq!(p("inv(a)"), Expr::Call(Callee::Inverse, vec![Expr::var("a")]));
        assert_eq!(
            p("cross(a, b)"),
            Expr::Call(Callee::Cross, vec![Expr::var("a"), Expr::var("b")])
        );
        assert_eq!(
            p("delta(t - 1)"),
            Expr::Call(
                Callee::Delta,
                vec![Expr::binary(BinaryOp::Sub, Expr::var("t"), Expr::Integer(1))]
            )
        );
        let err = parse("inv(a, b)").unwrap_err();
        assert_eq!(err.to_string(), "syntax error at offset 0: inv expects 1 argument, got 2");
    }

    #[test]
    fn comparisons_do_not_chain() {
        assert_eq!(p("v < 6"), Expr::binary(BinaryOp::Lt, Expr::var("v"), Expr::Integer(6)));
        let err = parse("a < b < c").unwrap_err();
        assert_eq!(err.to_string(), "syntax error at offset 6: expected end of input");
    }

    #[test]
    fn logical_operators_nest() {
        assert_eq!(
            p("a < 1 and b > 2 or c == 3"),
            Expr::binary(
                BinaryOp::Or,
                Expr::binary(
                    BinaryOp::And,
                    Expr::binary(BinaryOp::Lt, Expr::var("a"), Expr::Integer(1)),
                    Expr::binary(BinaryOp::Gt, Expr::var("b"), Expr::Integer(2)),
                ),
                Expr::binary(BinaryOp::Eq, Expr::var("c"), Expr::Integer(3)),
            )
        );
    }

    #[test]
    fn scientific_notation_is_real() {
        assert_eq!(p("1e3"), Expr::Real(1000.0));
        assert_eq!(p("2.5E-2"), Expr::Real(0.025));
        assert_eq!(p("1.5"), Expr::Real(1.5));
        assert_eq!(p("15"), Expr::Integer(15));
    }

    #[test]
    fn unbalanced_parens_report_expected_token() {
        let err = parse("(1 + 2").unwrap_err();
        assert_eq!(err.to_string(), "syntax error at offset 6: expected `)`");
        let err = parse("[1, 2").unwrap_err();
        assert_eq!(err.to_string(), "syntax error at offset 5: expected `,` or `]`");
    }
}
