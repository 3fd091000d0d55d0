//! Splitting a right-hand side into its smooth part and Dirac impulse
//! terms of the shape `g * delta(t - c)`.

use crate::formula::ast::{BinaryOp, Callee, Expr, UnaryOp};
use crate::formula::eval::eval;
use crate::formula::{Env, FormulaError};

/// One impulse term: at `time` the integrated quantity jumps by the value
/// of `coefficient` evaluated just before the jump.
#[derive(Debug, Clone, PartialEq)]
pub struct Impulse {
    pub coefficient: Expr,
    pub time: f64,
}

fn malformed(msg: impl Into<String>) -> FormulaError {
    FormulaError::MalformedDelta(msg.into())
}

fn flatten_terms(e: &Expr, sign: bool, out: &mut Vec<(bool, Expr)>) {
    match e {
        Expr::Binary(BinaryOp::Add, a, b) => {
            flatten_terms(a, sign, out);
            flatten_terms(b, sign, out);
        }
        Expr::Binary(BinaryOp::Sub, a, b) => {
            flatten_terms(a, sign, out);
            flatten_terms(b, !sign, out);
        }
        Expr::Unary(UnaryOp::Neg, inner) => flatten_terms(inner, !sign, out),
        _ => out.push((sign, e.clone())),
    }
}

fn mul_simplified(a: Expr, b: Expr) -> Expr {
    if a == Expr::Real(1.0) {
        b
    } else if b == Expr::Real(1.0) {
        a
    } else {
        Expr::binary(BinaryOp::Mul, a, b)
    }
}

// pulls the single delta factor out of a product chain, returning the
// remaining coefficient and the delta argument
fn strip_delta(term: &Expr) -> Result<(Expr, Expr), FormulaError> {
    match term {
        Expr::Call(Callee::Delta, args) => {
            if args[0].contains_delta() {
                return Err(malformed("delta argument may not contain delta"));
            }
            Ok((Expr::Real(1.0), args[0].clone()))
        }
        Expr::Binary(BinaryOp::Mul, a, b) => match (a.contains_delta(), b.contains_delta()) {
            (true, true) => Err(malformed("multiple delta factors in one term")),
            (true, false) => {
                let (c, arg) = strip_delta(a)?;
                Ok((mul_simplified(c, (**b).clone()), arg))
            }
            (false, true) => {
                let (c, arg) = strip_delta(b)?;
                Ok((mul_simplified((**a).clone(), c), arg))
            }
            (false, false) => unreachable!("term was checked to contain delta"),
        },
        Expr::Binary(BinaryOp::Div, a, b) => {
            if b.contains_delta() {
                return Err(malformed("delta may not appear in a denominator"));
            }
            let (c, arg) = strip_delta(a)?;
            Ok((Expr::binary(BinaryOp::Div, c, (**b).clone()), arg))
        }
        Expr::Unary(UnaryOp::Neg, inner) => {
            let (c, arg) = strip_delta(inner)?;
            Ok((Expr::neg(c), arg))
        }
        _ => Err(malformed(
            "delta must occur as a factor of a top-level additive term",
        )),
    }
}

fn const_real(e: &Expr) -> Result<f64, FormulaError> {
    match eval(e, &Env::new()) {
        Ok(v) => v
            .as_real()
            .ok_or_else(|| malformed("firing time must be a scalar constant")),
        Err(FormulaError::UnknownVariable(_) | FormulaError::UnknownFunction(_)) => {
            Err(malformed("non-constant firing time"))
        }
        Err(e) => Err(e),
    }
}

// accepted shapes: t, t - c, t + c, with c a constant expression
fn firing_time(arg: &Expr, time_var: &str) -> Result<f64, FormulaError> {
    let is_time = |e: &Expr| matches!(e, Expr::Variable(n) if n == time_var);
    match arg {
        _ if is_time(arg) => Ok(0.0),
        Expr::Binary(BinaryOp::Sub, a, b) if is_time(a) => const_real(b),
        Expr::Binary(BinaryOp::Add, a, b) if is_time(a) => Ok(-const_real(b)?),
        Expr::Binary(BinaryOp::Add, a, b) if is_time(b) => Ok(-const_real(a)?),
        _ => Err(malformed(format!(
            "delta argument must have the shape {time_var} - c with constant c"
        ))),
    }
}

/// Splits `expr` into a smooth remainder and a list of impulse terms.
///
/// Every `delta(..)` node must be a multiplicative factor of a top-level
/// additive term, and its argument must pin a constant firing time
/// relative to `time_var`.
pub fn extract_delta_terms(
    expr: &Expr,
    time_var: &str,
) -> Result<(Expr, Vec<Impulse>), FormulaError> {
    let mut terms = Vec::new();
    flatten_terms(expr, true, &mut terms);

    let mut smooth: Option<Expr> = None;
    let mut impulses = Vec::new();
    for (sign, term) in terms {
        if !term.contains_delta() {
            smooth = Some(match (smooth, sign) {
                (None, true) => term,
                (None, false) => Expr::neg(term),
                (Some(acc), true) => Expr::binary(BinaryOp::Add, acc, term),
                (Some(acc), false) => Expr::binary(BinaryOp::Sub, acc, term),
            });
            continue;
        }
        let (coefficient, arg) = strip_delta(&term)?;
        if coefficient.contains_delta() {
            return Err(malformed("multiple delta factors in one term"));
        }
        let time = firing_time(&arg, time_var)?;
        let coefficient = if sign { coefficient } else { Expr::neg(coefficient) };
        impulses.push(Impulse { coefficient, time });
    }
    Ok((smooth.unwrap_or(Expr::Real(0.0)), impulses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse;

    fn split(src: &str) -> (Expr, Vec<Impulse>) {
        extract_delta_terms(&parse(src).unwrap(), "t").unwrap()
    }

    fn split_err(src: &str) -> FormulaError {
        extract_delta_terms(&parse(src).unwrap(), "t").unwrap_err()
    }

    #[test]
    fn pure_impulse_leaves_zero_smooth_part() {
        let (smooth, imps) = split("f(t) * delta(t - 1)");
        assert_eq!(smooth, Expr::Real(0.0));
        assert_eq!(imps.len(), 1);
        assert_eq!(imps[0].coefficient.to_string(), "f(t)");
        assert_eq!(imps[0].time, 1.0);
    }

    #[test]
    fn mixed_rhs_keeps_smooth_terms() {
        let (smooth, imps) = split("x + 2 * delta(t - 0.5)");
        assert_eq!(smooth, Expr::var("x"));
        assert_eq!(imps, vec![Impulse { coefficient: Expr::Integer(2), time: 0.5 }]);
    }

    #[test]
    fn nested_delta_is_malformed() {
        assert!(matches!(split_err("sin(delta(t))"), FormulaError::MalformedDelta(_)));
        assert!(matches!(
            split_err("delta(t) * delta(t)"),
            FormulaError::MalformedDelta(_)
        ));
        assert!(matches!(split_err("1 / delta(t)"), FormulaError::MalformedDelta(_)));
    }

    #[test]
    fn firing_time_shapes() {
        assert_eq!(split("delta(t)").1[0].time, 0.0);
        assert_eq!(split("delta(t - 2)").1[0].time, 2.0);
        assert_eq!(split("delta(t + 2)").1[0].time, -2.0);
        assert_eq!(split("delta(t - (1 + 1) / 2)").1[0].time, 1.0);
        assert!(matches!(split_err("delta(t - x)"), FormulaError::MalformedDelta(_)));
        assert!(matches!(split_err("delta(2 * t)"), FormulaError::MalformedDelta(_)));
    }

    #[test]
    fn signs_propagate_into_coefficients() {
        let (_, imps) = split("x - 3 * delta(t - 1)");
        assert_eq!(imps[0].coefficient, Expr::neg(Expr::Integer(3)));
        let (_, imps) = split("-delta(t)");
        assert_eq!(imps[0].coefficient, Expr::neg(Expr::Real(1.0)));
    }

    #[test]
    fn multiple_impulses_in_order() {
        let (smooth, imps) = split("-x + delta(t - 1) + 5 * delta(t - 2)");
        assert_eq!(smooth, Expr::neg(Expr::var("x")));
        assert_eq!(imps.len(), 2);
        assert_eq!(imps[0].time, 1.0);
        assert_eq!(imps[1].time, 2.0);
        assert_eq!(imps[1].coefficient, Expr::Integer(5));
    }
}
