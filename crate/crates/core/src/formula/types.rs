//! Static typing of formulas: a small tag lattice plus an inference pass
//! that mirrors the broadcasting rules of evaluation without running it.

use std::collections::HashMap;
use std::fmt;

use crate::formula::ast::{BinaryOp, Callee, Expr, UnaryOp};
use crate::formula::value::{Builtin, Value};
use crate::formula::FormulaError;

/// Result type of an expression. Vector length and matrix dimensions are
/// optional; a tag with concrete dimensions only unifies with equal
/// dimensions or with unknown ones.
///
/// A 1x1 product collapses to `Real` at evaluation time; `infer` mirrors
/// that only when the participating dimensions are statically known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeTag {
    Boolean,
    Integer,
    Real,
    Vector(Option<usize>),
    Matrix(Option<(usize, usize)>),
    Function(usize),
}

impl TypeTag {
    pub fn of(value: &Value) -> TypeTag {
        match value {
            Value::Boolean(_) => TypeTag::Boolean,
            Value::Integer(_) => TypeTag::Integer,
            Value::Real(_) => TypeTag::Real,
            Value::Vector(v) => TypeTag::Vector(Some(v.len())),
            Value::Matrix(m) => TypeTag::Matrix(Some((m.rows(), m.cols()))),
            Value::Function(f) => TypeTag::Function(f.arity()),
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, TypeTag::Integer | TypeTag::Real)
    }

    /// Structural compatibility: same variant, and dimensions equal
    /// wherever both sides know them.
    pub fn unifies(&self, other: &TypeTag) -> bool {
        match (self, other) {
            (TypeTag::Boolean, TypeTag::Boolean)
            | (TypeTag::Integer, TypeTag::Integer)
            | (TypeTag::Real, TypeTag::Real) => true,
            (TypeTag::Vector(a), TypeTag::Vector(b)) => match (a, b) {
                (Some(x), Some(y)) => x == y,
                _ => true,
            },
            (TypeTag::Matrix(a), TypeTag::Matrix(b)) => match (a, b) {
                (Some(x), Some(y)) => x == y,
                _ => true,
            },
            (TypeTag::Function(a), TypeTag::Function(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeTag::Boolean => write!(f, "Boolean"),
            TypeTag::Integer => write!(f, "Integer"),
            TypeTag::Real => write!(f, "Real"),
            TypeTag::Vector(Some(n)) => write!(f, "Vector({n})"),
            TypeTag::Vector(None) => write!(f, "Vector"),
            TypeTag::Matrix(Some((r, c))) => write!(f, "Matrix({r}, {c})"),
            TypeTag::Matrix(None) => write!(f, "Matrix"),
            TypeTag::Function(a) => write!(f, "Function/{a}"),
        }
    }
}

fn type_err(msg: impl Into<String>) -> FormulaError {
    FormulaError::Type(msg.into())
}

fn shape_err(msg: impl Into<String>) -> FormulaError {
    FormulaError::Shape(msg.into())
}

fn unify_len(a: Option<usize>, b: Option<usize>) -> Result<Option<usize>, FormulaError> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => {
            Err(shape_err(format!("length mismatch: vector lengths {x} and {y}")))
        }
        (Some(x), _) => Ok(Some(x)),
        (_, y) => Ok(y),
    }
}

fn unify_dims(
    a: Option<(usize, usize)>,
    b: Option<(usize, usize)>,
) -> Result<Option<(usize, usize)>, FormulaError> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => Err(shape_err(format!(
            "dimension mismatch: matrices {}x{} and {}x{}",
            x.0, x.1, y.0, y.1
        ))),
        (Some(x), _) => Ok(Some(x)),
        (_, y) => Ok(y),
    }
}

// elementwise binary broadcasting shared by +, -, / and ^
fn broadcast_pair(op: &str, a: TypeTag, b: TypeTag, real: bool) -> Result<TypeTag, FormulaError> {
    use TypeTag::*;
    Ok(match (a, b) {
        (Integer, Integer) => {
            if real {
                Real
            } else {
                Integer
            }
        }
        (x, y) if x.is_scalar() && y.is_scalar() => Real,
        (x, Vector(l)) | (Vector(l), x) if x.is_scalar() => Vector(l),
        (Vector(l1), Vector(l2)) => Vector(unify_len(l1, l2)?),
        (x, Matrix(d)) | (Matrix(d), x) if x.is_scalar() => Matrix(d),
        (Matrix(d1), Matrix(d2)) => Matrix(unify_dims(d1, d2)?),
        (x, y) => return Err(type_err(format!("cannot apply `{op}` to {x} and {y}"))),
    })
}

fn infer_mul(a: TypeTag, b: TypeTag) -> Result<TypeTag, FormulaError> {
    use TypeTag::*;
    Ok(match (a, b) {
        (Integer, Integer) => Integer,
        (x, y) if x.is_scalar() && y.is_scalar() => Real,
        (x, Vector(l)) | (Vector(l), x) if x.is_scalar() => Vector(l),
        (x, Matrix(d)) | (Matrix(d), x) if x.is_scalar() => Matrix(d),
        (Matrix(d1), Matrix(d2)) => {
            if let (Some((_, c1)), Some((r2, _))) = (d1, d2) {
                if c1 != r2 {
                    return Err(shape_err(format!(
                        "dimension mismatch: inner dimensions {c1} and {r2} of `*` disagree"
                    )));
                }
            }
            match (d1, d2) {
                (Some((1, _)), Some((_, 1))) => Real,
                (Some((r1, _)), Some((_, c2))) => Matrix(Some((r1, c2))),
                _ => Matrix(None),
            }
        }
        (Matrix(d), Vector(l)) => {
            if let (Some((_, c)), Some(n)) = (d, l) {
                if c != n {
                    return Err(shape_err(format!(
                        "dimension mismatch: matrix with {c} columns times vector of length {n}"
                    )));
                }
            }
            match d {
                Some((1, _)) => Real,
                Some((r, _)) => Vector(Some(r)),
                None => Vector(None),
            }
        }
        (Vector(_), Vector(_)) => {
            return Err(type_err(
                "cannot multiply two vectors; transpose one side for an inner product",
            ))
        }
        (x, y) => return Err(type_err(format!("cannot apply `*` to {x} and {y}"))),
    })
}

// function application broadcasting: every channel becomes Real
fn apply_numeric(name: &str, arity: usize, args: &[TypeTag]) -> Result<TypeTag, FormulaError> {
    use TypeTag::*;
    if args.len() != arity {
        let suffix = if arity == 1 { "" } else { "s" };
        return Err(type_err(format!(
            "{name} expects {arity} argument{suffix}, got {}",
            args.len()
        )));
    }
    if args.iter().all(|t| matches!(t, Function(_))) {
        // composition: the inner functions share one argument list
        let inner = match args[0] {
            Function(a) => a,
            _ => unreachable!(),
        };
        for t in args {
            if *t != Function(inner) {
                return Err(type_err(format!(
                    "composition requires equal arities, got {} and {t}",
                    args[0]
                )));
            }
        }
        return Ok(Function(inner));
    }
    if args.iter().any(|t| matches!(t, Function(_))) {
        return Err(type_err(format!(
            "{name} cannot mix function and value arguments"
        )));
    }
    match args {
        [t] => Ok(match t {
            Integer | Real => Real,
            Vector(l) => Vector(*l),
            Matrix(d) => Matrix(*d),
            other => return Err(type_err(format!("{name} is not defined on {other}"))),
        }),
        [a, b] => broadcast_pair(name, *a, *b, true),
        _ => Err(type_err(format!("{name} takes at most 2 arguments"))),
    }
}

/// Infers the result type of `expr` given types for its free variables.
/// Pure: no evaluation happens and no numeric errors can be raised.
pub fn infer(expr: &Expr, types: &HashMap<String, TypeTag>) -> Result<TypeTag, FormulaError> {
    use TypeTag::*;
    match expr {
        Expr::Boolean(_) => Ok(Boolean),
        Expr::Integer(_) => Ok(Integer),
        Expr::Real(_) => Ok(Real),
        Expr::Vector(items) => {
            for e in items {
                let t = infer(e, types)?;
                if !t.is_scalar() {
                    return Err(type_err(format!("vector elements must be scalar, got {t}")));
                }
            }
            Ok(Vector(Some(items.len())))
        }
        Expr::Matrix(rows) => {
            for row in rows {
                for e in row {
                    let t = infer(e, types)?;
                    if !t.is_scalar() {
                        return Err(type_err(format!("matrix elements must be scalar, got {t}")));
                    }
                }
            }
            Ok(Matrix(Some((rows.len(), rows[0].len()))))
        }
        Expr::Variable(name) => types
            .get(name)
            .copied()
            .ok_or_else(|| FormulaError::UnknownVariable(name.clone())),
        Expr::Unary(UnaryOp::Neg, e) => match infer(e, types)? {
            Integer => Ok(Integer),
            Real => Ok(Real),
            Vector(l) => Ok(Vector(l)),
            Matrix(d) => Ok(Matrix(d)),
            t => Err(type_err(format!("cannot negate {t}"))),
        },
        Expr::Unary(UnaryOp::Transpose, e) => match infer(e, types)? {
            Integer => Ok(Integer),
            Real => Ok(Real),
            Vector(l) => Ok(Matrix(l.map(|n| (1, n)))),
            Matrix(d) => Ok(Matrix(d.map(|(r, c)| (c, r)))),
            t => Err(type_err(format!("cannot transpose {t}"))),
        },
        Expr::Binary(op, a, b) => {
            let (ta, tb) = (infer(a, types)?, infer(b, types)?);
            match op {
                BinaryOp::Add | BinaryOp::Sub => broadcast_pair(op.symbol(), ta, tb, false),
                BinaryOp::Mul => infer_mul(ta, tb),
                BinaryOp::Div => match (ta, tb) {
                    (Matrix(_), Matrix(_)) => {
                        Err(type_err("cannot divide a matrix by a matrix"))
                    }
                    _ => broadcast_pair("/", ta, tb, true),
                },
                BinaryOp::Pow => broadcast_pair("^", ta, tb, true),
                BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                    if ta.is_scalar() && tb.is_scalar() {
                        Ok(Boolean)
                    } else {
                        Err(type_err(format!(
                            "cannot compare {ta} and {tb} with `{}`",
                            op.symbol()
                        )))
                    }
                }
                BinaryOp::Eq | BinaryOp::Ne => {
                    if (ta.is_scalar() && tb.is_scalar()) || (ta == Boolean && tb == Boolean) {
                        Ok(Boolean)
                    } else {
                        Err(type_err(format!(
                            "cannot compare {ta} and {tb} with `{}`",
                            op.symbol()
                        )))
                    }
                }
                BinaryOp::And | BinaryOp::Or => {
                    if ta == Boolean && tb == Boolean {
                        Ok(Boolean)
                    } else {
                        Err(type_err(format!("`{}` requires Booleans, got {ta} and {tb}", op.symbol())))
                    }
                }
            }
        }
        Expr::Call(callee, args) => {
            let arg_tags: Vec<TypeTag> =
                args.iter().map(|e| infer(e, types)).collect::<Result<_, _>>()?;
            match callee {
                Callee::Inverse => match arg_tags[0] {
                    Integer | Real => Ok(Real),
                    Matrix(Some((r, c))) if r == c => Ok(Matrix(Some((r, c)))),
                    Matrix(Some((r, c))) => Err(shape_err(format!(
                        "inv requires a square matrix, got {r}x{c}"
                    ))),
                    Matrix(None) => Ok(Matrix(None)),
                    t => Err(type_err(format!("inv is not defined on {t}"))),
                },
                Callee::Cross => {
                    for t in &arg_tags {
                        match t {
                            Vector(Some(3)) | Vector(None) => {}
                            Vector(Some(n)) => {
                                return Err(shape_err(format!(
                                    "cross requires Vector(3), got Vector({n})"
                                )))
                            }
                            other => {
                                return Err(type_err(format!(
                                    "cross requires Vector(3), got {other}"
                                )))
                            }
                        }
                    }
                    Ok(Vector(Some(3)))
                }
                Callee::Delta => {
                    if arg_tags[0].is_scalar() {
                        Ok(Real)
                    } else {
                        Err(type_err(format!(
                            "delta requires a scalar argument, got {}",
                            arg_tags[0]
                        )))
                    }
                }
                Callee::Named(name) => {
                    if let Some(b) = Builtin::by_name(name) {
                        apply_numeric(name, b.arity(), &arg_tags)
                    } else {
                        match types.get(name.as_str()) {
                            Some(Function(arity)) => apply_numeric(name, *arity, &arg_tags),
                            Some(t) => Err(type_err(format!("{name} is not a function, it is {t}"))),
                            None => Err(FormulaError::UnknownFunction(name.clone())),
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse;

    fn env(pairs: &[(&str, TypeTag)]) -> HashMap<String, TypeTag> {
        pairs.iter().map(|(n, t)| (n.to_string(), *t)).collect()
    }

    fn infer_str(src: &str, types: &HashMap<String, TypeTag>) -> Result<TypeTag, FormulaError> {
        infer(&parse(src).unwrap(), types)
    }

    #[test]
    fn sin_broadcasts_over_vectors() {
        let t = env(&[("a", TypeTag::Real)]);
        assert_eq!(infer_str("sin(a)", &t).unwrap(), TypeTag::Real);
        let t = env(&[("a", TypeTag::Vector(Some(3)))]);
        assert_eq!(infer_str("sin(a)", &t).unwrap(), TypeTag::Vector(Some(3)));
    }

    #[test]
    fn matrix_product_checks_inner_dims() {
        let t = env(&[
            ("a", TypeTag::Matrix(Some((2, 3)))),
            ("b", TypeTag::Matrix(Some((4, 2)))),
        ]);
        let err = infer_str("a * b", &t).unwrap_err();
        assert!(matches!(err, FormulaError::Shape(_)), "{err}");
        let t = env(&[
            ("a", TypeTag::Matrix(Some((2, 3)))),
            ("b", TypeTag::Matrix(Some((3, 5)))),
        ]);
        assert_eq!(infer_str("a * b", &t).unwrap(), TypeTag::Matrix(Some((2, 5))));
    }

    #[test]
    fn quadratic_form_collapses_to_real() {
        let t = env(&[
            ("f", TypeTag::Vector(Some(2))),
            ("a", TypeTag::Matrix(Some((2, 2)))),
        ]);
        assert_eq!(infer_str("f' * a * f", &t).unwrap(), TypeTag::Real);
    }

    #[test]
    fn integer_arithmetic_stays_integer_except_div_and_pow() {
        let t = HashMap::new();
        assert_eq!(infer_str("2 + 3", &t).unwrap(), TypeTag::Integer);
        assert_eq!(infer_str("2 * 3", &t).unwrap(), TypeTag::Integer);
        assert_eq!(infer_str("2 / 3", &t).unwrap(), TypeTag::Real);
        assert_eq!(infer_str("2 ^ 3", &t).unwrap(), TypeTag::Real);
    }

    #[test]
    fn vector_times_vector_is_rejected() {
        let t = env(&[
            ("a", TypeTag::Vector(Some(3))),
            ("b", TypeTag::Vector(Some(3))),
        ]);
        assert!(infer_str("a * b", &t).is_err());
        assert_eq!(infer_str("a' * b", &t).unwrap(), TypeTag::Real);
    }

    #[test]
    fn composition_keeps_inner_arity() {
        let t = env(&[("g", TypeTag::Function(1))]);
        assert_eq!(infer_str("sin(g)", &t).unwrap(), TypeTag::Function(1));
        let t = env(&[("f", TypeTag::Function(1)), ("g", TypeTag::Function(1))]);
        assert_eq!(infer_str("atan2(f, g)", &t).unwrap(), TypeTag::Function(1));
    }

    #[test]
    fn comparisons_produce_booleans() {
        let t = env(&[("v_mag", TypeTag::Real)]);
        assert_eq!(infer_str("v_mag < 6", &t).unwrap(), TypeTag::Boolean);
        assert_eq!(
            infer_str("v_mag < 6 and v_mag > 0", &t).unwrap(),
            TypeTag::Boolean
        );
    }

    #[test]
    fn unknown_dimensions_unify_with_concrete() {
        assert!(TypeTag::Vector(None).unifies(&TypeTag::Vector(Some(7))));
        assert!(TypeTag::Matrix(Some((2, 2))).unifies(&TypeTag::Matrix(None)));
        assert!(!TypeTag::Vector(Some(2)).unifies(&TypeTag::Vector(Some(3))));
        assert!(!TypeTag::Real.unifies(&TypeTag::Integer));
    }
}
