//! Evaluation of formulas against an environment, including the
//! broadcasting, matrix algebra and function-composition rules.

use crate::formula::ast::{BinaryOp, Callee, Expr, UnaryOp};
use crate::formula::value::{Builtin, FunctionRef, FunctionRule, Matrix, Value};
use crate::formula::{Env, FormulaError};

fn type_err(msg: impl Into<String>) -> FormulaError {
    FormulaError::Type(msg.into())
}

fn shape_err(msg: impl Into<String>) -> FormulaError {
    FormulaError::Shape(msg.into())
}

// vectors and matrices must hold only finite reals; scalars may be
// non-finite (e.g. ln(0)), callers decide what to do with those
fn finite_vector(v: Vec<f64>) -> Result<Value, FormulaError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Value::Vector(v))
    } else {
        Err(FormulaError::NonFinite)
    }
}

fn finite_matrix(m: Matrix) -> Result<Value, FormulaError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(Value::Matrix(m))
    } else {
        Err(FormulaError::NonFinite)
    }
}

fn zip_same_len(
    op: &str,
    a: &[f64],
    b: &[f64],
    f: impl Fn(f64, f64) -> Result<f64, FormulaError>,
) -> Result<Value, FormulaError> {
    if a.len() != b.len() {
        return Err(shape_err(format!(
            "length mismatch: `{op}` on vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    finite_vector(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Result<_, _>>()?)
}

fn zip_same_dims(
    op: &str,
    a: &Matrix,
    b: &Matrix,
    f: impl Fn(f64, f64) -> Result<f64, FormulaError>,
) -> Result<Value, FormulaError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(shape_err(format!(
            "dimension mismatch: `{op}` on matrices {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let data = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| f(x, y))
        .collect::<Result<Vec<_>, _>>()?;
    finite_matrix(Matrix::new(a.rows(), a.cols(), data))
}

fn map_channels(v: &Value, f: impl Fn(f64) -> Result<f64, FormulaError>) -> Result<Value, FormulaError> {
    match v {
        Value::Vector(xs) => finite_vector(xs.iter().map(|&x| f(x)).collect::<Result<_, _>>()?),
        Value::Matrix(m) => {
            let data = m.iter().map(f).collect::<Result<Vec<_>, _>>()?;
            finite_matrix(Matrix::new(m.rows(), m.cols(), data))
        }
        _ => unreachable!("map_channels on scalar"),
    }
}

// elementwise +, -, / and ^ share one broadcasting skeleton
fn broadcast(
    op: &str,
    a: &Value,
    b: &Value,
    int_case: Option<fn(i64, i64) -> Result<Value, FormulaError>>,
    real_case: impl Fn(f64, f64) -> Result<f64, FormulaError>,
) -> Result<Value, FormulaError> {
    match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => {
            if let Some(f) = int_case {
                return f(*x, *y);
            }
            Ok(Value::Real(real_case(*x as f64, *y as f64)?))
        }
        _ => match (a.as_real(), b.as_real()) {
            (Some(x), Some(y)) => Ok(Value::Real(real_case(x, y)?)),
            _ => match (a, b) {
                (Value::Vector(v), s) if s.is_scalar() => {
                    let y = s.as_real().unwrap();
                    finite_vector(v.iter().map(|&x| real_case(x, y)).collect::<Result<_, _>>()?)
                }
                (s, Value::Vector(v)) if s.is_scalar() => {
                    let x = s.as_real().unwrap();
                    finite_vector(v.iter().map(|&y| real_case(x, y)).collect::<Result<_, _>>()?)
                }
                (Value::Vector(v), Value::Vector(w)) => zip_same_len(op, v, w, real_case),
                (Value::Matrix(m), s) if s.is_scalar() => {
                    let y = s.as_real().unwrap();
                    let data = m.iter().map(|x| real_case(x, y)).collect::<Result<Vec<_>, _>>()?;
                    finite_matrix(Matrix::new(m.rows(), m.cols(), data))
                }
                (s, Value::Matrix(m)) if s.is_scalar() => {
                    let x = s.as_real().unwrap();
                    let data = m.iter().map(|y| real_case(x, y)).collect::<Result<Vec<_>, _>>()?;
                    finite_matrix(Matrix::new(m.rows(), m.cols(), data))
                }
                (Value::Matrix(m), Value::Matrix(n)) => zip_same_dims(op, m, n, real_case),
                _ => Err(type_err(format!(
                    "cannot apply `{op}` to {} and {}",
                    a.variant_name(),
                    b.variant_name()
                ))),
            },
        },
    }
}

fn real_div(x: f64, y: f64) -> Result<f64, FormulaError> {
    if y == 0.0 {
        Err(FormulaError::DivisionByZero)
    } else {
        Ok(x / y)
    }
}

fn eval_mul(a: &Value, b: &Value) -> Result<Value, FormulaError> {
    match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => x
            .checked_mul(*y)
            .map(Value::Integer)
            .ok_or(FormulaError::IntegerOverflow),
        (Value::Matrix(m), Value::Matrix(n)) => {
            let p = m.mul(n).ok_or_else(|| {
                shape_err(format!(
                    "dimension mismatch: inner dimensions {} and {} of `*` disagree",
                    m.cols(),
                    n.rows()
                ))
            })?;
            if p.rows() == 1 && p.cols() == 1 {
                Ok(Value::Real(p.get(0, 0)))
            } else {
                finite_matrix(p)
            }
        }
        (Value::Matrix(m), Value::Vector(v)) => {
            let out = m.mul_vec(v).ok_or_else(|| {
                shape_err(format!(
                    "dimension mismatch: matrix with {} columns times vector of length {}",
                    m.cols(),
                    v.len()
                ))
            })?;
            if out.len() == 1 {
                Ok(Value::Real(out[0]))
            } else {
                finite_vector(out)
            }
        }
        (Value::Vector(_), Value::Vector(_)) => Err(type_err(
            "cannot multiply two vectors; transpose one side for an inner product",
        )),
        _ => match (a.as_real(), b.as_real()) {
            (Some(x), Some(y)) => Ok(Value::Real(x * y)),
            (Some(s), None) => scale(b, s),
            (None, Some(s)) => scale(a, s),
            _ => Err(type_err(format!(
                "cannot apply `*` to {} and {}",
                a.variant_name(),
                b.variant_name()
            ))),
        },
    }
}

fn scale(v: &Value, s: f64) -> Result<Value, FormulaError> {
    match v {
        Value::Vector(_) | Value::Matrix(_) => map_channels(v, |x| Ok(x * s)),
        _ => Err(type_err(format!("cannot scale {}", v.variant_name()))),
    }
}

fn compare(op: BinaryOp, a: &Value, b: &Value) -> Result<Value, FormulaError> {
    if let (BinaryOp::Eq | BinaryOp::Ne, Value::Boolean(x), Value::Boolean(y)) = (op, a, b) {
        let eq = x == y;
        return Ok(Value::Boolean(if op == BinaryOp::Eq { eq } else { !eq }));
    }
    let (x, y) = match (a.as_real(), b.as_real()) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(type_err(format!(
                "cannot compare {} and {} with `{}`",
                a.variant_name(),
                b.variant_name(),
                op.symbol()
            )))
        }
    };
    Ok(Value::Boolean(match op {
        BinaryOp::Lt => x < y,
        BinaryOp::Le => x <= y,
        BinaryOp::Gt => x > y,
        BinaryOp::Ge => x >= y,
        BinaryOp::Eq => x == y,
        BinaryOp::Ne => x != y,
        _ => unreachable!(),
    }))
}

fn eval_binary(op: BinaryOp, a: &Value, b: &Value) -> Result<Value, FormulaError> {
    match op {
        BinaryOp::Add => broadcast(
            "+",
            a,
            b,
            Some(|x, y| x.checked_add(y).map(Value::Integer).ok_or(FormulaError::IntegerOverflow)),
            |x, y| Ok(x + y),
        ),
        BinaryOp::Sub => broadcast(
            "-",
            a,
            b,
            Some(|x, y| x.checked_sub(y).map(Value::Integer).ok_or(FormulaError::IntegerOverflow)),
            |x, y| Ok(x - y),
        ),
        BinaryOp::Mul => eval_mul(a, b),
        BinaryOp::Div => {
            if let (Value::Matrix(_), Value::Matrix(_)) = (a, b) {
                return Err(type_err("cannot divide a matrix by a matrix"));
            }
            broadcast("/", a, b, None, real_div)
        }
        // `^` always produces Real channels: an integer exponent may be
        // negative, so closing over the integers is not type-sound
        BinaryOp::Pow => broadcast("^", a, b, None, |x, y| Ok(x.powf(y))),
        BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Eq | BinaryOp::Ne => {
            compare(op, a, b)
        }
        BinaryOp::And | BinaryOp::Or => unreachable!("logical ops are short-circuited in eval"),
    }
}

fn eval_unary(op: UnaryOp, v: &Value) -> Result<Value, FormulaError> {
    match op {
        UnaryOp::Neg => match v {
            Value::Integer(x) => {
                x.checked_neg().map(Value::Integer).ok_or(FormulaError::IntegerOverflow)
            }
            Value::Real(x) => Ok(Value::Real(-x)),
            Value::Vector(xs) => Ok(Value::Vector(xs.iter().map(|x| -x).collect())),
            Value::Matrix(m) => Ok(Value::Matrix(m.map(|x| -x))),
            _ => Err(type_err(format!("cannot negate {}", v.variant_name()))),
        },
        UnaryOp::Transpose => match v {
            Value::Integer(_) | Value::Real(_) => Ok(v.clone()),
            Value::Vector(xs) => Ok(Value::Matrix(Matrix::new(1, xs.len(), xs.clone()))),
            Value::Matrix(m) => Ok(Value::Matrix(m.transpose())),
            _ => Err(type_err(format!("cannot transpose {}", v.variant_name()))),
        },
    }
}

/// Applies a function reference to fully evaluated real arguments.
pub fn apply_function(f: &FunctionRef, args: &[f64]) -> f64 {
    match f.rule() {
        FunctionRule::Builtin(b) => match args {
            [x] => b.apply1(*x),
            [x, y] => b.apply2(*x, *y),
            _ => unreachable!("builtin arity is 1 or 2"),
        },
        FunctionRule::Composed { outer, inner } => {
            let ys: Vec<f64> = inner.iter().map(|g| apply_function(g, args)).collect();
            apply_function(outer, &ys)
        }
    }
}

fn apply_broadcast(f: &FunctionRef, args: &[Value]) -> Result<Value, FormulaError> {
    if args.len() != f.arity() {
        let suffix = if f.arity() == 1 { "" } else { "s" };
        return Err(type_err(format!(
            "{} expects {} argument{suffix}, got {}",
            f.name(),
            f.arity(),
            args.len()
        )));
    }
    if args.iter().all(|a| matches!(a, Value::Function(_))) {
        let inner: Vec<FunctionRef> = args
            .iter()
            .map(|a| match a {
                Value::Function(g) => g.clone(),
                _ => unreachable!(),
            })
            .collect();
        let arity = inner[0].arity();
        if inner.iter().any(|g| g.arity() != arity) {
            return Err(type_err("composition requires equal arities"));
        }
        return Ok(Value::Function(FunctionRef::composed(f.clone(), inner)));
    }
    if args.iter().any(|a| matches!(a, Value::Function(_))) {
        return Err(type_err(format!(
            "{} cannot mix function and value arguments",
            f.name()
        )));
    }
    match args {
        [v] => match v {
            Value::Integer(_) | Value::Real(_) => {
                Ok(Value::Real(apply_function(f, &[v.as_real().unwrap()])))
            }
            Value::Vector(_) | Value::Matrix(_) => {
                map_channels(v, |x| Ok(apply_function(f, &[x])))
            }
            _ => Err(type_err(format!(
                "{} is not defined on {}",
                f.name(),
                v.variant_name()
            ))),
        },
        [a, b] => broadcast(f.name(), a, b, None, |x, y| Ok(apply_function(f, &[x, y]))),
        _ => Err(type_err(format!("{} takes at most 2 arguments", f.name()))),
    }
}

fn eval_inverse(v: &Value) -> Result<Value, FormulaError> {
    match v {
        Value::Integer(_) | Value::Real(_) => {
            Ok(Value::Real(real_div(1.0, v.as_real().unwrap())?))
        }
        Value::Matrix(m) => {
            if m.rows() != m.cols() {
                return Err(shape_err(format!(
                    "inv requires a square matrix, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            match m.inverse() {
                Some(inv) => finite_matrix(inv),
                None => Err(FormulaError::SingularMatrix),
            }
        }
        _ => Err(type_err(format!("inv is not defined on {}", v.variant_name()))),
    }
}

fn eval_cross(a: &Value, b: &Value) -> Result<Value, FormulaError> {
    match (a, b) {
        (Value::Vector(u), Value::Vector(v)) if u.len() == 3 && v.len() == 3 => finite_vector(vec![
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]),
        _ => Err(type_err(format!(
            "cross requires two Vector(3), got {} and {}",
            a.variant_name(),
            b.variant_name()
        ))),
    }
}

/// Evaluates `expr` against `env`.
pub fn eval(expr: &Expr, env: &Env) -> Result<Value, FormulaError> {
    match expr {
        Expr::Boolean(b) => Ok(Value::Boolean(*b)),
        Expr::Integer(i) => Ok(Value::Integer(*i)),
        Expr::Real(x) => Ok(Value::Real(*x)),
        Expr::Vector(items) => {
            let mut out = Vec::with_capacity(items.len());
            for e in items {
                let v = eval(e, env)?;
                out.push(v.as_real().ok_or_else(|| {
                    type_err(format!("vector elements must be scalar, got {}", v.variant_name()))
                })?);
            }
            finite_vector(out)
        }
        Expr::Matrix(rows) => {
            let mut data = Vec::with_capacity(rows.len() * rows[0].len());
            for row in rows {
                for e in row {
                    let v = eval(e, env)?;
                    data.push(v.as_real().ok_or_else(|| {
                        type_err(format!(
                            "matrix elements must be scalar, got {}",
                            v.variant_name()
                        ))
                    })?);
                }
            }
            finite_matrix(Matrix::new(rows.len(), rows[0].len(), data))
        }
        Expr::Variable(name) => env
            .lookup(name)
            .ok_or_else(|| FormulaError::UnknownVariable(name.clone())),
        Expr::Unary(op, e) => eval_unary(*op, &eval(e, env)?),
        Expr::Binary(op @ (BinaryOp::And | BinaryOp::Or), a, b) => {
            let lhs = eval(a, env)?;
            let x = lhs.as_boolean().ok_or_else(|| {
                type_err(format!("`{}` requires Booleans, got {}", op.symbol(), lhs.variant_name()))
            })?;
            // short-circuit so guarded predicates like
            // `p > 0.1 and 1000 / p < 50` stay total
            match (op, x) {
                (BinaryOp::And, false) => return Ok(Value::Boolean(false)),
                (BinaryOp::Or, true) => return Ok(Value::Boolean(true)),
                _ => {}
            }
            let rhs = eval(b, env)?;
            let y = rhs.as_boolean().ok_or_else(|| {
                type_err(format!("`{}` requires Booleans, got {}", op.symbol(), rhs.variant_name()))
            })?;
            Ok(Value::Boolean(y))
        }
        Expr::Binary(op, a, b) => eval_binary(*op, &eval(a, env)?, &eval(b, env)?),
        Expr::Call(callee, args) => match callee {
            Callee::Inverse => eval_inverse(&eval(&args[0], env)?),
            Callee::Cross => eval_cross(&eval(&args[0], env)?, &eval(&args[1], env)?),
            Callee::Delta => {
                // a lone delta contributes nothing to a smooth evaluation;
                // the dynamics module consumes its impulse semantics
                let v = eval(&args[0], env)?;
                if v.is_scalar() {
                    Ok(Value::Real(0.0))
                } else {
                    Err(type_err(format!(
                        "delta requires a scalar argument, got {}",
                        v.variant_name()
                    )))
                }
            }
            Callee::Named(name) => {
                let f = if let Some(b) = Builtin::by_name(name) {
                    FunctionRef::builtin(b)
                } else {
                    match env.function(name) {
                        Some(f) => f,
                        None => match env.get(name) {
                            Some(v) => {
                                return Err(type_err(format!(
                                    "{name} is not a function, it is {}",
                                    v.variant_name()
                                )))
                            }
                            None => return Err(FormulaError::UnknownFunction(name.clone())),
                        },
                    }
                };
                let args: Vec<Value> =
                    args.iter().map(|e| eval(e, env)).collect::<Result<_, _>>()?;
                apply_broadcast(&f, &args)
            }
        },
    }
}
