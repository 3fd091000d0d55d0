//! Runtime values of the formula language.

use std::fmt;

/// A value produced or consumed by formula evaluation.
///
/// `Vector` and `Matrix` hold double-precision reals; a successful
/// evaluation never leaves a non-finite element inside either (scalar
/// results may still be non-finite, e.g. `ln(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Vector(Vec<f64>),
    Matrix(Matrix),
    Function(FunctionRef),
}

impl Value {
    /// Numeric scalars promote to `f64`; everything else is `None`.
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_boolean(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Value::Integer(_) | Value::Real(_))
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Value::Boolean(_) => "Boolean",
            Value::Integer(_) => "Integer",
            Value::Real(_) => "Real",
            Value::Vector(_) => "Vector",
            Value::Matrix(_) => "Matrix",
            Value::Function(_) => "Function",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(x) => write!(f, "{x}"),
            Value::Vector(v) => {
                write!(f, "[")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "]")
            }
            Value::Matrix(m) => {
                write!(f, "[")?;
                for r in 0..m.rows() {
                    if r > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "[")?;
                    for c in 0..m.cols() {
                        if c > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "{}", m.get(r, c))?;
                    }
                    write!(f, "]")?;
                }
                write!(f, "]")
            }
            Value::Function(fr) => write!(f, "{}", fr.name()),
        }
    }
}

/// Pivot magnitudes below this are treated as singular during elimination.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Dense row-major matrix of reals. Dimensions are always at least 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        assert_eq!(data.len(), rows * cols, "element count must match dimensions");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from rows; all rows must have the same non-zero length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
        assert!(!rows.is_empty(), "matrix must have at least one row");
        let cols = rows[0].len();
        assert!(cols >= 1, "matrix rows must be non-empty");
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix rows");
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// Matrix product; `None` when inner dimensions disagree.
    pub fn mul(&self, other: &Matrix) -> Option<Matrix> {
        if self.cols != other.rows {
            return None;
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(r, k) * other.get(k, c);
                }
                out.set(r, c, acc);
            }
        }
        Some(out)
    }

    /// Product with a column vector; `None` on length mismatch.
    pub fn mul_vec(&self, v: &[f64]) -> Option<Vec<f64>> {
        if self.cols != v.len() {
            return None;
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in 0..self.cols {
                acc += self.get(r, k) * v[k];
            }
            out[r] = acc;
        }
        Some(out)
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    ///
    /// Returns `None` for non-square input or when a pivot falls below
    /// [`PIVOT_TOLERANCE`] in magnitude.
    pub fn inverse(&self) -> Option<Matrix> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            // pick the largest pivot in the remaining column
            let mut pivot_row = col;
            let mut pivot_abs = a.get(col, col).abs();
            for r in col + 1..n {
                let v = a.get(r, col).abs();
                if v > pivot_abs {
                    pivot_abs = v;
                    pivot_row = r;
                }
            }
            if pivot_abs < PIVOT_TOLERANCE {
                return None;
            }
            if pivot_row != col {
                for c in 0..n {
                    let (x, y) = (a.get(col, c), a.get(pivot_row, c));
                    a.set(col, c, y);
                    a.set(pivot_row, c, x);
                    let (x, y) = (inv.get(col, c), inv.get(pivot_row, c));
                    inv.set(col, c, y);
                    inv.set(pivot_row, c, x);
                }
            }
            let p = a.get(col, col);
            for c in 0..n {
                a.set(col, c, a.get(col, c) / p);
                inv.set(col, c, inv.get(col, c) / p);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a.get(r, col);
                if factor == 0.0 {
                    continue;
                }
                for c in 0..n {
                    a.set(r, c, a.get(r, c) - factor * a.get(col, c));
                    inv.set(r, c, inv.get(r, c) - factor * inv.get(col, c));
                }
            }
        }
        Some(inv)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}

/// Built-in scalar functions of the formula language.
///
/// All of them accept reals (integers promote) and broadcast componentwise
/// over vectors and matrices; every result channel is a real.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Atan2,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sign,
    Min,
    Max,
    Floor,
    Sqr,
}

pub const BUILTINS: [Builtin; 16] = [
    Builtin::Sin,
    Builtin::Cos,
    Builtin::Tan,
    Builtin::Asin,
    Builtin::Acos,
    Builtin::Atan,
    Builtin::Atan2,
    Builtin::Exp,
    Builtin::Ln,
    Builtin::Sqrt,
    Builtin::Abs,
    Builtin::Sign,
    Builtin::Min,
    Builtin::Max,
    Builtin::Floor,
    Builtin::Sqr,
];

impl Builtin {
    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Sin => "sin",
            Builtin::Cos => "cos",
            Builtin::Tan => "tan",
            Builtin::Asin => "asin",
            Builtin::Acos => "acos",
            Builtin::Atan => "atan",
            Builtin::Atan2 => "atan2",
            Builtin::Exp => "exp",
            Builtin::Ln => "ln",
            Builtin::Sqrt => "sqrt",
            Builtin::Abs => "abs",
            Builtin::Sign => "sign",
            Builtin::Min => "min",
            Builtin::Max => "max",
            Builtin::Floor => "floor",
            Builtin::Sqr => "sqr",
        }
    }

    pub fn by_name(name: &str) -> Option<Builtin> {
        BUILTINS.iter().copied().find(|b| b.name() == name)
    }

    pub fn arity(&self) -> usize {
        match self {
            Builtin::Atan2 | Builtin::Min | Builtin::Max => 2,
            _ => 1,
        }
    }

    pub fn apply1(&self, x: f64) -> f64 {
        match self {
            Builtin::Sin => x.sin(),
            Builtin::Cos => x.cos(),
            Builtin::Tan => x.tan(),
            Builtin::Asin => x.asin(),
            Builtin::Acos => x.acos(),
            Builtin::Atan => x.atan(),
            Builtin::Exp => x.exp(),
            Builtin::Ln => x.ln(),
            Builtin::Sqrt => x.sqrt(),
            Builtin::Abs => x.abs(),
            Builtin::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Builtin::Floor => x.floor(),
            Builtin::Sqr => x * x,
            _ => unreachable!("unary application of binary builtin {}", self.name()),
        }
    }

    pub fn apply2(&self, a: f64, b: f64) -> f64 {
        match self {
            Builtin::Atan2 => a.atan2(b),
            Builtin::Min => a.min(b),
            Builtin::Max => a.max(b),
            _ => unreachable!("binary application of unary builtin {}", self.name()),
        }
    }
}

/// A function-valued result: either a built-in or a composition of
/// functions, carried around as an ordinary [`Value`].
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionRef {
    name: String,
    arity: usize,
    rule: FunctionRule,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionRule {
    Builtin(Builtin),
    /// `outer(inner_1(args..), .., inner_k(args..))`; the inner functions
    /// share one argument list, so the composite keeps their arity.
    Composed {
        outer: Box<FunctionRef>,
        inner: Vec<FunctionRef>,
    },
}

impl FunctionRef {
    pub fn builtin(b: Builtin) -> FunctionRef {
        FunctionRef {
            name: b.name().to_string(),
            arity: b.arity(),
            rule: FunctionRule::Builtin(b),
        }
    }

    /// Composes `outer` with `inner` functions of equal arity.
    pub fn composed(outer: FunctionRef, inner: Vec<FunctionRef>) -> FunctionRef {
        assert!(!inner.is_empty());
        let arity = inner[0].arity;
        debug_assert!(inner.iter().all(|f| f.arity == arity));
        let name = format!(
            "{}({})",
            outer.name,
            inner.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join(", ")
        );
        FunctionRef {
            name,
            arity,
            rule: FunctionRule::Composed { outer: Box::new(outer), inner },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn rule(&self) -> &FunctionRule {
        &self.rule
    }
}
