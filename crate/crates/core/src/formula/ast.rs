//! Abstract syntax of the formula language with a canonical printer.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    /// Arithmetic negation, `-e`.
    Neg,
    /// Postfix transpose, `e'`.
    Transpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
        }
    }
}

/// What a call expression invokes.
#[derive(Debug, Clone, PartialEq)]
pub enum Callee {
    /// A named function: a built-in or a function-valued variable.
    Named(String),
    /// `inv(m)`, matrix inverse.
    Inverse,
    /// `cross(a, b)`, 3-vector cross product.
    Cross,
    /// `delta(e)`, Dirac impulse factor; only meaningful inside
    /// right-hand sides handled by the impulse extractor.
    Delta,
}

impl Callee {
    pub fn display_name(&self) -> &str {
        match self {
            Callee::Named(n) => n,
            Callee::Inverse => "inv",
            Callee::Cross => "cross",
            Callee::Delta => "delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Boolean(bool),
    Integer(i64),
    Real(f64),
    /// `[a, b, c]`
    Vector(Vec<Expr>),
    /// `[[a, b], [c, d]]`
    Matrix(Vec<Vec<Expr>>),
    Variable(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Callee, Vec<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Variable(name.to_string())
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::Unary(UnaryOp::Neg, Box::new(e))
    }

    pub fn transpose(e: Expr) -> Expr {
        Expr::Unary(UnaryOp::Transpose, Box::new(e))
    }

    /// Walks the tree, visiting every node.
    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Vector(items) => {
                for e in items {
                    e.visit(f);
                }
            }
            Expr::Matrix(rows) => {
                for row in rows {
                    for e in row {
                        e.visit(f);
                    }
                }
            }
            Expr::Unary(_, e) => e.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => {
                for e in args {
                    e.visit(f);
                }
            }
            _ => {}
        }
    }

    /// Names of all variables referenced anywhere in the expression.
    pub fn free_variables(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Variable(n) = e {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
            if let Expr::Call(Callee::Named(n), _) = e {
                if crate::formula::value::Builtin::by_name(n).is_none() && !names.contains(n) {
                    names.push(n.clone());
                }
            }
        });
        names
    }

    /// True if any subexpression is a `delta(..)` call.
    pub fn contains_delta(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if matches!(e, Expr::Call(Callee::Delta, _)) {
                found = true;
            }
        });
        found
    }
}

// Binding strengths for the printer; mirrors the parser's precedence
// ladder so that print -> parse is the identity on ASTs.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, _, _) => match op {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Lt
            | BinaryOp::Le
            | BinaryOp::Gt
            | BinaryOp::Ge
            | BinaryOp::Eq
            | BinaryOp::Ne => 3,
            BinaryOp::Add | BinaryOp::Sub => 4,
            BinaryOp::Mul | BinaryOp::Div => 5,
            BinaryOp::Pow => 6,
        },
        Expr::Unary(UnaryOp::Neg, _) => 7,
        Expr::Unary(UnaryOp::Transpose, _) => 8,
        _ => 9,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, min: u8) -> fmt::Result {
    if precedence(child) < min {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Boolean(b) => write!(f, "{b}"),
            Expr::Integer(i) => write!(f, "{i}"),
            // {:?} keeps a trailing ".0" so reparsing yields a Real again
            Expr::Real(x) => write!(f, "{x:?}"),
            Expr::Vector(items) => {
                write!(f, "[")?;
                for (i, e) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, "]")
            }
            Expr::Matrix(rows) => {
                write!(f, "[")?;
                for (r, row) in rows.iter().enumerate() {
                    if r > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "[")?;
                    for (c, e) in row.iter().enumerate() {
                        if c > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "{e}")?;
                    }
                    write!(f, "]")?;
                }
                write!(f, "]")
            }
            Expr::Variable(name) => write!(f, "{name}"),
            Expr::Unary(UnaryOp::Neg, e) => {
                write!(f, "-")?;
                // a bare literal would fold back into the sign on reparse,
                // so parenthesize to keep the node explicit
                if matches!(**e, Expr::Integer(_) | Expr::Real(_)) {
                    write!(f, "({e})")
                } else {
                    write_child(f, e, 7)
                }
            }
            Expr::Unary(UnaryOp::Transpose, e) => {
                write_child(f, e, 9)?;
                write!(f, "'")
            }
            Expr::Binary(op, a, b) => {
                let p = precedence(self);
                match op {
                    // right-associative: the left child must bind tighter
                    BinaryOp::Pow => {
                        write_child(f, a, p + 1)?;
                        write!(f, " {} ", op.symbol())?;
                        write_child(f, b, p)
                    }
                    _ => {
                        write_child(f, a, p)?;
                        write!(f, " {} ", op.symbol())?;
                        write_child(f, b, p + 1)
                    }
                }
            }
            Expr::Call(callee, args) => {
                write!(f, "{}(", callee.display_name())?;
                for (i, e) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
        }
    }
}
