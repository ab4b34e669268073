//! Expression trees for building recipes from Rust code or parsed text.
//!
//! Products and sums with a literal constant become `scale` / `add_const`
//! stages, which evaluate to the same values as the general interval
//! operation with a degenerate operand. No other rewriting happens: the
//! decomposition written is the decomposition evaluated.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::interval::Monotone;

use super::Stage;

#[derive(Clone)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Neg(Arc<Expr>),
    AddConst(Arc<Expr>, f64),
    Scale(f64, Arc<Expr>),
    Recip(Arc<Expr>),
    Powi(Arc<Expr>, u32),
    Sin(Arc<Expr>),
    Cos(Arc<Expr>),
    Tan(Arc<Expr>),
    Monotone(Monotone, Arc<Expr>),
    Custom(Arc<dyn Stage>, Vec<Expr>),
}

impl Expr {
    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn powi(self, n: u32) -> Expr {
        Expr::Powi(Arc::new(self), n)
    }

    pub fn recip(self) -> Expr {
        Expr::Recip(Arc::new(self))
    }

    pub fn sin(self) -> Expr {
        Expr::Sin(Arc::new(self))
    }

    pub fn cos(self) -> Expr {
        Expr::Cos(Arc::new(self))
    }

    pub fn tan(self) -> Expr {
        Expr::Tan(Arc::new(self))
    }

    pub fn monotone(self, f: Monotone) -> Expr {
        Expr::Monotone(f, Arc::new(self))
    }

    pub fn exp(self) -> Expr {
        self.monotone(Monotone::Exp)
    }

    pub fn ln(self) -> Expr {
        self.monotone(Monotone::Log)
    }

    pub fn atan(self) -> Expr {
        self.monotone(Monotone::Arctan)
    }

    pub fn sqrt(self) -> Expr {
        self.monotone(Monotone::Sqrt)
    }

    pub fn custom(stage: Arc<dyn Stage>, args: Vec<Expr>) -> Expr {
        Expr::Custom(stage, args)
    }

    /// Number of stages this tree contributes when compiled.
    pub fn stage_count(&self) -> usize {
        match self {
            Expr::Var(_) => 0,
            Expr::Const(_) => 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.stage_count() + b.stage_count()
            }
            Expr::Neg(a)
            | Expr::AddConst(a, _)
            | Expr::Scale(_, a)
            | Expr::Recip(a)
            | Expr::Powi(a, _)
            | Expr::Sin(a)
            | Expr::Cos(a)
            | Expr::Tan(a)
            | Expr::Monotone(_, a) => 1 + a.stage_count(),
            Expr::Custom(_, args) => 1 + args.iter().map(Expr::stage_count).sum::<usize>(),
        }
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::Const(c)
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a + b),
            (None, Some(c)) => Expr::AddConst(Arc::new(self), c),
            (Some(c), None) => Expr::AddConst(Arc::new(rhs), c),
            (None, None) => Expr::Add(Arc::new(self), Arc::new(rhs)),
        }
    }
}

impl Add<f64> for Expr {
    type Output = Expr;
    fn add(self, rhs: f64) -> Expr {
        self + Expr::Const(rhs)
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a - b),
            (None, Some(c)) => Expr::AddConst(Arc::new(self), -c),
            (Some(c), None) => Expr::AddConst(Arc::new(-rhs), c),
            (None, None) => Expr::Sub(Arc::new(self), Arc::new(rhs)),
        }
    }
}

impl Sub<f64> for Expr {
    type Output = Expr;
    fn sub(self, rhs: f64) -> Expr {
        self - Expr::Const(rhs)
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a * b),
            (None, Some(c)) => Expr::Scale(c, Arc::new(self)),
            (Some(c), None) => Expr::Scale(c, Arc::new(rhs)),
            (None, None) => Expr::Mul(Arc::new(self), Arc::new(rhs)),
        }
    }
}

impl Mul<f64> for Expr {
    type Output = Expr;
    fn mul(self, rhs: f64) -> Expr {
        self * Expr::Const(rhs)
    }
}

impl Mul<Expr> for f64 {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Const(self) * rhs
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a / b),
            _ => Expr::Div(Arc::new(self), Arc::new(rhs)),
        }
    }
}

impl Div<f64> for Expr {
    type Output = Expr;
    fn div(self, rhs: f64) -> Expr {
        self / Expr::Const(rhs)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(-c),
            e => Expr::Neg(Arc::new(e)),
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Add(a, b) => write!(f, "({a:?} + {b:?})"),
            Expr::Sub(a, b) => write!(f, "({a:?} - {b:?})"),
            Expr::Mul(a, b) => write!(f, "({a:?} * {b:?})"),
            Expr::Div(a, b) => write!(f, "({a:?} / {b:?})"),
            Expr::Neg(a) => write!(f, "-{a:?}"),
            Expr::AddConst(a, c) => write!(f, "({a:?} + {c})"),
            Expr::Scale(c, a) => write!(f, "({c} * {a:?})"),
            Expr::Recip(a) => write!(f, "1/{a:?}"),
            Expr::Powi(a, n) => write!(f, "{a:?}^{n}"),
            Expr::Sin(a) => write!(f, "sin({a:?})"),
            Expr::Cos(a) => write!(f, "cos({a:?})"),
            Expr::Tan(a) => write!(f, "tan({a:?})"),
            Expr::Monotone(m, a) => write!(f, "{}({a:?})", m.name()),
            Expr::Custom(s, args) => write!(f, "{}{args:?}", s.name()),
        }
    }
}
