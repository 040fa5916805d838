//! Lipschitz cylinder payoffs ξ = φ(B_{t₁}, B_{t₂}−B_{t₁}, …): the
//! expression AST, its evaluator and validator, and the payoff type
//! pairing an expression with its ordered time points.

mod parse;

pub use parse::parse_payoff;

use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Func {
    Abs,
    Min,
    Max,
    Exp,
    Sin,
    Cos,
    Clamp,
}

impl Func {
    pub fn name(&self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Clamp => "clamp",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Func::Abs | Func::Exp | Func::Sin | Func::Cos => 1,
            Func::Min | Func::Max => 2,
            Func::Clamp => 3,
        }
    }
}

/// Expression tree over the increment variables b1..bn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Lit(f64),
    /// Zero-based increment index: `Var(0)` is b1.
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    /// Integer power, exponent >= 0.
    Pow(Box<Expr>, u32),
}

/// A validated payoff expression. Construction runs the structural
/// Lipschitz checks; evaluation is total on matching-arity inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffExpr {
    expr: Expr,
    n_vars: usize,
}

impl PayoffExpr {
    pub fn new(expr: Expr) -> Result<Self> {
        validate(&expr)?;
        let n_vars = max_var(&expr).map_or(0, |v| v + 1);
        Ok(Self { expr, n_vars })
    }

    /// Number of increment variables (the largest index referenced).
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, increments: &[f64]) -> Result<f64> {
        if increments.len() < self.n_vars {
            return Err(GmError::Arity {
                expected: self.n_vars,
                got: increments.len(),
            });
        }
        Ok(eval_expr(&self.expr, increments))
    }

    /// Canonical printed form; parsing it back yields the same tree.
    pub fn print(&self) -> String {
        print_expr(&self.expr, 0)
    }

    /// True when the expression is bounded uniformly in its variables.
    /// Unbounded-but-locally-Lipschitz payoffs (like b1*b1) are admitted
    /// on the truncated PDE domain; callers may warn on them.
    pub fn is_bounded(&self) -> bool {
        is_bounded(&self.expr)
    }

    pub fn negated(&self) -> Self {
        Self {
            expr: Expr::Neg(Box::new(self.expr.clone())),
            n_vars: self.n_vars,
        }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            expr: Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Lit(lambda)),
                Box::new(self.expr.clone()),
            ),
            n_vars: self.n_vars,
        }
    }

    pub fn sum(&self, other: &Self) -> Self {
        Self {
            expr: Expr::Bin(
                BinOp::Add,
                Box::new(self.expr.clone()),
                Box::new(other.expr.clone()),
            ),
            n_vars: self.n_vars.max(other.n_vars),
        }
    }
}

fn max_var(e: &Expr) -> Option<usize> {
    match e {
        Expr::Lit(_) => None,
        Expr::Var(i) => Some(*i),
        Expr::Neg(a) => max_var(a),
        Expr::Bin(_, a, b) => max_var(a).max(max_var(b)),
        Expr::Call(_, args) => args.iter().filter_map(max_var).max(),
        Expr::Pow(a, _) => max_var(a),
    }
}

/// Literal value of an expression, looking through unary negation.
fn literal_value(e: &Expr) -> Option<f64> {
    match e {
        Expr::Lit(v) => Some(*v),
        Expr::Neg(inner) => literal_value(inner).map(|v| -v),
        _ => None,
    }
}

fn contains_var(e: &Expr) -> bool {
    max_var(e).is_some()
}

/// (bounded below, bounded above), uniformly in the variables.
fn bounds(e: &Expr) -> (bool, bool) {
    match e {
        Expr::Lit(_) => (true, true),
        Expr::Var(_) => (false, false),
        Expr::Neg(a) => {
            let (lo, hi) = bounds(a);
            (hi, lo)
        }
        Expr::Bin(BinOp::Add, a, b) => {
            let ((al, ah), (bl, bh)) = (bounds(a), bounds(b));
            (al && bl, ah && bh)
        }
        Expr::Bin(BinOp::Sub, a, b) => {
            let ((al, ah), (bl, bh)) = (bounds(a), bounds(b));
            (al && bh, ah && bl)
        }
        Expr::Bin(BinOp::Mul, a, b) => {
            let full = |(l, h): (bool, bool)| l && h;
            if full(bounds(a)) && full(bounds(b)) {
                (true, true)
            } else {
                (false, false)
            }
        }
        Expr::Bin(BinOp::Div, a, b) => {
            let (al, ah) = bounds(a);
            match b.as_ref() {
                Expr::Lit(v) if *v < 0.0 => (ah, al),
                _ => (al, ah),
            }
        }
        Expr::Call(Func::Sin | Func::Cos | Func::Clamp, _) => (true, true),
        Expr::Call(Func::Min, args) => {
            let ((al, ah), (bl, bh)) = (bounds(&args[0]), bounds(&args[1]));
            (al && bl, ah || bh)
        }
        Expr::Call(Func::Max, args) => {
            let ((al, ah), (bl, bh)) = (bounds(&args[0]), bounds(&args[1]));
            (al || bl, ah && bh)
        }
        Expr::Call(Func::Abs, args) => {
            let (lo, hi) = bounds(&args[0]);
            (true, lo && hi)
        }
        Expr::Call(Func::Exp, args) => (true, bounds(&args[0]).1),
        Expr::Pow(a, k) => {
            let (lo, hi) = bounds(a);
            if lo && hi {
                (true, true)
            } else {
                (k % 2 == 0, false)
            }
        }
    }
}

fn is_bounded(e: &Expr) -> bool {
    let (lo, hi) = bounds(e);
    lo && hi
}

/// Structural Lipschitz check: division only by nonzero literals;
/// exp and pow only of variable-free or clamped arguments.
fn validate(e: &Expr) -> Result<()> {
    match e {
        Expr::Lit(v) => {
            if !v.is_finite() {
                return Err(GmError::Lipschitz(format!("non-finite literal {v}")));
            }
        }
        Expr::Var(_) => {}
        Expr::Neg(a) => validate(a)?,
        Expr::Bin(op, a, b) => {
            validate(a)?;
            validate(b)?;
            if *op == BinOp::Div {
                match literal_value(b) {
                    Some(v) if v != 0.0 => {}
                    Some(_) => {
                        return Err(GmError::Lipschitz("division by zero literal".into()))
                    }
                    None => {
                        return Err(GmError::Lipschitz(format!(
                            "division only by nonzero literals, got divisor `{}`",
                            print_expr(b, 0)
                        )))
                    }
                }
            }
        }
        Expr::Call(f, args) => {
            for a in args {
                validate(a)?;
            }
            if *f == Func::Exp {
                let arg = &args[0];
                if contains_var(arg) && !matches!(arg, Expr::Call(Func::Clamp, _)) {
                    return Err(GmError::Lipschitz(format!(
                        "unclamped exp of a variable expression `{}`",
                        print_expr(arg, 0)
                    )));
                }
            }
            if *f == Func::Clamp {
                match (literal_value(&args[1]), literal_value(&args[2])) {
                    (Some(lo), Some(hi)) if lo <= hi => {}
                    _ => {
                        return Err(GmError::Lipschitz(
                            "clamp bounds must be literals with lo <= hi".into(),
                        ))
                    }
                }
            }
        }
        Expr::Pow(a, k) => {
            validate(a)?;
            if *k >= 2 && contains_var(a) && !matches!(a.as_ref(), Expr::Call(Func::Clamp, _)) {
                return Err(GmError::Lipschitz(format!(
                    "unclamped pow of a variable expression `{}`",
                    print_expr(a, 0)
                )));
            }
        }
    }
    Ok(())
}

fn eval_expr(e: &Expr, vars: &[f64]) -> f64 {
    match e {
        Expr::Lit(v) => *v,
        Expr::Var(i) => vars[*i],
        Expr::Neg(a) => -eval_expr(a, vars),
        Expr::Bin(op, a, b) => {
            let (x, y) = (eval_expr(a, vars), eval_expr(b, vars));
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
            }
        }
        Expr::Call(f, args) => {
            let vals: Vec<f64> = args.iter().map(|a| eval_expr(a, vars)).collect();
            match f {
                Func::Abs => vals[0].abs(),
                Func::Min => vals[0].min(vals[1]),
                Func::Max => vals[0].max(vals[1]),
                Func::Exp => vals[0].exp(),
                Func::Sin => vals[0].sin(),
                Func::Cos => vals[0].cos(),
                Func::Clamp => vals[0].clamp(vals[1], vals[2]),
            }
        }
        Expr::Pow(a, k) => eval_expr(a, vars).powi(*k as i32),
    }
}

fn fmt_lit(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:?}")
    }
}

// Precedence: 0 additive, 1 multiplicative, 2 unary, 3 power/atom.
fn print_expr(e: &Expr, parent_prec: u8) -> String {
    let (s, prec) = match e {
        Expr::Lit(v) => (fmt_lit(*v), 3),
        Expr::Var(i) => (format!("b{}", i + 1), 3),
        Expr::Neg(a) => (format!("-{}", print_expr(a, 2)), 2),
        Expr::Bin(op, a, b) => {
            let (sym, prec) = match op {
                BinOp::Add => ("+", 0),
                BinOp::Sub => ("-", 0),
                BinOp::Mul => ("*", 1),
                BinOp::Div => ("/", 1),
            };
            // Right operand of - and / needs one level more.
            let rp = match op {
                BinOp::Sub | BinOp::Div => prec + 1,
                _ => prec,
            };
            (
                format!("{} {} {}", print_expr(a, prec), sym, print_expr(b, rp)),
                prec,
            )
        }
        Expr::Call(f, args) => {
            let inner: Vec<String> = args.iter().map(|a| print_expr(a, 0)).collect();
            (format!("{}({})", f.name(), inner.join(", ")), 3)
        }
        Expr::Pow(a, k) => (format!("pow({}, {})", print_expr(a, 0), k), 3),
    };
    if prec < parent_prec {
        format!("({s})")
    } else {
        s
    }
}

/// Ordered time points 0 ≤ t₁ < … < t_n ≤ T together with a payoff
/// expression in the n increment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderPayoff {
    times: Vec<f64>,
    expr: PayoffExpr,
    horizon: f64,
}

impl CylinderPayoff {
    pub fn new(times: Vec<f64>, expr: PayoffExpr, horizon: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(GmError::InvalidPayoff("need at least one time point".into()));
        }
        if times[0] < 0.0 || !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(GmError::InvalidPayoff(
                "time points must satisfy 0 <= t1 < t2 < ...".into(),
            ));
        }
        if *times.last().unwrap() > horizon {
            return Err(GmError::InvalidPayoff(format!(
                "last time point exceeds horizon {horizon}"
            )));
        }
        if expr.n_vars() > times.len() {
            return Err(GmError::InvalidPayoff(format!(
                "expression references b{} but only {} time points given",
                expr.n_vars(),
                times.len()
            )));
        }
        Ok(Self {
            times,
            expr,
            horizon,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn expr(&self) -> &PayoffExpr {
        &self.expr
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_increments(&self) -> usize {
        self.times.len()
    }

    pub fn negated(&self) -> Self {
        Self {
            times: self.times.clone(),
            expr: self.expr.negated(),
            horizon: self.horizon,
        }
    }
}

/// Evaluate a payoff expression on a list of increments.
pub fn eval_payoff(expr: &PayoffExpr, increments: &[f64]) -> Result<f64> {
    if increments.len() != expr.n_vars() && expr.n_vars() > 0 {
        return Err(GmError::Arity {
            expected: expr.n_vars(),
            got: increments.len(),
        });
    }
    expr.eval(increments)
}
