//! Scalar symbolic expressions over state and input variables.
//!
//! An [`Expr`] is an immutable tree. Variables are referenced by index, so the
//! same tree can be printed under different naming schemes; names only live on
//! the owning system.

use std::fmt;
use std::ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// A variable an expression can depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    State(usize),
    Input(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    State(usize),
    Input(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Integer power.
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("state index {index} out of range for dimension {dim}")]
    StateOutOfRange { index: usize, dim: usize },
    #[error("input index {index} out of range for dimension {dim}")]
    InputOutOfRange { index: usize, dim: usize },
    #[error("expression references input u{index} but no input values were supplied")]
    MissingInput { index: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite value produced during evaluation")]
    NonFinite,
}

/// Threshold below which a probed value counts as zero.
pub const ZERO_PROBE_TOL: f64 = 1e-10;
/// Number of random points used by [`is_symbolic_zero`].
pub const ZERO_PROBE_POINTS: usize = 64;
const ZERO_PROBE_SEED: u64 = 0x005e_ed0f_2e70;

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn state(i: usize) -> Expr {
        Expr::State(i)
    }

    pub fn input(i: usize) -> Expr {
        Expr::Input(i)
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    pub fn var(v: Var) -> Expr {
        match v {
            Var::State(i) => Expr::State(i),
            Var::Input(i) => Expr::Input(i),
        }
    }

    pub fn powi(self, k: i32) -> Expr {
        Expr::Pow(Box::new(self), k)
    }

    pub fn sin(self) -> Expr {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Expr {
        Expr::Cos(Box::new(self))
    }

    pub fn exp(self) -> Expr {
        Expr::Exp(Box::new(self))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn is_const_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    /// Evaluate at a state `x` and optional input `u`.
    pub fn eval(&self, x: &[f64], u: Option<&[f64]>) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::State(i) => *x.get(*i).ok_or(EvalError::StateOutOfRange {
                index: *i,
                dim: x.len(),
            })?,
            Expr::Input(i) => {
                let u = u.ok_or(EvalError::MissingInput { index: *i })?;
                *u.get(*i).ok_or(EvalError::InputOutOfRange {
                    index: *i,
                    dim: u.len(),
                })?
            }
            Expr::Neg(a) => -a.eval(x, u)?,
            Expr::Add(a, b) => a.eval(x, u)? + b.eval(x, u)?,
            Expr::Sub(a, b) => a.eval(x, u)? - b.eval(x, u)?,
            Expr::Mul(a, b) => a.eval(x, u)? * b.eval(x, u)?,
            Expr::Div(a, b) => {
                let den = b.eval(x, u)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(x, u)? / den
            }
            Expr::Pow(a, k) => {
                let base = a.eval(x, u)?;
                if base == 0.0 && *k < 0 {
                    return Err(EvalError::DivisionByZero);
                }
                base.powi(*k)
            }
            Expr::Sin(a) => a.eval(x, u)?.sin(),
            Expr::Cos(a) => a.eval(x, u)?.cos(),
            Expr::Exp(a) => a.eval(x, u)?.exp(),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::State(_) | Expr::Input(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => {
                1 + a.node_count()
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.node_count() + b.node_count()
            }
        }
    }

    /// Visit every variable leaf.
    pub fn for_each_var(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Const(_) => {}
            Expr::State(i) => f(Var::State(*i)),
            Expr::Input(i) => f(Var::Input(*i)),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => {
                a.for_each_var(f)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
        }
    }

    pub fn contains_var(&self, v: Var) -> bool {
        let mut found = false;
        self.for_each_var(&mut |w| found |= w == v);
        found
    }

    pub fn contains_input(&self) -> bool {
        let mut found = false;
        self.for_each_var(&mut |w| found |= matches!(w, Var::Input(_)));
        found
    }

    /// Rewrite every variable leaf through `f`. No simplification is applied.
    pub fn map_vars(&self, f: &impl Fn(Var) -> Expr) -> Expr {
        let un = |a: &Expr| Box::new(a.map_vars(f));
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::State(i) => f(Var::State(*i)),
            Expr::Input(i) => f(Var::Input(*i)),
            Expr::Neg(a) => Expr::Neg(un(a)),
            Expr::Add(a, b) => Expr::Add(un(a), un(b)),
            Expr::Sub(a, b) => Expr::Sub(un(a), un(b)),
            Expr::Mul(a, b) => Expr::Mul(un(a), un(b)),
            Expr::Div(a, b) => Expr::Div(un(a), un(b)),
            Expr::Pow(a, k) => Expr::Pow(un(a), *k),
            Expr::Sin(a) => Expr::Sin(un(a)),
            Expr::Cos(a) => Expr::Cos(un(a)),
            Expr::Exp(a) => Expr::Exp(un(a)),
        }
    }

    /// Replace inputs by constants and simplify.
    pub fn substitute_inputs(&self, values: &[f64]) -> Expr {
        self.map_vars(&|v| match v {
            Var::Input(i) => Expr::Const(values[i]),
            Var::State(i) => Expr::State(i),
        })
        .simplify()
    }

    /// Whether any division node has a literal zero denominator.
    pub fn has_zero_denominator(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::State(_) | Expr::Input(_) => false,
            Expr::Div(a, b) => b.is_const_zero() || a.has_zero_denominator() || b.has_zero_denominator(),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => {
                a.has_zero_denominator()
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.has_zero_denominator() || b.has_zero_denominator()
            }
        }
    }

    /// Exact partial derivative, returned simplified.
    pub fn diff(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::State(i) => {
                if var == Var::State(*i) {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Input(i) => {
                if var == Var::Input(*i) {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Neg(a) => mk_neg(a.diff(var)),
            Expr::Add(a, b) => mk_add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => mk_sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => mk_add(
                mk_mul(a.diff(var), (**b).clone()),
                mk_mul((**a).clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                if db.is_const_zero() {
                    mk_div(da, (**b).clone())
                } else {
                    let num = mk_sub(mk_mul(da, (**b).clone()), mk_mul((**a).clone(), db));
                    mk_div(num, mk_pow((**b).clone(), 2))
                }
            }
            Expr::Pow(a, k) => {
                let k = *k;
                if k == 0 {
                    return Expr::zero();
                }
                let outer = mk_mul(Expr::Const(k as f64), mk_pow((**a).clone(), k - 1));
                mk_mul(outer, a.diff(var))
            }
            Expr::Sin(a) => mk_mul(mk_cos((**a).clone()), a.diff(var)),
            Expr::Cos(a) => mk_neg(mk_mul(mk_sin((**a).clone()), a.diff(var))),
            Expr::Exp(a) => mk_mul(mk_exp((**a).clone()), a.diff(var)),
        }
    }

    /// One bottom-up pass of local rewrites: identities and constant folding.
    /// Not a canonical form.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::State(_) | Expr::Input(_) => self.clone(),
            Expr::Neg(a) => mk_neg(a.simplify()),
            Expr::Add(a, b) => mk_add(a.simplify(), b.simplify()),
            Expr::Sub(a, b) => mk_sub(a.simplify(), b.simplify()),
            Expr::Mul(a, b) => mk_mul(a.simplify(), b.simplify()),
            Expr::Div(a, b) => mk_div(a.simplify(), b.simplify()),
            Expr::Pow(a, k) => mk_pow(a.simplify(), *k),
            Expr::Sin(a) => mk_sin(a.simplify()),
            Expr::Cos(a) => mk_cos(a.simplify()),
            Expr::Exp(a) => mk_exp(a.simplify()),
        }
    }

    /// Borrow with a naming scheme for printing in DSL syntax.
    pub fn display<'a>(&'a self, states: &'a [String], inputs: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay {
            expr: self,
            states,
            inputs,
        }
    }
}

fn fold(v: f64) -> Option<Expr> {
    v.is_finite().then_some(Expr::Const(v))
}

pub(crate) fn mk_neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

pub(crate) fn mk_add(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(e) = fold(x + y) {
            return e;
        }
    }
    if a.is_const_zero() {
        return b;
    }
    if b.is_const_zero() {
        return a;
    }
    match b {
        Expr::Neg(inner) => mk_sub(a, *inner),
        b => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mk_sub(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(e) = fold(x - y) {
            return e;
        }
    }
    if b.is_const_zero() {
        return a;
    }
    if a.is_const_zero() {
        return mk_neg(b);
    }
    if a == b {
        return Expr::zero();
    }
    match b {
        Expr::Neg(inner) => mk_add(a, *inner),
        b => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mk_mul(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(e) = fold(x * y) {
            return e;
        }
    }
    if a.is_const_zero() || b.is_const_zero() {
        return Expr::zero();
    }
    if a.is_const_one() {
        return b;
    }
    if b.is_const_one() {
        return a;
    }
    // constants to the left
    let (a, b) = match (&a, &b) {
        (_, Expr::Const(_)) if a.as_const().is_none() => (b, a),
        _ => (a, b),
    };
    if let Some(c) = a.as_const() {
        if c == -1.0 {
            return mk_neg(b);
        }
        if let Expr::Mul(inner_a, inner_b) = &b {
            if let Some(d) = inner_a.as_const() {
                if let Some(e) = fold(c * d) {
                    return mk_mul(e, (**inner_b).clone());
                }
            }
        }
    }
    Expr::Mul(Box::new(a), Box::new(b))
}

pub(crate) fn mk_div(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if y != 0.0 {
            if let Some(e) = fold(x / y) {
                return e;
            }
        }
    }
    if b.is_const_one() {
        return a;
    }
    if a.is_const_zero() && !b.is_const_zero() {
        return Expr::zero();
    }
    Expr::Div(Box::new(a), Box::new(b))
}

pub(crate) fn mk_pow(a: Expr, k: i32) -> Expr {
    if k == 0 {
        return Expr::one();
    }
    if k == 1 {
        return a;
    }
    if let Some(c) = a.as_const() {
        if c != 0.0 || k > 0 {
            if let Some(e) = fold(c.powi(k)) {
                return e;
            }
        }
    }
    Expr::Pow(Box::new(a), k)
}

pub(crate) fn mk_sin(a: Expr) -> Expr {
    match a.as_const() {
        Some(c) => Expr::Const(c.sin()),
        None => Expr::Sin(Box::new(a)),
    }
}

pub(crate) fn mk_cos(a: Expr) -> Expr {
    match a.as_const() {
        Some(c) => Expr::Const(c.cos()),
        None => Expr::Cos(Box::new(a)),
    }
}

pub(crate) fn mk_exp(a: Expr) -> Expr {
    match a.as_const().and_then(|c| fold(c.exp())) {
        Some(e) => e,
        None => Expr::Exp(Box::new(a)),
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(rhs))
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// Probabilistic zero test.
///
/// An expression is treated as zero if it simplifies to the literal `0`, or if
/// its magnitude stays below [`ZERO_PROBE_TOL`] at [`ZERO_PROBE_POINTS`] points
/// drawn uniformly from `[-2, 2]^(n+m)` with a fixed seed. Points where the
/// expression cannot be evaluated are skipped; if none can be evaluated the
/// answer is `false`.
pub fn is_symbolic_zero(e: &Expr, n: usize, m: usize) -> bool {
    let s = e.simplify();
    if s.is_const_zero() {
        return true;
    }
    if let Some(c) = s.as_const() {
        return c.abs() < ZERO_PROBE_TOL;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ZERO_PROBE_SEED);
    let mut x = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut evaluated = 0;
    for _ in 0..ZERO_PROBE_POINTS {
        x.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        u.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        match s.eval(&x, Some(&u)) {
            Ok(v) if v.abs() >= ZERO_PROBE_TOL => return false,
            Ok(_) => evaluated += 1,
            Err(_) => {}
        }
    }
    evaluated > 0
}

/// Binding strength used for parenthesization.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Pow(..) => 3,
        Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 4,
        Expr::Neg(_) => 4,
        _ => 5,
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    states: &'a [String],
    inputs: &'a [String],
}

impl ExprDisplay<'_> {
    fn sub<'b>(&'b self, e: &'b Expr) -> ExprDisplay<'b> {
        ExprDisplay {
            expr: e,
            states: self.states,
            inputs: self.inputs,
        }
    }

    fn write_min(&self, f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
        if precedence(e) < min {
            write!(f, "({})", self.sub(e))
        } else {
            write!(f, "{}", self.sub(e))
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::State(i) => match self.states.get(*i) {
                Some(name) => f.write_str(name),
                None => write!(f, "x{}", i + 1),
            },
            Expr::Input(i) => match self.inputs.get(*i) {
                Some(name) => f.write_str(name),
                None => write!(f, "u{}", i + 1),
            },
            Expr::Neg(a) => {
                // `-<number>` reads back as a negative literal, so a negated
                // literal keeps its parentheses.
                if matches!(**a, Expr::Const(_)) {
                    write!(f, "-({})", self.sub(a))
                } else {
                    f.write_str("-")?;
                    self.write_min(f, a, 4)
                }
            }
            Expr::Add(a, b) => {
                self.write_min(f, a, 1)?;
                f.write_str(" + ")?;
                self.write_min(f, b, 2)
            }
            Expr::Sub(a, b) => {
                self.write_min(f, a, 1)?;
                f.write_str(" - ")?;
                self.write_min(f, b, 2)
            }
            Expr::Mul(a, b) => {
                self.write_min(f, a, 2)?;
                f.write_str("*")?;
                self.write_min(f, b, 3)
            }
            Expr::Div(a, b) => {
                self.write_min(f, a, 2)?;
                f.write_str("/")?;
                self.write_min(f, b, 3)
            }
            Expr::Pow(a, k) => {
                self.write_min(f, a, 4)?;
                write!(f, "^{k}")
            }
            Expr::Sin(a) => write!(f, "sin({})", self.sub(a)),
            Expr::Cos(a) => write!(f, "cos({})", self.sub(a)),
            Expr::Exp(a) => write!(f, "exp({})", self.sub(a)),
        }
    }
}
