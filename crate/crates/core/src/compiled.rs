//! Flattened postfix evaluation of expression lists.
//!
//! Tree walking is fine for symbolic work, but reachability sampling evaluates
//! the same right-hand side hundreds of millions of times.

use crate::expr::{EvalError, Expr};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    State(usize),
    Input(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(i32),
    Sin,
    Cos,
    Exp,
}

/// A list of expressions compiled to stack code, evaluated together.
#[derive(Debug, Clone)]
pub struct Compiled {
    code: Vec<Vec<Op>>,
    n: usize,
    m: usize,
    max_stack: usize,
}

fn emit(e: &Expr, out: &mut Vec<Op>) {
    match e {
        Expr::Const(c) => out.push(Op::Const(*c)),
        Expr::State(i) => out.push(Op::State(*i)),
        Expr::Input(i) => out.push(Op::Input(*i)),
        Expr::Neg(a) => {
            emit(a, out);
            out.push(Op::Neg);
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, out);
            emit(b, out);
            out.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
        Expr::Pow(a, k) => {
            emit(a, out);
            out.push(Op::Pow(*k));
        }
        Expr::Sin(a) => {
            emit(a, out);
            out.push(Op::Sin);
        }
        Expr::Cos(a) => {
            emit(a, out);
            out.push(Op::Cos);
        }
        Expr::Exp(a) => {
            emit(a, out);
            out.push(Op::Exp);
        }
    }
}

fn stack_depth(code: &[Op]) -> usize {
    let mut depth = 0usize;
    let mut max = 0usize;
    for op in code {
        match op {
            Op::Const(_) | Op::State(_) | Op::Input(_) => depth += 1,
            Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
            _ => {}
        }
        max = max.max(depth);
    }
    max
}

impl Compiled {
    /// Compile `exprs` for evaluation with `n` states and `m` inputs.
    ///
    /// Panics if an expression references a variable outside those dimensions;
    /// callers compile only validated systems.
    pub fn new(exprs: &[Expr], n: usize, m: usize) -> Compiled {
        let code: Vec<Vec<Op>> = exprs
            .iter()
            .map(|e| {
                let mut ops = Vec::with_capacity(e.node_count());
                emit(e, &mut ops);
                ops
            })
            .collect();
        for ops in &code {
            for op in ops {
                match op {
                    Op::State(i) => assert!(*i < n, "state index {i} out of range"),
                    Op::Input(i) => assert!(*i < m, "input index {i} out of range"),
                    _ => {}
                }
            }
        }
        let max_stack = code.iter().map(|c| stack_depth(c)).max().unwrap_or(0);
        Compiled { code, n, m, max_stack }
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn n_inputs(&self) -> usize {
        self.m
    }

    pub fn scratch(&self) -> Vec<f64> {
        Vec::with_capacity(self.max_stack)
    }

    /// Evaluate every expression at `(x, u)` into `out`.
    pub fn eval_into(
        &self,
        x: &[f64],
        u: &[f64],
        out: &mut [f64],
        stack: &mut Vec<f64>,
    ) -> Result<(), EvalError> {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(u.len(), self.m);
        for (ops, slot) in self.code.iter().zip(out.iter_mut()) {
            stack.clear();
            for op in ops {
                match *op {
                    Op::Const(c) => stack.push(c),
                    Op::State(i) => stack.push(x[i]),
                    Op::Input(i) => stack.push(u[i]),
                    Op::Neg => {
                        let a = stack.last_mut().unwrap();
                        *a = -*a;
                    }
                    Op::Add | Op::Sub | Op::Mul | Op::Div => {
                        let b = stack.pop().unwrap();
                        let a = stack.last_mut().unwrap();
                        match *op {
                            Op::Add => *a += b,
                            Op::Sub => *a -= b,
                            Op::Mul => *a *= b,
                            _ => {
                                if b == 0.0 {
                                    return Err(EvalError::DivisionByZero);
                                }
                                *a /= b
                            }
                        }
                    }
                    Op::Pow(k) => {
                        let a = stack.last_mut().unwrap();
                        if *a == 0.0 && k < 0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        *a = a.powi(k);
                    }
                    Op::Sin => {
                        let a = stack.last_mut().unwrap();
                        *a = a.sin();
                    }
                    Op::Cos => {
                        let a = stack.last_mut().unwrap();
                        *a = a.cos();
                    }
                    Op::Exp => {
                        let a = stack.last_mut().unwrap();
                        *a = a.exp();
                    }
                }
            }
            let v = stack.pop().unwrap();
            if !v.is_finite() {
                return Err(EvalError::NonFinite);
            }
            *slot = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agrees_with_tree_eval() {
        let x0 = Expr::state(0);
        let x1 = Expr::state(1);
        let u = Expr::input(0);
        let exprs = vec![
            x0.clone().sin() * x1.clone().powi(3) - u.clone() / (Expr::constant(2.0) + x0.clone().cos()),
            -(x1.clone().exp()) + u.clone().powi(-2),
        ];
        let c = Compiled::new(&exprs, 2, 1);
        let mut out = [0.0; 2];
        let mut st = c.scratch();
        let x = [0.3, -1.1];
        let uu = [0.7];
        c.eval_into(&x, &uu, &mut out, &mut st).unwrap();
        for (e, v) in exprs.iter().zip(out) {
            assert_eq!(e.eval(&x, Some(&uu)).unwrap(), v);
        }
    }

    #[test]
    fn division_by_zero_reported() {
        let c = Compiled::new(&[Expr::one() / Expr::state(0)], 1, 0);
        let mut out = [0.0];
        let mut st = c.scratch();
        assert_eq!(
            c.eval_into(&[0.0], &[], &mut out, &mut st),
            Err(EvalError::DivisionByZero)
        );
    }
}
