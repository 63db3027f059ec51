//! Vector fields on ℝⁿ, Jacobians and Lie brackets.

use thiserror::Error;

use crate::expr::{mk_add, mk_mul, mk_neg, mk_sub, EvalError, Expr, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parametric field evaluated without input values")]
    MissingInput,
    #[error("input values supplied for a non-parametric field")]
    UnexpectedInput,
    #[error("component {0} references an input but the field is not parametric")]
    InputInNonParametric(usize),
    #[error("operation requires a non-parametric field")]
    Parametric,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A list of `n` component expressions.
///
/// Non-parametric fields depend on the state only. Parametric fields may
/// also reference inputs, which must then be supplied on evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Expr>,
    parametric: bool,
}

/// A rectangular grid of expressions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl SymbolicMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Expr) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        SymbolicMatrix { rows, cols, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, EvalError> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).eval(x, None)).collect())
            .collect()
    }

    /// Matrix-vector product `self · v`, simplified.
    pub fn apply(&self, v: &[Expr]) -> Vec<Expr> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                (0..self.cols).fold(Expr::zero(), |acc, j| {
                    mk_add(acc, mk_mul(self.get(i, j).clone(), v[j].clone()))
                })
            })
            .collect()
    }
}

impl VectorField {
    /// A state-only field. Fails if any component references an input.
    pub fn new(components: Vec<Expr>) -> Result<Self, FieldError> {
        if let Some(i) = components.iter().position(Expr::contains_input) {
            return Err(FieldError::InputInNonParametric(i));
        }
        Ok(VectorField {
            components,
            parametric: false,
        })
    }

    pub fn parametric(components: Vec<Expr>) -> Self {
        VectorField {
            components,
            parametric: true,
        }
    }

    pub fn zero(n: usize) -> Self {
        VectorField {
            components: vec![Expr::zero(); n],
            parametric: false,
        }
    }

    /// Unit coordinate field ∂/∂x_i.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut components = vec![Expr::zero(); n];
        components[i] = Expr::one();
        VectorField {
            components,
            parametric: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn is_parametric(&self) -> bool {
        self.parametric
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn into_components(self) -> Vec<Expr> {
        self.components
    }

    pub fn node_count(&self) -> usize {
        self.components.iter().map(Expr::node_count).sum()
    }

    /// True when every component is the literal zero.
    pub fn is_literal_zero(&self) -> bool {
        self.components.iter().all(Expr::is_const_zero)
    }

    pub fn simplify(&self) -> Self {
        VectorField {
            components: self.components.iter().map(Expr::simplify).collect(),
            parametric: self.parametric,
        }
    }

    pub fn negate(&self) -> Self {
        VectorField {
            components: self.components.iter().cloned().map(mk_neg).collect(),
            parametric: self.parametric,
        }
    }

    /// Evaluate at `x`; `u` must be given exactly when the field is parametric.
    pub fn eval(&self, x: &[f64], u: Option<&[f64]>) -> Result<Vec<f64>, FieldError> {
        if x.len() != self.dim() {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match (self.parametric, u) {
            (true, None) => return Err(FieldError::MissingInput),
            (false, Some(_)) => return Err(FieldError::UnexpectedInput),
            _ => {}
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.eval(x, u))
            .collect::<Result<_, _>>()?)
    }

    /// Jacobian with respect to the state.
    pub fn jacobian_x(&self) -> Result<SymbolicMatrix, FieldError> {
        if self.parametric {
            return Err(FieldError::Parametric);
        }
        let n = self.dim();
        Ok(SymbolicMatrix::from_fn(n, n, |i, j| {
            self.components[i].diff(Var::State(j))
        }))
    }

    /// `[self, other] = (∂other/∂x)·self − (∂self/∂x)·other`.
    pub fn lie_bracket(&self, other: &VectorField) -> Result<VectorField, FieldError> {
        if self.dim() != other.dim() {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let jy = other.jacobian_x()?;
        let jx = self.jacobian_x()?;
        let a = jy.apply(&self.components);
        let b = jx.apply(&other.components);
        Ok(VectorField {
            components: a.into_iter().zip(b).map(|(p, q)| mk_sub(p, q)).collect(),
            parametric: false,
        })
    }
}

/// Free-function form of [`VectorField::lie_bracket`].
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField, FieldError> {
    x.lie_bracket(y)
}
