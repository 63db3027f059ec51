//! General and affine control systems on ℝⁿ.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::compiled::Compiled;
use crate::expr::{is_symbolic_zero, mk_add, mk_mul, EvalError, Expr, Var};
use crate::field::VectorField;

/// Function names reserved by the expression grammar.
pub const RESERVED: [&str; 3] = ["sin", "cos", "exp"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("invalid identifier `{0}`")]
    InvalidIdentifier(String),
    #[error("`{0}` is a reserved function name")]
    Reserved(String),
    #[error("name `{0}` declared more than once")]
    DuplicateName(String),
    #[error("expected {expected} right-hand sides, got {got}")]
    RhsLength { expected: usize, got: usize },
    #[error("equation {equation} references {var:?}, outside the declared dimensions")]
    VarOutOfRange { equation: usize, var: Var },
    #[error("equation {0} divides by a literal zero")]
    ZeroDenominator(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `ẋ = f(x, u)` with `n` named states and `m` named inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSystem {
    name: String,
    state_names: Vec<String>,
    input_names: Vec<String>,
    rhs: Vec<Expr>,
}

impl ControlSystem {
    pub fn new(
        name: impl Into<String>,
        state_names: Vec<String>,
        input_names: Vec<String>,
        rhs: Vec<Expr>,
    ) -> Result<Self, SystemError> {
        let name = name.into();
        if !is_identifier(&name) {
            return Err(SystemError::InvalidIdentifier(name));
        }
        let mut seen = HashSet::new();
        for s in state_names.iter().chain(&input_names) {
            if !is_identifier(s) {
                return Err(SystemError::InvalidIdentifier(s.clone()));
            }
            if RESERVED.contains(&s.as_str()) {
                return Err(SystemError::Reserved(s.clone()));
            }
            if !seen.insert(s.as_str()) {
                return Err(SystemError::DuplicateName(s.clone()));
            }
        }
        if rhs.len() != state_names.len() {
            return Err(SystemError::RhsLength {
                expected: state_names.len(),
                got: rhs.len(),
            });
        }
        let (n, m) = (state_names.len(), input_names.len());
        for (k, e) in rhs.iter().enumerate() {
            let mut bad = None;
            e.for_each_var(&mut |v| {
                let ok = match v {
                    Var::State(i) => i < n,
                    Var::Input(i) => i < m,
                };
                if !ok && bad.is_none() {
                    bad = Some(v);
                }
            });
            if let Some(var) = bad {
                return Err(SystemError::VarOutOfRange { equation: k, var });
            }
            if e.has_zero_denominator() {
                return Err(SystemError::ZeroDenominator(k));
            }
        }
        Ok(ControlSystem {
            name,
            state_names,
            input_names,
            rhs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.state_names.len()
    }

    pub fn m(&self) -> usize {
        self.input_names.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn rhs(&self) -> &[Expr] {
        &self.rhs
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Result<Self, SystemError> {
        let name = name.into();
        if !is_identifier(&name) {
            return Err(SystemError::InvalidIdentifier(name));
        }
        self.name = name;
        Ok(self)
    }

    /// Same dimensions and the same right-hand sides by variable index;
    /// names are ignored.
    pub fn same_up_to_renaming(&self, other: &ControlSystem) -> bool {
        self.n() == other.n() && self.m() == other.m() && self.rhs == other.rhs
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SystemError> {
        if x.len() != self.n() {
            return Err(SystemError::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        if u.len() != self.m() {
            return Err(SystemError::DimensionMismatch {
                expected: self.m(),
                got: u.len(),
            });
        }
        Ok(self
            .rhs
            .iter()
            .map(|e| e.eval(x, Some(u)))
            .collect::<Result<_, _>>()?)
    }

    pub fn compile(&self) -> Compiled {
        Compiled::new(&self.rhs, self.n(), self.m())
    }

    /// The right-hand side as a parametric vector field.
    pub fn field(&self) -> VectorField {
        VectorField::parametric(self.rhs.clone())
    }

    /// The field `f(·, u)` for a frozen input value.
    pub fn frozen_field(&self, u: &[f64]) -> VectorField {
        VectorField::new(self.rhs.iter().map(|e| e.substitute_inputs(u)).collect())
            .expect("inputs substituted")
    }
}

/// `ẋ = f(x) + Σ g_i(x) u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSystem {
    pub name: String,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub drift: VectorField,
    pub inputs_g: Vec<VectorField>,
}

impl AffineSystem {
    pub fn n(&self) -> usize {
        self.state_names.len()
    }

    pub fn m(&self) -> usize {
        self.input_names.len()
    }

    /// Drift followed by the input fields.
    pub fn fields(&self) -> impl Iterator<Item = &VectorField> {
        std::iter::once(&self.drift).chain(self.inputs_g.iter())
    }

    /// Recombine into `f(x) + Σ g_i(x) u_i`.
    pub fn to_control_system(&self) -> ControlSystem {
        let rhs = (0..self.n())
            .map(|k| {
                self.inputs_g.iter().enumerate().fold(
                    self.drift.components()[k].clone(),
                    |acc, (i, g)| mk_add(acc, mk_mul(g.components()[k].clone(), Expr::input(i))),
                )
            })
            .collect();
        ControlSystem::new(
            self.name.clone(),
            self.state_names.clone(),
            self.input_names.clone(),
            rhs,
        )
        .expect("affine parts come from a valid system")
    }
}

/// The first place a system fails to be affine in its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Error)]
#[error("not affine: equation d{state} has nonzero second derivative in ({input}, {input2})")]
pub struct NotAffine {
    pub equation: usize,
    pub state: String,
    pub input: String,
    /// Second input of the offending mixed derivative; equals `input` for a
    /// pure second derivative.
    pub input2: String,
}

/// Split a system into drift and input fields if every right-hand side is
/// affine in the inputs.
///
/// Affinity is decided by [`is_symbolic_zero`] on all second input
/// derivatives, so it is probabilistic for expressions the rewriter cannot
/// reduce to a literal zero.
pub fn to_affine(sys: &ControlSystem) -> Result<AffineSystem, NotAffine> {
    let (n, m) = (sys.n(), sys.m());
    let mut first_derivs = vec![Vec::with_capacity(m); n];
    for (k, e) in sys.rhs().iter().enumerate() {
        for i in 0..m {
            let d = e.diff(Var::Input(i));
            for j in i..m {
                let dd = d.diff(Var::Input(j));
                if !is_symbolic_zero(&dd, n, m) {
                    return Err(NotAffine {
                        equation: k,
                        state: sys.state_names()[k].clone(),
                        input: sys.input_names()[i].clone(),
                        input2: sys.input_names()[j].clone(),
                    });
                }
            }
            first_derivs[k].push(d);
        }
    }
    let zeros = vec![0.0; m];
    let drift = VectorField::new(sys.rhs().iter().map(|e| e.substitute_inputs(&zeros)).collect())
        .expect("inputs substituted");
    // g_i does not depend on u, so substituting zero only removes leftovers
    // the rewriter could not cancel.
    let inputs_g = (0..m)
        .map(|i| {
            VectorField::new(
                first_derivs
                    .iter()
                    .map(|ds| ds[i].substitute_inputs(&zeros))
                    .collect(),
            )
            .expect("inputs substituted")
        })
        .collect();
    Ok(AffineSystem {
        name: sys.name().to_string(),
        state_names: sys.state_names().to_vec(),
        input_names: sys.input_names().to_vec(),
        drift,
        inputs_g,
    })
}
