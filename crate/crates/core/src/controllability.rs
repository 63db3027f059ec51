//! Controllability certificates: the Kalman rank test for linear systems and
//! the Lie-algebra rank condition for affine ones.

use nalgebra::{DMatrix, Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{is_symbolic_zero, EvalError, Var};
use crate::field::{FieldError, VectorField};
use crate::system::AffineSystem;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Numerical rank of `m`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let top = sv.max();
    if !(top > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// `ẋ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Why an affine system has no linear realization.
#[derive(Debug, Clone, PartialEq, Serialize, Error)]
#[error("not linear: {field} component d{state}: {reason}")]
pub struct NotLinear {
    /// `f` for the drift, `g1`, `g2`, ... for input fields.
    pub field: String,
    pub state: String,
    pub reason: String,
}

fn field_name(k: usize) -> String {
    if k == 0 {
        "f".into()
    } else {
        format!("g{k}")
    }
}

/// Extract `(A, B)` when the drift is linear in the state and every input
/// field is constant.
pub fn linear_of(aff: &AffineSystem) -> Result<LinearRealization, NotLinear> {
    let n = aff.n();
    let origin = vec![0.0; n];
    let fail = |field: usize, state: usize, reason: &str| NotLinear {
        field: field_name(field),
        state: aff.state_names[state].clone(),
        reason: reason.into(),
    };
    let mut a = DMatrix::zeros(n, n);
    for (i, c) in aff.drift.components().iter().enumerate() {
        match c.eval(&origin, None) {
            Ok(0.0) => {}
            Ok(_) => return Err(fail(0, i, "nonzero at the origin")),
            Err(_) => return Err(fail(0, i, "undefined at the origin")),
        }
        for j in 0..n {
            let d = c.diff(Var::State(j));
            if (0..n).any(|k| !is_symbolic_zero(&d.diff(Var::State(k)), n, 0)) {
                return Err(fail(0, i, "state Jacobian is not constant"));
            }
            a[(i, j)] = d
                .eval(&origin, None)
                .map_err(|_| fail(0, i, "undefined at the origin"))?;
        }
    }
    let m = aff.m();
    let mut b = DMatrix::zeros(n, m);
    for (k, g) in aff.inputs_g.iter().enumerate() {
        for (i, c) in g.components().iter().enumerate() {
            if (0..n).any(|j| !is_symbolic_zero(&c.diff(Var::State(j)), n, 0)) {
                return Err(fail(k + 1, i, "input field is not constant"));
            }
            b[(i, k)] = c
                .eval(&origin, None)
                .map_err(|_| fail(k + 1, i, "undefined at the origin"))?;
        }
    }
    Ok(LinearRealization { a, b })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KalmanVerdict {
    pub rank: usize,
    pub n: usize,
    pub controllable: bool,
}

/// `[B, AB, …, A^{n−1}B]`.
pub fn controllability_matrix(lin: &LinearRealization) -> DMatrix<f64> {
    let (n, m) = (lin.a.nrows(), lin.b.ncols());
    let mut c = DMatrix::zeros(n, n * m);
    let mut block = lin.b.clone();
    for k in 0..n {
        c.columns_mut(k * m, m).copy_from(&block);
        block = &lin.a * block;
    }
    c
}

pub fn kalman_rank(lin: &LinearRealization) -> KalmanVerdict {
    let n = lin.a.nrows();
    let rank = numerical_rank(&controllability_matrix(lin));
    KalmanVerdict {
        rank,
        n,
        controllable: rank == n,
    }
}

/// Result of folding the fully actuated third state back into an input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reduction3to2 {
    /// `None` when `a13 = a23 = 0`: the first two states never see the input.
    pub abar: Option<[[f64; 2]; 2]>,
    pub controllable: bool,
}

/// For `ẋ = A x + (0,0,1)ᵀ u`: with `Â` the upper-left block and
/// `P = [[a23, −a13], [a13, a23]]`, the system is controllable iff
/// `(PÂP⁻¹)₁₂ ≠ 0`.
pub fn kalman_reduce_3to2(a: &Matrix3<f64>) -> Reduction3to2 {
    let (a13, a23) = (a[(0, 2)], a[(1, 2)]);
    if a13 == 0.0 && a23 == 0.0 {
        return Reduction3to2 {
            abar: None,
            controllable: false,
        };
    }
    let p = Matrix2::new(a23, -a13, a13, a23);
    let ahat = a.fixed_view::<2, 2>(0, 0).into_owned();
    let pinv = p.try_inverse().expect("det P = a13² + a23² > 0");
    let abar = p * ahat * pinv;
    let controllable = abar[(0, 1)].abs() > RANK_TOL * abar.norm();
    Reduction3to2 {
        abar: Some([[abar[(0, 0)], abar[(0, 1)]], [abar[(1, 0)], abar[(1, 1)]]]),
        controllable,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LarcError {
    #[error("point has {got} coordinates, system has {expected} states")]
    Dimension { expected: usize, got: usize },
    #[error("depth must be at least 1")]
    Depth,
    #[error("generator {name} cannot be evaluated at the point: {source}")]
    Eval {
        name: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub const DEFAULT_NODE_BUDGET: usize = 2_000_000;
const PROBES: usize = 32;
const PROBE_SEED: u64 = 0x1a5c;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LarcReport {
    pub point: Vec<f64>,
    pub depth: usize,
    /// Deepest bracket level actually generated.
    pub levels_explored: usize,
    pub rank: usize,
    pub n: usize,
    pub full_rank: bool,
    /// Formation of every retained field, e.g. `[f,[f,g1]]`.
    pub brackets: Vec<String>,
    /// The expression-size budget ran out before `depth` was reached.
    pub truncated: bool,
    pub verdict: String,
}

struct Kept {
    name: String,
    field: VectorField,
}

/// Incremental orthonormal basis for the stacked-evaluation span test.
struct Span {
    basis: Vec<Vec<f64>>,
}

impl Span {
    /// Add `v` if it is not numerically in the current span.
    fn try_add(&mut self, mut v: Vec<f64>) -> bool {
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm0 > 0.0) || !norm0.is_finite() {
            return false;
        }
        // two passes of Gram–Schmidt for stability
        for _ in 0..2 {
            for q in &self.basis {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if r <= 1e-8 * norm0 {
            return false;
        }
        v.iter_mut().for_each(|a| *a /= r);
        self.basis.push(v);
        true
    }
}

/// Lie-algebra rank at `x` with the default node budget.
pub fn larc(aff: &AffineSystem, x: &[f64], max_depth: usize) -> Result<LarcReport, LarcError> {
    larc_with_budget(aff, x, max_depth, DEFAULT_NODE_BUDGET)
}

/// Generate left-normed brackets `[Z, W]` of the drift and input fields,
/// level by level, and report the rank of their values at `x`.
///
/// A candidate is retained only if its values at `x` and at fixed random
/// probes around `x`, stacked into one vector, are not a constant linear
/// combination of those of retained fields. Brackets are bilinear, so every
/// discarded candidate's descendants stay in the span of retained ones.
pub fn larc_with_budget(
    aff: &AffineSystem,
    x: &[f64],
    max_depth: usize,
    node_budget: usize,
) -> Result<LarcReport, LarcError> {
    let n = aff.n();
    if x.len() != n {
        return Err(LarcError::Dimension {
            expected: n,
            got: x.len(),
        });
    }
    if max_depth == 0 {
        return Err(LarcError::Depth);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let mut points = vec![x.to_vec()];
    for _ in 0..PROBES {
        points.push(x.iter().map(|&c| c + rng.random_range(-1.0..1.0)).collect());
    }
    let stacked = |vf: &VectorField, name: &str| -> Result<(Vec<f64>, Vec<f64>), LarcError> {
        let at_x = vf
            .components()
            .iter()
            .map(|c| c.eval(x, None))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| LarcError::Eval {
                name: name.to_string(),
                source,
            })?;
        let mut all = at_x.clone();
        for p in &points[1..] {
            // a probe landing on a singularity just contributes nothing
            all.extend(vf.components().iter().map(|c| c.eval(p, None).unwrap_or(0.0)));
        }
        Ok((at_x, all))
    };

    let base: Vec<Kept> = aff
        .fields()
        .enumerate()
        .map(|(k, f)| Kept {
            name: field_name(k),
            field: f.simplify(),
        })
        .collect();
    let mut span = Span { basis: Vec::new() };
    let mut kept_values: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut frontier: Vec<Kept> = Vec::new();
    for b in &base {
        let (at_x, all) = stacked(&b.field, &b.name)?;
        if span.try_add(all) {
            kept_values.push(at_x);
            names.push(b.name.clone());
            frontier.push(Kept {
                name: b.name.clone(),
                field: b.field.clone(),
            });
        }
    }
    let rank_now = |vals: &[Vec<f64>]| {
        numerical_rank(&DMatrix::from_fn(n, vals.len(), |i, j| vals[j][i]))
    };

    let mut nodes: usize = base.iter().map(|b| b.field.node_count()).sum();
    let mut levels = 1;
    let mut truncated = false;
    'levels: for _level in 2..=max_depth {
        if frontier.is_empty() || rank_now(&kept_values) == n {
            break;
        }
        let mut next = Vec::new();
        for z in &base {
            for w in &frontier {
                if z.name == w.name {
                    continue;
                }
                let field = z.field.lie_bracket(&w.field)?;
                nodes += field.node_count();
                if nodes > node_budget {
                    truncated = true;
                    break 'levels;
                }
                let name = format!("[{},{}]", z.name, w.name);
                let (at_x, all) = stacked(&field, &name)?;
                if span.try_add(all) {
                    kept_values.push(at_x);
                    names.push(name.clone());
                    next.push(Kept { name, field });
                }
            }
        }
        levels += 1;
        frontier = next;
    }
    let rank = rank_now(&kept_values);
    let full_rank = rank == n;
    let verdict = if full_rank {
        "accessibility certificate: bracket rank is full at the point. \
         This does not establish global controllability."
    } else if truncated {
        "inconclusive: expression budget exhausted before full rank"
    } else {
        "rank deficient at the point up to the requested depth"
    };
    Ok(LarcReport {
        point: x.to_vec(),
        depth: max_depth,
        levels_explored: levels,
        rank,
        n,
        full_rank,
        brackets: names,
        truncated,
        verdict: verdict.into(),
    })
}
