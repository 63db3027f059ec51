//! Integrator extension and its inverse.
//!
//! Extension turns `ẋ = f(x, u)` into `ẋ = f(x, y), ẏ = v`: every input
//! becomes a state driven by a fresh input. Reduction strips states whose
//! equation is a bare input used nowhere else, promoting the state to an
//! input. Reduction is a strict inverse of single-channel extension, so each
//! step can be re-extended and checked.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, Var};
use crate::system::{ControlSystem, SystemError, RESERVED};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtendError {
    #[error("system has no inputs; nothing to extend")]
    NoInputs,
    #[error("input channel {channel} out of range for {m} inputs")]
    ChannelOutOfRange { channel: usize, m: usize },
    #[error(transparent)]
    Invalid(#[from] SystemError),
}

/// How one original input maps into the extended system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    /// Original input name, reused as the new state's name.
    pub input: String,
    /// Index of the new state in the extended system.
    pub state_index: usize,
    /// Name of the input driving the new state.
    pub new_input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionRecord {
    pub original: ControlSystem,
    pub extended: ControlSystem,
    pub mapping: Vec<ChannelMap>,
}

impl ExtensionRecord {
    /// State dimension of the original system.
    pub fn n(&self) -> usize {
        self.original.n()
    }

    pub fn m(&self) -> usize {
        self.original.m()
    }
}

fn fresh(base: String, taken: &[&str]) -> String {
    let mut name = base;
    while taken.contains(&name.as_str()) || RESERVED.contains(&name.as_str()) {
        name.push('_');
    }
    name
}

/// Extend every input channel by an integrator.
pub fn extend(sys: &ControlSystem) -> Result<ExtensionRecord, ExtendError> {
    let (n, m) = (sys.n(), sys.m());
    if m == 0 {
        return Err(ExtendError::NoInputs);
    }
    let mut states = sys.state_names().to_vec();
    states.extend(sys.input_names().iter().cloned());
    let mut new_inputs = Vec::with_capacity(m);
    for name in sys.input_names() {
        let taken: Vec<&str> = states.iter().chain(&new_inputs).map(String::as_str).collect();
        let fresh_name = fresh(format!("v_{name}"), &taken);
        new_inputs.push(fresh_name);
    }
    let mut rhs: Vec<Expr> = sys
        .rhs()
        .iter()
        .map(|e| {
            e.map_vars(&|v| match v {
                Var::Input(i) => Expr::state(n + i),
                Var::State(i) => Expr::state(i),
            })
        })
        .collect();
    rhs.extend((0..m).map(Expr::input));
    let extended = ControlSystem::new(sys.name(), states, new_inputs.clone(), rhs)
        .expect("extension of a valid system is valid");
    let mapping = sys
        .input_names()
        .iter()
        .zip(new_inputs)
        .enumerate()
        .map(|(i, (input, new_input))| ChannelMap {
            input: input.clone(),
            state_index: n + i,
            new_input,
        })
        .collect();
    Ok(ExtensionRecord {
        original: sys.clone(),
        extended,
        mapping,
    })
}

/// Extend a single channel: input `channel` becomes a new last state named
/// `state_name`, driven by an input `input_name` at the same position.
pub fn extend_channel(
    sys: &ControlSystem,
    channel: usize,
    state_name: &str,
    input_name: &str,
) -> Result<ControlSystem, ExtendError> {
    let (n, m) = (sys.n(), sys.m());
    if channel >= m {
        return Err(ExtendError::ChannelOutOfRange { channel, m });
    }
    let mut states = sys.state_names().to_vec();
    states.push(state_name.to_string());
    let mut inputs = sys.input_names().to_vec();
    inputs[channel] = input_name.to_string();
    let mut rhs: Vec<Expr> = sys
        .rhs()
        .iter()
        .map(|e| {
            e.map_vars(&|v| match v {
                Var::Input(i) if i == channel => Expr::state(n),
                v => Expr::var(v),
            })
        })
        .collect();
    rhs.push(Expr::input(channel));
    Ok(ControlSystem::new(sys.name(), states, inputs, rhs)?)
}

/// Reorder states so that the state at `from` ends up at `to`.
pub fn move_state(sys: &ControlSystem, from: usize, to: usize) -> ControlSystem {
    let n = sys.n();
    let mut order: Vec<usize> = (0..n).filter(|&i| i != from).collect();
    order.insert(to, from);
    let mut new_index = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let states = order.iter().map(|&i| sys.state_names()[i].clone()).collect();
    let rhs = order
        .iter()
        .map(|&i| {
            sys.rhs()[i].map_vars(&|v| match v {
                Var::State(k) => Expr::state(new_index[k]),
                v => Expr::var(v),
            })
        })
        .collect();
    ControlSystem::new(sys.name(), states, sys.input_names().to_vec(), rhs)
        .expect("permutation preserves validity")
}

/// If `e` is `c·u_j` for a literal nonzero `c`, return `(j, c)`.
fn scaled_input(e: &Expr) -> Option<(usize, f64)> {
    match e {
        Expr::Input(j) => Some((*j, 1.0)),
        Expr::Neg(a) => scaled_input(a).map(|(j, c)| (j, -c)),
        Expr::Mul(a, b) => match (&**a, &**b) {
            (Expr::Const(c), Expr::Input(j)) | (Expr::Input(j), Expr::Const(c)) if *c != 0.0 => {
                Some((*j, *c))
            }
            _ => None,
        },
        Expr::Div(a, b) => match (&**a, &**b) {
            (Expr::Input(j), Expr::Const(c)) if *c != 0.0 => Some((*j, 1.0 / c)),
            _ => None,
        },
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionStep {
    pub stripped_state: String,
    pub state_index: usize,
    pub input_index: usize,
    /// Input that drove the stripped state; it disappears.
    pub removed_input: String,
    /// The stripped state, now an input at `input_index`.
    pub promoted_input: String,
    /// `d<stripped> = scale · <removed_input>`.
    pub scale: f64,
    pub before: ControlSystem,
    pub after: ControlSystem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionCertificate {
    pub original: ControlSystem,
    pub steps: Vec<ReductionStep>,
    pub reduced: ControlSystem,
}

impl ReductionCertificate {
    pub fn count(&self) -> usize {
        self.steps.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Find the strippable state with the highest index, if any.
fn find_candidate(sys: &ControlSystem) -> Option<(usize, usize, f64)> {
    if sys.n() < 2 {
        return None;
    }
    (0..sys.n()).rev().find_map(|k| {
        let (j, c) = scaled_input(&sys.rhs()[k])?;
        let used_elsewhere = sys
            .rhs()
            .iter()
            .enumerate()
            .any(|(i, e)| i != k && e.contains_var(Var::Input(j)));
        (!used_elsewhere).then_some((k, j, c))
    })
}

fn strip(sys: &ControlSystem, k: usize, j: usize, scale: f64) -> ReductionStep {
    let stripped = sys.state_names()[k].clone();
    let removed = sys.input_names()[j].clone();
    let mut inputs = sys.input_names().to_vec();
    inputs.remove(j);
    let states: Vec<String> = sys
        .state_names()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, s)| s.clone())
        .collect();
    let taken: Vec<&str> = states.iter().chain(&inputs).map(String::as_str).collect();
    let promoted = fresh(format!("u_{stripped}"), &taken);
    inputs.insert(j, promoted.clone());
    let rhs = sys
        .rhs()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, e)| {
            e.map_vars(&|v| match v {
                Var::State(i) if i == k => Expr::input(j),
                Var::State(i) if i > k => Expr::state(i - 1),
                v => Expr::var(v),
            })
        })
        .collect();
    let after = ControlSystem::new(sys.name(), states, inputs, rhs)
        .expect("stripping a candidate keeps the system valid");
    ReductionStep {
        stripped_state: stripped,
        state_index: k,
        input_index: j,
        removed_input: removed,
        promoted_input: promoted,
        scale,
        before: sys.clone(),
        after,
    }
}

/// Strip pure-integrator states until none remain.
///
/// A state `z` is strippable when its equation is `dz = c·v` for an input `v`
/// appearing in no other equation and a literal `c ≠ 0`. Among candidates the
/// highest state index goes first. At least one state is always kept.
pub fn reduce_integrator(sys: &ControlSystem) -> ReductionCertificate {
    let mut current = sys.clone();
    let mut steps = Vec::new();
    while let Some((k, j, c)) = find_candidate(&current) {
        let step = strip(&current, k, j, c);
        current = step.after.clone();
        steps.push(step);
    }
    ReductionCertificate {
        original: sys.clone(),
        steps,
        reduced: current,
    }
}

/// Undo one step by single-channel re-extension.
fn re_extend(step: &ReductionStep) -> Option<ControlSystem> {
    let ext = extend_channel(
        &step.after,
        step.input_index,
        &step.stripped_state,
        &step.removed_input,
    )
    .ok()?;
    if step.state_index >= ext.n() {
        return None;
    }
    let moved = move_state(&ext, ext.n() - 1, step.state_index);
    // The recorded equation must be `scale·v` with the same v; it is kept
    // verbatim so spellings like `--v` survive the replay.
    let eq = &step.before.rhs().get(step.state_index)?;
    match scaled_input(eq) {
        Some((j, c)) if j == step.input_index && c == step.scale => {
            let mut rhs = moved.rhs().to_vec();
            rhs[step.state_index] = (*eq).clone();
            ControlSystem::new(
                moved.name(),
                moved.state_names().to_vec(),
                moved.input_names().to_vec(),
                rhs,
            )
            .ok()
        }
        _ => None,
    }
}

/// Re-extend the reduced system step by step and compare with the recorded
/// chain, up to renaming.
pub fn verify_roundtrip(cert: &ReductionCertificate) -> bool {
    let Some(first) = cert.steps.first() else {
        return cert.reduced.same_up_to_renaming(&cert.original);
    };
    if !first.before.same_up_to_renaming(&cert.original) {
        return false;
    }
    if !cert.steps.last().unwrap().after.same_up_to_renaming(&cert.reduced) {
        return false;
    }
    if cert
        .steps
        .windows(2)
        .any(|w| !w[0].after.same_up_to_renaming(&w[1].before))
    {
        return false;
    }
    // Rebuild from the reduced system only.
    let mut current = cert.reduced.clone();
    for step in cert.steps.iter().rev() {
        let replay = ReductionStep {
            after: current.clone(),
            ..step.clone()
        };
        match re_extend(&replay) {
            Some(sys) if sys.same_up_to_renaming(&step.before) => current = sys,
            _ => return false,
        }
    }
    current.same_up_to_renaming(&cert.original)
}
