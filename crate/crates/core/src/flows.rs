//! Trajectories under piecewise-constant controls, and realization of
//! idealized flow plans on an extended system.
//!
//! A [`FlowPlan`] mixes drift flows `(f, 0)` with instantaneous shifts of the
//! integrator states `y`. Shifts are not physically realizable; a shift by
//! `σ` on channel `i` is emulated by holding `v_i = sign(σ)·gain` for
//! `|σ|/gain` seconds, which moves `y_i` by exactly `σ` and perturbs `x` by
//! `O(1/gain)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiled::Compiled;
use crate::expr::{mk_neg, EvalError, Expr};
use crate::extension::ExtensionRecord;
use crate::field::VectorField;
use crate::system::ControlSystem;

pub const DEFAULT_STEP: f64 = 1e-3;
/// Any state component beyond this magnitude aborts integration.
pub const BLOWUP_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("segment durations must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("control segment {segment} has {got} values, expected {expected}")]
    ControlWidth {
        segment: usize,
        expected: usize,
        got: usize,
    },
    #[error("blow-up at t = {time}: state {state:?}")]
    BlowUp { time: f64, state: Vec<f64> },
    #[error("evaluation failed at t = {time}: {source}")]
    Eval {
        time: f64,
        #[source]
        source: EvalError,
    },
    #[error("flows require a non-parametric field")]
    Parametric,
    #[error("gain must be positive and finite, got {0}")]
    BadGain(f64),
    #[error("drift duration must be positive, got {0}")]
    BadSigma(f64),
    #[error("channel {channel} out of range for {m} inputs")]
    Channel { channel: usize, m: usize },
    #[error("{betas} displacements given for {channels} channels")]
    BetaLength { betas: usize, channels: usize },
    #[error("jump displacement must be finite, got {0}")]
    BadDisplacement(f64),
}

/// One constant-control interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub values: Vec<f64>,
}

/// Ordered constant-control segments. Serializes as a JSON list of
/// `{duration, values}` objects.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct PiecewiseControl {
    segments: Vec<Segment>,
}

impl TryFrom<Vec<Segment>> for PiecewiseControl {
    type Error = FlowError;

    fn try_from(segments: Vec<Segment>) -> Result<Self, FlowError> {
        PiecewiseControl::new(segments)
    }
}

impl From<PiecewiseControl> for Vec<Segment> {
    fn from(c: PiecewiseControl) -> Self {
        c.segments
    }
}

impl PiecewiseControl {
    pub fn new(segments: Vec<Segment>) -> Result<Self, FlowError> {
        if let Some(s) = segments
            .iter()
            .find(|s| !(s.duration > 0.0 && s.duration.is_finite()))
        {
            return Err(FlowError::BadDuration(s.duration));
        }
        Ok(PiecewiseControl { segments })
    }

    pub fn empty() -> Self {
        PiecewiseControl::default()
    }

    pub fn constant(duration: f64, values: Vec<f64>) -> Result<Self, FlowError> {
        PiecewiseControl::new(vec![Segment { duration, values }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn then(mut self, other: PiecewiseControl) -> Self {
        self.segments.extend(other.segments);
        self
    }

    /// The same segments in reverse order, for retracing under time reversal.
    pub fn reversed(&self) -> Self {
        PiecewiseControl {
            segments: self.segments.iter().rev().cloned().collect(),
        }
    }

    fn check_width(&self, m: usize) -> Result<(), FlowError> {
        for (k, s) in self.segments.iter().enumerate() {
            if s.values.len() != m {
                return Err(FlowError::ControlWidth {
                    segment: k,
                    expected: m,
                    got: s.values.len(),
                });
            }
        }
        Ok(())
    }
}

/// Sampled states, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectories hold at least the start")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,<names...>` and 17 significant digits.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("t");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t:.16e}").unwrap();
            for v in x {
                write!(out, ",{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Fixed-step RK4 over compiled dynamics, reused across segments.
pub(crate) struct Stepper<'a> {
    code: &'a Compiled,
    sign: f64,
    stack: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(code: &'a Compiled) -> Self {
        let n = code.len();
        Stepper {
            code,
            sign: 1.0,
            stack: code.scratch(),
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn deriv(&mut self, which: usize, x_from_tmp: bool, x: &[f64], u: &[f64]) -> Result<(), EvalError> {
        let src = if x_from_tmp { &self.tmp } else { x };
        self.code.eval_into(src, u, &mut self.k[which], &mut self.stack)
    }

    fn step(&mut self, x: &mut [f64], u: &[f64], h: f64) -> Result<(), EvalError> {
        let n = x.len();
        let hs = h * self.sign;
        self.deriv(0, false, x, u)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * hs * self.k[0][i];
        }
        self.deriv(1, true, x, u)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * hs * self.k[1][i];
        }
        self.deriv(2, true, x, u)?;
        for i in 0..n {
            self.tmp[i] = x[i] + hs * self.k[2][i];
        }
        self.deriv(3, true, x, u)?;
        for i in 0..n {
            x[i] += hs / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        Ok(())
    }

    /// Advance through one constant-input interval, reporting every substep.
    pub(crate) fn run_segment(
        &mut self,
        x: &mut [f64],
        u: &[f64],
        t0: f64,
        duration: f64,
        step: f64,
        visit: &mut impl FnMut(f64, &[f64]),
    ) -> Result<(), FlowError> {
        let substeps = (duration / step).ceil().max(1.0) as usize;
        let h = duration / substeps as f64;
        for k in 1..=substeps {
            let t = if k == substeps { t0 + duration } else { t0 + k as f64 * h };
            self.step(x, u, h)
                .map_err(|source| FlowError::Eval { time: t, source })?;
            if x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT) {
                return Err(FlowError::BlowUp {
                    time: t,
                    state: x.to_vec(),
                });
            }
            visit(t, x);
        }
        Ok(())
    }
}

fn check_step(step: f64) -> Result<(), FlowError> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(FlowError::BadStep(step))
    }
}

/// Drive compiled dynamics through a control, calling `visit` at the start
/// and after every substep. Returns the final state.
pub(crate) fn drive(
    code: &Compiled,
    x0: &[f64],
    ctrl: &PiecewiseControl,
    step: f64,
    mut visit: impl FnMut(f64, &[f64]),
) -> Result<Vec<f64>, FlowError> {
    let mut x = x0.to_vec();
    let mut stepper = Stepper::new(code);
    let mut t = 0.0;
    visit(t, &x);
    for seg in ctrl.segments() {
        stepper.run_segment(&mut x, &seg.values, t, seg.duration, step, &mut visit)?;
        t += seg.duration;
    }
    Ok(x)
}

/// Integrate `sys` from `x0` under `ctrl` with RK4 substeps no longer than
/// `step`, landing exactly on segment boundaries.
pub fn integrate(
    sys: &ControlSystem,
    x0: &[f64],
    ctrl: &PiecewiseControl,
    step: f64,
) -> Result<Trajectory, FlowError> {
    check_step(step)?;
    if x0.len() != sys.n() {
        return Err(FlowError::DimensionMismatch {
            expected: sys.n(),
            got: x0.len(),
        });
    }
    ctrl.check_width(sys.m())?;
    let code = sys.compile();
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    drive(&code, x0, ctrl, step, |t, x| {
        traj.times.push(t);
        traj.states.push(x.to_vec());
    })?;
    Ok(traj)
}

/// `e^{tX}(x0)`; negative `t` flows the negated field.
pub fn flow_endpoint(vf: &VectorField, x0: &[f64], t: f64, step: f64) -> Result<Vec<f64>, FlowError> {
    check_step(step)?;
    if vf.is_parametric() {
        return Err(FlowError::Parametric);
    }
    if x0.len() != vf.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: vf.dim(),
            got: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    if t == 0.0 {
        return Ok(x);
    }
    let code = Compiled::new(vf.components(), vf.dim(), 0);
    let mut stepper = Stepper::new(&code);
    stepper.sign = t.signum();
    stepper.run_segment(&mut x, &[], 0.0, t.abs(), step, &mut |_, _| {})?;
    Ok(x)
}

/// Negate every right-hand side. Applying it twice gives back the original
/// expressions exactly.
pub fn time_reversal(sys: &ControlSystem) -> ControlSystem {
    let rhs = sys
        .rhs()
        .iter()
        .map(|e| match e {
            Expr::Neg(inner) => (**inner).clone(),
            e => mk_neg(e.clone()),
        })
        .collect();
    ControlSystem::new(
        sys.name(),
        sys.state_names().to_vec(),
        sys.input_names().to_vec(),
        rhs,
    )
    .expect("negation keeps the system valid")
}

fn check_gain(gain: f64) -> Result<(), FlowError> {
    if gain > 0.0 && gain.is_finite() {
        Ok(())
    } else {
        Err(FlowError::BadGain(gain))
    }
}

/// Emulate an instantaneous shift of `y_channel` by `sigma` with a single
/// segment of input `sign(sigma)·gain` lasting `|sigma|/gain`.
pub fn realize_jump(
    ext: &ExtensionRecord,
    channel: usize,
    sigma: f64,
    gain: f64,
) -> Result<PiecewiseControl, FlowError> {
    check_gain(gain)?;
    let m = ext.m();
    if channel >= m {
        return Err(FlowError::Channel { channel, m });
    }
    if !sigma.is_finite() {
        return Err(FlowError::BadDisplacement(sigma));
    }
    if sigma == 0.0 {
        return Ok(PiecewiseControl::empty());
    }
    let mut values = vec![0.0; m];
    values[channel] = sigma.signum() * gain;
    PiecewiseControl::constant(sigma.abs() / gain, values)
}

/// Realize the drift pushed forward by the shift `beta` on `channels`:
/// undo the shifts in reverse order, drift for `sigma`, then redo them.
pub fn realize_conjugated_drift(
    ext: &ExtensionRecord,
    beta: &[f64],
    channels: &[usize],
    sigma: f64,
    gain: f64,
) -> Result<PiecewiseControl, FlowError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FlowError::BadSigma(sigma));
    }
    if beta.len() != channels.len() {
        return Err(FlowError::BetaLength {
            betas: beta.len(),
            channels: channels.len(),
        });
    }
    check_gain(gain)?;
    let mut ctrl = PiecewiseControl::empty();
    for (&b, &ch) in beta.iter().zip(channels).rev() {
        ctrl = ctrl.then(realize_jump(ext, ch, -b, gain)?);
    }
    ctrl = ctrl.then(PiecewiseControl::constant(sigma, vec![0.0; ext.m()])?);
    for (&b, &ch) in beta.iter().zip(channels) {
        ctrl = ctrl.then(realize_jump(ext, ch, b, gain)?);
    }
    Ok(ctrl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSegment {
    /// Flow `(f(·, y), 0)` for `duration > 0`; `y` stays on its leaf.
    Drift { duration: f64 },
    /// Instantaneous shift `y_channel += displacement`, either sign.
    Jump { channel: usize, displacement: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowPlan {
    pub segments: Vec<PlanSegment>,
}

impl FlowPlan {
    pub fn new(segments: Vec<PlanSegment>) -> Self {
        FlowPlan { segments }
    }

    pub fn validate(&self, m: usize) -> Result<(), FlowError> {
        for seg in &self.segments {
            match *seg {
                PlanSegment::Drift { duration } if !(duration > 0.0 && duration.is_finite()) => {
                    return Err(FlowError::BadSigma(duration));
                }
                PlanSegment::Jump { channel, .. } if channel >= m => {
                    return Err(FlowError::Channel { channel, m });
                }
                PlanSegment::Jump { displacement, .. } if !displacement.is_finite() => {
                    return Err(FlowError::BadDisplacement(displacement));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Concatenate the realizations of every plan segment. Drifts become
/// zero-input segments, jumps become single large-gain segments.
pub fn realize_plan(ext: &ExtensionRecord, plan: &FlowPlan, gain: f64) -> Result<PiecewiseControl, FlowError> {
    check_gain(gain)?;
    plan.validate(ext.m())?;
    let mut ctrl = PiecewiseControl::empty();
    for seg in &plan.segments {
        ctrl = ctrl.then(match *seg {
            PlanSegment::Drift { duration } => PiecewiseControl::constant(duration, vec![0.0; ext.m()])?,
            PlanSegment::Jump {
                channel,
                displacement,
            } => realize_jump(ext, channel, displacement, gain)?,
        });
    }
    Ok(ctrl)
}

/// Endpoint of the idealized plan: jumps shift `y` exactly, drifts are
/// integrated numerically with `v = 0`.
pub fn ideal_plan_endpoint(
    ext: &ExtensionRecord,
    plan: &FlowPlan,
    p0: &[f64],
    step: f64,
) -> Result<Vec<f64>, FlowError> {
    check_step(step)?;
    let (n, m) = (ext.n(), ext.m());
    if p0.len() != n + m {
        return Err(FlowError::DimensionMismatch {
            expected: n + m,
            got: p0.len(),
        });
    }
    plan.validate(m)?;
    let code = ext.extended.compile();
    let zeros = vec![0.0; m];
    let mut p = p0.to_vec();
    let mut stepper = Stepper::new(&code);
    let mut t = 0.0;
    for seg in &plan.segments {
        match *seg {
            PlanSegment::Drift { duration } => {
                stepper.run_segment(&mut p, &zeros, t, duration, step, &mut |_, _| {})?;
                t += duration;
            }
            PlanSegment::Jump {
                channel,
                displacement,
            } => p[n + channel] += displacement,
        }
    }
    Ok(p)
}

/// Endpoint of `ctrl` applied to the extended system from `p0`.
pub fn realized_endpoint(
    ext: &ExtensionRecord,
    ctrl: &PiecewiseControl,
    p0: &[f64],
    step: f64,
) -> Result<Vec<f64>, FlowError> {
    integrate(&ext.extended, p0, ctrl, step).map(|t| t.final_state().to_vec())
}
