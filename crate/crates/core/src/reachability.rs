//! Monte Carlo reachable-set estimates on a grid, and comparisons between a
//! system and its integrator extension.
//!
//! Each sample draws a piecewise-constant control (durations from a uniform
//! split of the horizon, values uniform in the input box), integrates it, and
//! marks every window cell a substep lands in. Sample `i` uses its own
//! ChaCha stream, so results do not depend on the number of worker threads
//! and adding samples only ever adds marks.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiled::Compiled;
use crate::extension::{extend, ExtendError, ExtensionRecord};
use crate::flows::{drive, PiecewiseControl, Segment, Trajectory};
use crate::system::ControlSystem;

/// Coverage gap below which original and extension count as consistent.
/// A calibration constant.
pub const AGREEMENT_THRESHOLD: f64 = 0.05;
/// Stand-in for unbounded inputs.
pub const WIDE_BOX: [f64; 2] = [-10.0, 10.0];
/// Redraws allowed per segment before a confined channel is held at zero.
const CONFINE_TRIES: usize = 64;
const MAX_CELLS: usize = 1 << 28;

fn default_step() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Extend(#[from] ExtendError),
}

fn config_err(msg: impl Into<String>) -> ReachError {
    ReachError::Config(msg.into())
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ReachError> {
    if expected == got {
        Ok(())
    } else {
        Err(ReachError::Dimension {
            what,
            expected,
            got,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachConfig {
    pub horizon: f64,
    pub segments: usize,
    /// Per input channel `[lo, hi]`; `lo == hi` pins the channel.
    pub input_box: Vec<[f64; 2]>,
    pub samples: usize,
    /// Per gridded coordinate `[lo, hi]`, `lo < hi`.
    pub window: Vec<[f64; 2]>,
    /// Cells per axis.
    pub resolution: usize,
    pub seed: u64,
    /// Integrator substep; also bounds the spacing of marked points.
    #[serde(default = "default_step")]
    pub step: f64,
}

impl ReachConfig {
    pub fn validate(&self) -> Result<(), ReachError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(config_err("horizon must be positive"));
        }
        if self.segments == 0 {
            return Err(config_err("segments must be at least 1"));
        }
        if self.samples == 0 {
            return Err(config_err("samples must be at least 1"));
        }
        if self.resolution < 2 {
            return Err(config_err("resolution must be at least 2"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(config_err("step must be positive"));
        }
        if self
            .input_box
            .iter()
            .any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi))
        {
            return Err(config_err("input bounds must be finite with lo <= hi"));
        }
        if self.window.is_empty() {
            return Err(config_err("window needs at least one axis"));
        }
        if self
            .window
            .iter()
            .any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(config_err("window bounds must be finite with lo < hi"));
        }
        let cells = (0..self.window.len()).try_fold(1usize, |acc, _| acc.checked_mul(self.resolution));
        match cells {
            Some(c) if c <= MAX_CELLS => Ok(()),
            _ => Err(config_err("grid has too many cells")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Grid {
    window: Vec<[f64; 2]>,
    res: usize,
}

impl Grid {
    fn total(&self) -> usize {
        self.res.pow(self.window.len() as u32)
    }

    fn cell(&self, p: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (&v, &[lo, hi]) in p.iter().zip(&self.window) {
            if !(v >= lo && v <= hi) {
                return None;
            }
            let k = (((v - lo) / (hi - lo)) * self.res as f64) as usize;
            idx = idx * self.res + k.min(self.res - 1);
        }
        Some(idx)
    }

    fn center(&self, mut idx: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.window.len()];
        for (axis, [lo, hi]) in self.window.iter().enumerate().rev() {
            let k = idx % self.res;
            idx /= self.res;
            c[axis] = lo + (k as f64 + 0.5) * (hi - lo) / self.res as f64;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachEstimate {
    grid: Grid,
    bitmap: Vec<u64>,
    pub visited: usize,
    pub total_cells: usize,
    pub coverage: f64,
    pub samples: usize,
    pub retained: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachSummary {
    pub coverage: f64,
    pub samples: usize,
    pub retained: usize,
    pub dropped: usize,
    pub visited: usize,
    pub total_cells: usize,
}

impl ReachEstimate {
    fn new(grid: Grid, bitmap: Vec<u64>, samples: usize, retained: usize, dropped: usize) -> Self {
        let visited = bitmap.iter().map(|w| w.count_ones() as usize).sum();
        let total_cells = grid.total();
        ReachEstimate {
            grid,
            bitmap,
            visited,
            total_cells,
            coverage: visited as f64 / total_cells as f64,
            samples,
            retained,
            dropped,
        }
    }

    pub fn bitmap(&self) -> &[u64] {
        &self.bitmap
    }

    pub fn window(&self) -> &[[f64; 2]] {
        &self.grid.window
    }

    pub fn resolution(&self) -> usize {
        self.grid.res
    }

    pub fn is_marked(&self, cell: usize) -> bool {
        cell < self.total_cells && self.bitmap[cell / 64] >> (cell % 64) & 1 == 1
    }

    /// Grid cell containing `p`, if `p` lies in the window.
    pub fn cell_of(&self, p: &[f64]) -> Option<usize> {
        self.grid.cell(p)
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        self.grid.center(cell)
    }

    pub fn marked_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.total_cells).filter(|&c| self.is_marked(c))
    }

    /// Marked cells whose centers satisfy `pred`, over cells satisfying it.
    pub fn coverage_where(&self, pred: impl Fn(&[f64]) -> bool) -> f64 {
        let (mut hit, mut all) = (0usize, 0usize);
        for c in 0..self.total_cells {
            if pred(&self.grid.center(c)) {
                all += 1;
                hit += self.is_marked(c) as usize;
            }
        }
        if all == 0 {
            0.0
        } else {
            hit as f64 / all as f64
        }
    }

    /// Centers of visited cells, one row each.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = names.join(",");
        out.push('\n');
        for c in self.marked_cells() {
            let row: Vec<String> = self.grid.center(c).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }

    pub fn summary(&self) -> ReachSummary {
        ReachSummary {
            coverage: self.coverage,
            samples: self.samples,
            retained: self.retained,
            dropped: self.dropped,
            visited: self.visited,
            total_cells: self.total_cells,
        }
    }
}

pub(crate) fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Durations: exponential draws normalized to sum to `horizon`.
fn random_durations(rng: &mut ChaCha8Rng, horizon: f64, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1).max(1e-300)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter()
        .map(|e| (e / total * horizon).max(f64::MIN_POSITIVE))
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// A control as drawn for sample `rng`.
pub fn random_control(rng: &mut ChaCha8Rng, horizon: f64, k: usize, input_box: &[[f64; 2]]) -> PiecewiseControl {
    let segs = random_durations(rng, horizon, k)
        .into_iter()
        .map(|duration| Segment {
            duration,
            values: input_box.iter().map(|&b| uniform(rng, b)).collect(),
        })
        .collect();
    PiecewiseControl::new(segs).expect("durations are positive")
}

struct Acc {
    bits: Vec<u64>,
    retained: usize,
    dropped: usize,
}

impl Acc {
    fn new(words: usize) -> Self {
        Acc {
            bits: vec![0; words],
            retained: 0,
            dropped: 0,
        }
    }

    fn merge(mut self, other: Acc) -> Acc {
        self.bits.iter_mut().zip(&other.bits).for_each(|(a, b)| *a |= b);
        self.retained += other.retained;
        self.dropped += other.dropped;
        self
    }
}

/// Run `samples` draws of `gen` from `p0`; grid the leading coordinates and
/// only mark points whose following coordinates lie inside `gate`.
#[allow(clippy::too_many_arguments)]
fn sample_cells<G>(
    code: &Compiled,
    p0: &[f64],
    samples: usize,
    seed: u64,
    step: f64,
    grid: &Grid,
    gate: &[[f64; 2]],
    gen: G,
) -> (Vec<u64>, usize, usize)
where
    G: Fn(&mut ChaCha8Rng) -> PiecewiseControl + Sync,
{
    let dims = grid.window.len();
    let words = grid.total().div_ceil(64);
    let acc = (0..samples)
        .into_par_iter()
        .fold(
            || (Acc::new(words), Vec::new()),
            |(mut acc, mut touched): (Acc, Vec<usize>), i| {
                let mut rng = sample_rng(seed, i as u64);
                let ctrl = gen(&mut rng);
                touched.clear();
                let ok = drive(code, p0, &ctrl, step, |_, p| {
                    let inside = gate
                        .iter()
                        .zip(&p[dims..])
                        .all(|(&[lo, hi], &v)| v >= lo && v <= hi);
                    if inside {
                        if let Some(c) = grid.cell(&p[..dims]) {
                            touched.push(c);
                        }
                    }
                })
                .is_ok();
                if ok {
                    acc.retained += 1;
                    for &c in &touched {
                        acc.bits[c / 64] |= 1 << (c % 64);
                    }
                } else {
                    acc.dropped += 1;
                }
                (acc, touched)
            },
        )
        .map(|(acc, _)| acc)
        .reduce(|| Acc::new(words), Acc::merge);
    (acc.bits, acc.retained, acc.dropped)
}

/// Estimate the reachable set of `x0` within `cfg.horizon` on the window grid.
/// Trajectories that blow up are dropped and counted.
pub fn sample_reach(sys: &ControlSystem, x0: &[f64], cfg: &ReachConfig) -> Result<ReachEstimate, ReachError> {
    cfg.validate()?;
    check_len("initial state", sys.n(), x0.len())?;
    check_len("input box", sys.m(), cfg.input_box.len())?;
    check_len("window axes", sys.n(), cfg.window.len())?;
    let grid = Grid {
        window: cfg.window.clone(),
        res: cfg.resolution,
    };
    let code = sys.compile();
    let (bits, retained, dropped) = sample_cells(&code, x0, cfg.samples, cfg.seed, cfg.step, &grid, &[], |rng| {
        random_control(rng, cfg.horizon, cfg.segments, &cfg.input_box)
    });
    Ok(ReachEstimate::new(grid, bits, cfg.samples, retained, dropped))
}

/// Drop the integrator coordinates of an extended trajectory.
pub fn project_x(traj: &Trajectory, ext: &ExtensionRecord) -> Result<Trajectory, ReachError> {
    let (n, m) = (ext.n(), ext.m());
    for s in &traj.states {
        check_len("extended state", n + m, s.len())?;
    }
    Ok(Trajectory {
        times: traj.times.clone(),
        states: traj.states.iter().map(|s| s[..n].to_vec()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub coverage_original: f64,
    pub coverage_extended_projected: f64,
    pub difference: f64,
    /// Fraction of window cells marked in both or in neither.
    pub agreement: f64,
    pub threshold: f64,
    pub verdict: String,
    pub samples: usize,
    pub dropped_original: usize,
    pub dropped_extended: usize,
}

impl CompareReport {
    pub fn consistent(&self) -> bool {
        self.difference < self.threshold
    }
}

/// A random control for the extension whose `y` starts at `y0` and stays
/// inside `y_box`: each segment's `v` is drawn from `v_box` and redrawn while
/// it would carry `y` out, then zeroed after too many redraws.
fn confined_control(
    rng: &mut ChaCha8Rng,
    horizon: f64,
    k: usize,
    v_box: &[[f64; 2]],
    y_box: &[[f64; 2]],
    y0: &[f64],
) -> PiecewiseControl {
    let mut y = y0.to_vec();
    let segs = random_durations(rng, horizon, k)
        .into_iter()
        .map(|d| {
            let values = (0..y.len())
                .map(|i| {
                    let [lo, hi] = y_box[i];
                    let v = (0..CONFINE_TRIES)
                        .map(|_| uniform(rng, v_box[i]))
                        .find(|v| (lo..=hi).contains(&(y[i] + v * d)))
                        .unwrap_or(0.0);
                    y[i] += v * d;
                    v
                })
                .collect();
            Segment { duration: d, values }
        })
        .collect();
    PiecewiseControl::new(segs).expect("durations are positive")
}

/// Reach of the extension from `(x0, y0)` with `y` confined to `y_box`,
/// projected to the `x` grid of `cfg`. `y0` is the point of `y_box`
/// nearest zero.
fn confined_extension_reach(
    ext: &ExtensionRecord,
    x0: &[f64],
    y_box: &[[f64; 2]],
    grid: Grid,
    cfg: &ReachConfig,
) -> ReachEstimate {
    let y0: Vec<f64> = y_box.iter().map(|&[lo, hi]| 0.0f64.clamp(lo, hi)).collect();
    let mut p0 = x0.to_vec();
    p0.extend(&y0);
    // y moves linearly within a segment, so only rounding can push it out
    let gate: Vec<[f64; 2]> = y_box
        .iter()
        .map(|&[lo, hi]| {
            let eps = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
            [lo - eps, hi + eps]
        })
        .collect();
    let code = ext.extended.compile();
    let (bits, retained, dropped) = sample_cells(&code, &p0, cfg.samples, cfg.seed, cfg.step, &grid, &gate, |rng| {
        confined_control(rng, cfg.horizon, cfg.segments, &cfg.input_box, y_box, &y0)
    });
    ReachEstimate::new(grid, bits, cfg.samples, retained, dropped)
}

/// Compare coverage of `sys` from `x0` with that of its extension, projected
/// to `x`. `cfg_ext.window` must repeat `cfg.window` and append one axis per
/// input; the extension's `y` starts at the point of those axes nearest zero
/// and is kept inside them (see [`bounded_reach_check`]), with `v` drawn
/// from `cfg_ext.input_box`.
pub fn coverage_compare(
    sys: &ControlSystem,
    x0: &[f64],
    cfg: &ReachConfig,
    cfg_ext: &ReachConfig,
) -> Result<CompareReport, ReachError> {
    let ext = extend(sys)?;
    let (n, m) = (sys.n(), sys.m());
    cfg_ext.validate()?;
    check_len("extended window axes", n + m, cfg_ext.window.len())?;
    check_len("extended input box", m, cfg_ext.input_box.len())?;
    if cfg_ext.window[..n] != cfg.window[..] || cfg_ext.resolution != cfg.resolution {
        return Err(config_err("extended window must share the state window and resolution"));
    }
    let original = sample_reach(sys, x0, cfg)?;
    let grid = Grid {
        window: cfg.window.clone(),
        res: cfg.resolution,
    };
    let projected = confined_extension_reach(&ext, x0, &cfg_ext.window[n..], grid, cfg_ext);
    let same = (0..original.total_cells)
        .filter(|&c| original.is_marked(c) == projected.is_marked(c))
        .count();
    let difference = (original.coverage - projected.coverage).abs();
    let verdict = if difference < AGREEMENT_THRESHOLD {
        "consistent"
    } else {
        "inconsistent"
    };
    Ok(CompareReport {
        coverage_original: original.coverage,
        coverage_extended_projected: projected.coverage,
        difference,
        agreement: same as f64 / original.total_cells as f64,
        threshold: AGREEMENT_THRESHOLD,
        verdict: verdict.into(),
        samples: cfg.samples,
        dropped_original: original.dropped,
        dropped_extended: projected.dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundedReport {
    /// `cfg` as given.
    pub reference: ReachEstimate,
    /// `cfg` with its input box replaced by the bound.
    pub bounded: ReachEstimate,
    /// The extension with `y` kept inside the bound, projected to `x`.
    pub extended_confined: ReachEstimate,
}

impl BoundedReport {
    pub fn difference(&self) -> f64 {
        (self.bounded.coverage - self.reference.coverage).abs()
    }

    pub fn extension_difference(&self) -> f64 {
        (self.extended_confined.coverage - self.bounded.coverage).abs()
    }
}

/// Reach under inputs confined to `bound`, next to the run with `cfg`'s own
/// box. The extension starts with `y` at the point of `bound` nearest zero;
/// its `v` is drawn from `cfg.input_box`, redrawn while the segment would
/// carry `y` out of `bound`, and zeroed after too many redraws.
pub fn bounded_reach_check(
    sys: &ControlSystem,
    x0: &[f64],
    bound: &[[f64; 2]],
    cfg: &ReachConfig,
) -> Result<BoundedReport, ReachError> {
    let (n, m) = (sys.n(), sys.m());
    check_len("bound box", m, bound.len())?;
    if bound.iter().any(|&[lo, hi]| !(lo <= hi && lo.is_finite() && hi.is_finite())) {
        return Err(config_err("bound box must be finite with lo <= hi"));
    }
    let reference = sample_reach(sys, x0, cfg)?;
    let bounded_cfg = ReachConfig {
        input_box: bound.to_vec(),
        ..cfg.clone()
    };
    let bounded = sample_reach(sys, x0, &bounded_cfg)?;
    let ext = extend(sys)?;
    let grid = Grid {
        window: cfg.window.clone(),
        res: cfg.resolution,
    };
    let extended_confined = confined_extension_reach(&ext, x0, bound, grid, cfg);
    debug_assert_eq!(extended_confined.window().len(), n);
    Ok(BoundedReport {
        reference,
        bounded,
        extended_confined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerConfig {
    pub horizon: f64,
    pub segments: usize,
    pub input_box: Vec<[f64; 2]>,
    /// Random controls tried before refinement.
    pub candidates: usize,
    /// Coordinate sweeps allowed during refinement.
    pub sweeps: usize,
    pub seed: u64,
    #[serde(default = "default_step")]
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Steered {
    pub control: PiecewiseControl,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SteerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("budget exhausted; closest approach {best_distance}")]
    Exhausted { best_distance: f64, best: PiecewiseControl },
}

fn steer_len(what: &'static str, expected: usize, got: usize) -> Result<(), SteerError> {
    if expected == got {
        Ok(())
    } else {
        Err(SteerError::Dimension {
            what,
            expected,
            got,
        })
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Randomized shooting from `x0` toward `x1` with equal-length segments:
/// the best of `candidates` random controls, refined by coordinate pattern
/// search on the segment values with a shrinking step.
pub fn two_point_steer(
    sys: &ControlSystem,
    x0: &[f64],
    x1: &[f64],
    cfg: &SteerConfig,
    tol: f64,
) -> Result<Steered, SteerError> {
    let (n, m) = (sys.n(), sys.m());
    steer_len("initial state", n, x0.len())?;
    steer_len("target state", n, x1.len())?;
    steer_len("input box", m, cfg.input_box.len())?;
    if !(tol > 0.0) {
        return Err(SteerError::Config("tolerance must be positive".into()));
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) || cfg.segments == 0 || cfg.candidates == 0 {
        return Err(SteerError::Config(
            "horizon, segments and candidates must be positive".into(),
        ));
    }
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(SteerError::Config("step must be positive".into()));
    }
    if cfg.input_box.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(SteerError::Config("input bounds must be finite with lo <= hi".into()));
    }
    let start = distance(x0, x1);
    if start <= tol {
        return Ok(Steered {
            control: PiecewiseControl::empty(),
            distance: start,
        });
    }
    let code = sys.compile();
    let d = cfg.horizon / cfg.segments as f64;
    let control_of = |vals: &[Vec<f64>]| {
        PiecewiseControl::new(
            vals.iter()
                .map(|v| Segment {
                    duration: d,
                    values: v.clone(),
                })
                .collect(),
        )
        .expect("positive durations")
    };
    let miss = |vals: &[Vec<f64>]| match drive(&code, x0, &control_of(vals), cfg.step, |_, _| {}) {
        Ok(end) => {
            let r = distance(&end, x1);
            if r.is_nan() {
                f64::INFINITY
            } else {
                r
            }
        }
        Err(_) => f64::INFINITY,
    };

    let (mut best_d, mut best) = (0..cfg.candidates)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i as u64);
            let vals: Vec<Vec<f64>> = (0..cfg.segments)
                .map(|_| cfg.input_box.iter().map(|&b| uniform(&mut rng, b)).collect())
                .collect();
            (miss(&vals), i, vals)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(r, _, v)| (r, v))
        .expect("at least one candidate");

    let mut delta: Vec<f64> = cfg.input_box.iter().map(|[lo, hi]| 0.25 * (hi - lo)).collect();
    for _ in 0..cfg.sweeps {
        if best_d <= tol {
            break;
        }
        let mut improved = false;
        for j in 0..cfg.segments {
            for c in 0..m {
                let [lo, hi] = cfg.input_box[c];
                for sign in [1.0, -1.0] {
                    let old = best[j][c];
                    let new = (old + sign * delta[c]).clamp(lo, hi);
                    if new == old {
                        continue;
                    }
                    best[j][c] = new;
                    let r = miss(&best);
                    if r < best_d {
                        best_d = r;
                        improved = true;
                        break;
                    }
                    best[j][c] = old;
                }
            }
        }
        if !improved {
            delta.iter_mut().for_each(|s| *s *= 0.5);
            if delta.iter().all(|&s| s < 1e-12) {
                break;
            }
        }
    }
    if best_d <= tol {
        Ok(Steered {
            control: control_of(&best),
            distance: best_d,
        })
    } else {
        Err(SteerError::Exhausted {
            best_distance: best_d,
            best: control_of(&best),
        })
    }
}
