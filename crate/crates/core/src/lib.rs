//! Analysis of nonlinear control systems through integrator extension.
//!
//! A general system `ẋ = f(x, u)` is extended to the affine system
//! `ẋ = f(x, y), ẏ = v`; the two are globally controllable together. The crate
//! provides the symbolic layer, the text format, the extension and reduction
//! transforms, large-gain realization of idealized flow plans, linear and
//! Lie-algebraic rank checks, and sampling-based reachability estimates.

pub mod compiled;
pub mod controllability;
pub mod dsl;
pub mod expr;
pub mod extension;
pub mod field;
pub mod flows;
pub mod reachability;
pub mod system;

pub use dsl::{parse, serialize, ParseError};
pub use expr::{EvalError, Expr, Var};
pub use field::{lie_bracket, FieldError, SymbolicMatrix, VectorField};
pub use system::{to_affine, AffineSystem, ControlSystem, NotAffine, SystemError};
pub use extension::{
    extend, reduce_integrator, verify_roundtrip, ExtendError, ExtensionRecord, ReductionCertificate,
};
pub use flows::{
    flow_endpoint, ideal_plan_endpoint, integrate, realize_conjugated_drift, realize_jump, realize_plan,
    time_reversal, FlowError, FlowPlan, PiecewiseControl, PlanSegment, Segment, Trajectory,
};
pub use controllability::{
    kalman_rank, kalman_reduce_3to2, larc, larc_with_budget, linear_of, KalmanVerdict, LarcError, LarcReport,
    LinearRealization, NotLinear, Reduction3to2,
};
pub use reachability::{
    bounded_reach_check, coverage_compare, project_x, sample_reach, two_point_steer, BoundedReport, CompareReport,
    ReachConfig, ReachError, ReachEstimate, SteerConfig, SteerError, Steered,
};
