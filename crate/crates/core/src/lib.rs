//! Differentiable STL robustness, bounded neural feedback controllers, and
//! risk-aware verification for uncertain discrete-time plants.
//!
//! The pipeline:
//!
//! 1. Parse an STL mission specification and the plant description
//!    ([`expr`], [`stl`], [`plant`]).
//! 2. Compile the formula into a differentiable smooth robustness over a
//!    closed-loop rollout ([`semantics`], [`smooth`], [`tape`]).
//! 3. Train a bounded neural controller with a robustness-margin-gated
//!    gradient-switching loop ([`policy`], [`trainer`]).
//! 4. Verify the trained controller with Monte-Carlo Value-at-Risk bounds
//!    on the hard robustness ([`risk`]).

pub mod error;
pub mod expr;
pub mod plant;
pub mod policy;
pub mod presets;
pub mod risk;
pub mod semantics;
pub mod smooth;
pub mod stl;
pub mod tape;
pub mod trainer;

pub use error::{DomainError, Error, Result};
pub use expr::{parse_expr, Env, Expr};
pub use plant::{
    rollout, rollout_symbolic, sample_init, sample_model, DynamicsKind, DynamicsSpec, InitSet,
    Trajectory, UncertaintyParam,
};
pub use policy::{Checkpoint, Policy, PolicyNodes, Squash, SquashKind};
pub use risk::{
    estimate_risk, probabilistic_guarantee, risk_from_samples, robustness_samples, RiskReport,
};
pub use semantics::{bool_sat, hard_robustness, smooth_robustness, stl2cbf};
pub use smooth::{softmin, weighted_average, InitScheme, SmoothParams, WtAvgForm, ZetaNodes};
pub use stl::{parse_stl, DisjKind, DisjNode, NodeId, StlAst};
pub use tape::{backward, check_gradient, Gradients, Real, Scalar, Tape};
pub use trainer::{
    lagrangian_objective, perf_reward, stl_objective, train, validate_controller, AdamParams,
    AdamState, TrainBranch, TrainConfig, TrainLog, TrainMode, TrainOutcome, TrainRecord,
    ValidationStats,
};
