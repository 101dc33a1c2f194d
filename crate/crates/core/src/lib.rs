//! Minimax optimal control of positive linear systems with homogeneous
//! constraints.
//!
//! For `x(t+1) = Ax + Bu + Fw` with `|u| <= Ex`, `|w| <= Gx` and stage cost
//! `s'x + r'u - gamma'w`, the worst-case optimal cost from `x0 >= 0` is
//! linear, `p'x0`, and the optimal controller is the static sparse gain
//! `u = -Kx` with `|K| = E`. This crate
//!
//! - checks the standing assumptions on a problem ([`model`]),
//! - computes `p` by value iteration and synthesizes `K` and the worst-case
//!   adversary gain `L` ([`bellman`]),
//! - certifies small instances against brute-force minimax dynamic
//!   programming ([`oracle`]),
//! - simulates closed loops ([`simulate`]),
//! - builds problems from resistive DC networks ([`dcnet`]).

pub mod bellman;
pub mod dcnet;
pub mod generate;
pub mod model;
pub mod oracle;
pub mod simulate;

pub use bellman::{
    adversary_gain, bellman_residual, bellman_step, optimal_cost, synthesize_gain, value_iterate,
    GainMatrix, IterationOptions, IterationResult, IterationStatus, ValueVector,
};
pub use dcnet::{DcNetwork, DiscretizedSystem, Line, NetworkDesign, StepBound};
pub use model::{
    load_problem, validate, ConditionCheck, ProblemInstance, ProblemParts, ValidationReport,
};
pub use oracle::{finite_horizon_dp, DpResult, OracleLimits};
pub use simulate::{DisturbancePolicy, Trajectory};
