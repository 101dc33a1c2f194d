//! Brute-force finite-horizon minimax dynamic programming.
//!
//! `J_0 = 0` and `J_k(x) = min_u max_w [ g(x, u, w) + J_{k-1}(Ax + Bu + Fw) ]`
//! with `g = s'x + r'u - gamma'w`, evaluated by plain tree recursion. Each
//! stage enumerates the `2^m` input vertices `u_i = +-E_i x` and the `2^l`
//! disturbance vertices `w_j = +-G_j x`. The objective is affine in every
//! coordinate over a box whenever the continuation value is linear, so the
//! extrema sit at vertices.
//!
//! Nothing here uses the closed-form update or the sign formulas; the only
//! link to [`crate::bellman`] is in [`verify_linear_value`], which compares
//! the two.

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::{self, BellmanError};
use crate::model::{self, ProblemInstance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error(
        "vertex enumeration needs m + l = {m} + {l} bits, above the limit of {limit}; \
         the oracle only certifies small instances"
    )]
    TooManyBits { m: usize, l: usize, limit: u32 },
    #[error("horizon {horizon} exceeds the limit of {limit}; choose a shorter horizon")]
    HorizonTooLong { horizon: usize, limit: usize },
    #[error(
        "horizon {horizon} with m + l = {bits} would visit 2^{total_bits} leaves, above \
         the limit of {limit}; reduce the horizon or the input/disturbance dimensions"
    )]
    TooMuchWork {
        horizon: usize,
        bits: usize,
        total_bits: usize,
        limit: u64,
    },
    #[error("state has x[{index}] = {value} < 0; the oracle is defined on the positive orthant")]
    NegativeState { index: usize, value: f64 },
    #[error("state has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("instance violates {violations} standing-assumption entries; validate it first")]
    NotValidated { violations: usize },
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error(transparent)]
    Bellman(#[from] BellmanError),
}

/// Fail-fast bounds on the exponential search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    /// Maximum `m + l`.
    pub max_bits: u32,
    pub max_horizon: usize,
    /// Maximum number of stage evaluations `(2^(m+l))^k`.
    pub max_leaves: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_bits: 12,
            max_horizon: 8,
            max_leaves: 1 << 24,
        }
    }
}

impl OracleLimits {
    fn check_bits(&self, inst: &ProblemInstance) -> Result<(), OracleError> {
        if inst.m() + inst.l() > self.max_bits as usize {
            return Err(OracleError::TooManyBits {
                m: inst.m(),
                l: inst.l(),
                limit: self.max_bits,
            });
        }
        Ok(())
    }

    /// Checks bits, horizon and total work for a `horizon`-stage recursion.
    pub fn check(&self, inst: &ProblemInstance, horizon: usize) -> Result<(), OracleError> {
        self.check_bits(inst)?;
        if horizon > self.max_horizon {
            return Err(OracleError::HorizonTooLong {
                horizon,
                limit: self.max_horizon,
            });
        }
        let bits = inst.m() + inst.l();
        let total_bits = bits * horizon;
        if total_bits >= 64 || (1u64 << total_bits) > self.max_leaves {
            return Err(OracleError::TooMuchWork {
                horizon,
                bits,
                total_bits,
                limit: self.max_leaves,
            });
        }
        Ok(())
    }
}

/// Minimax choice at one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSolution {
    pub u: Array1<f64>,
    pub w: Array1<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpResult {
    pub horizon: usize,
    pub value: f64,
    /// Root-stage minimizer (zeros for horizon 0).
    pub minimizer: Array1<f64>,
    /// Root-stage maximizer against `minimizer` (zeros for horizon 0).
    pub maximizer: Array1<f64>,
}

fn check_state(x: ArrayView1<'_, f64>, n: usize) -> Result<(), OracleError> {
    if x.len() != n {
        return Err(OracleError::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    if let Some((index, &value)) = x.indexed_iter().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(OracleError::NegativeState { index, value });
    }
    Ok(())
}

/// `sign_bit_set ? +bound : -bound` for every coordinate of a vertex.
fn vertex(bounds: &Array1<f64>, mask: usize) -> Array1<f64> {
    Array1::from_iter(
        bounds
            .iter()
            .enumerate()
            .map(|(i, &b)| if mask >> i & 1 == 1 { b } else { -b }),
    )
}

/// Exhaustive min over input vertices of max over disturbance vertices.
/// Ties keep the first vertex in mask order (all-minus first).
fn stage_search<V>(x: ArrayView1<'_, f64>, next_value: &V, inst: &ProblemInstance) -> StageSolution
where
    V: Fn(ArrayView1<'_, f64>) -> f64,
{
    let u_bounds = inst.e().dot(&x);
    let w_bounds = inst.g().dot(&x);
    let drift = inst.a().dot(&x);
    let state_cost = inst.s().dot(&x);

    let mut best: Option<StageSolution> = None;
    for u_mask in 0..1usize << inst.m() {
        let u = vertex(&u_bounds, u_mask);
        let controlled = &drift + &inst.b().dot(&u);
        let control_cost = state_cost + inst.r().dot(&u);

        let mut worst: Option<(f64, Array1<f64>)> = None;
        for w_mask in 0..1usize << inst.l() {
            let w = vertex(&w_bounds, w_mask);
            let next = &controlled + &inst.f().dot(&w);
            let value = control_cost - inst.gamma().dot(&w) + next_value(next.view());
            if worst.as_ref().is_none_or(|(v, _)| value > *v) {
                worst = Some((value, w));
            }
        }
        let (value, w) = worst.expect("at least one disturbance vertex");
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(StageSolution { u, w, value });
        }
    }
    best.expect("at least one input vertex")
}

/// One minimax stage against an arbitrary continuation value.
pub fn stage_minimax<V>(
    x: ArrayView1<'_, f64>,
    next_value: V,
    inst: &ProblemInstance,
    limits: &OracleLimits,
) -> Result<StageSolution, OracleError>
where
    V: Fn(ArrayView1<'_, f64>) -> f64,
{
    limits.check_bits(inst)?;
    check_state(x, inst.n())?;
    Ok(stage_search(x, &next_value, inst))
}

fn value_recursive(x: ArrayView1<'_, f64>, k: usize, inst: &ProblemInstance) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let continuation = |y: ArrayView1<'_, f64>| value_recursive(y, k - 1, inst);
    stage_search(x, &continuation, inst).value
}

/// `J_k(x)` by backward recursion over the full vertex tree.
pub fn finite_horizon_dp(
    inst: &ProblemInstance,
    horizon: usize,
    x: ArrayView1<'_, f64>,
    limits: &OracleLimits,
) -> Result<DpResult, OracleError> {
    limits.check(inst, horizon)?;
    check_state(x, inst.n())?;
    if horizon == 0 {
        return Ok(DpResult {
            horizon,
            value: 0.0,
            minimizer: Array1::zeros(inst.m()),
            maximizer: Array1::zeros(inst.l()),
        });
    }
    let continuation = |y: ArrayView1<'_, f64>| value_recursive(y, horizon - 1, inst);
    let root = stage_search(x, &continuation, inst);
    Ok(DpResult {
        horizon,
        value: root.value,
        minimizer: root.u,
        maximizer: root.w,
    })
}

/// Outcome of comparing `J_k(x)` with `p_k'x` on a set of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearValueCheck {
    pub passed: bool,
    pub horizon: usize,
    pub samples: usize,
    /// Max of `|J_k(x) - p'x| / (1 + |J_k(x)|)`.
    pub max_deviation: f64,
    /// Max of `|J_k(x) - p'x|`.
    pub max_abs_deviation: f64,
}

/// Compares the oracle value with a supplied linear value `p'x` on every
/// sample; passes iff every scaled deviation is at most `tol`.
pub fn verify_value_vector(
    inst: &ProblemInstance,
    horizon: usize,
    p: ArrayView1<'_, f64>,
    samples: &[Array1<f64>],
    tol: f64,
    limits: &OracleLimits,
) -> Result<LinearValueCheck, OracleError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(OracleError::InvalidTolerance(tol));
    }
    if p.len() != inst.n() {
        return Err(OracleError::DimensionMismatch {
            expected: inst.n(),
            found: p.len(),
        });
    }
    limits.check(inst, horizon)?;
    for x in samples {
        check_state(x.view(), inst.n())?;
    }

    let deviations = samples
        .par_iter()
        .map(|x| {
            let exact = finite_horizon_dp(inst, horizon, x.view(), limits)?.value;
            let abs = (exact - p.dot(x)).abs();
            Ok((abs / (1.0 + exact.abs()), abs))
        })
        .collect::<Result<Vec<_>, OracleError>>()?;

    let (max_deviation, max_abs_deviation) = deviations
        .iter()
        .fold((0.0f64, 0.0f64), |(r, a), &(dr, da)| (r.max(dr), a.max(da)));
    Ok(LinearValueCheck {
        passed: deviations.iter().all(|&(d, _)| d <= tol),
        horizon,
        samples: samples.len(),
        max_deviation,
        max_abs_deviation,
    })
}

/// Computes `p_k` by `k` value-iteration updates from zero and checks
/// `p_k'x = J_k(x)` on the samples.
pub fn verify_linear_value(
    inst: &ProblemInstance,
    horizon: usize,
    samples: &[Array1<f64>],
    tol: f64,
    limits: &OracleLimits,
) -> Result<LinearValueCheck, OracleError> {
    let report = model::validate(inst);
    if !report.is_valid() {
        return Err(OracleError::NotValidated {
            violations: report.violations.len(),
        });
    }
    limits.check(inst, horizon)?;
    let mut p = Array1::zeros(inst.n());
    for _ in 0..horizon {
        p = bellman::bellman_step(p.view(), inst)?;
    }
    verify_value_vector(inst, horizon, p.view(), samples, tol, limits)
}
