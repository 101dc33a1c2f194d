//! Value iteration on the linear value vector `p`, fixed-point residuals and
//! synthesis of the optimal feedback gain and the worst-case adversary gain.
//!
//! With a linear value `J(x) = p'x` on the positive orthant, one step of
//! dynamic programming maps `p` to
//!
//! ```text
//! T(p) = s + A'p - E'|r + B'p| + G'|-gamma + F'p|
//! ```
//!
//! and the optimal policy is `u = -K x` with row `i` of `K` equal to
//! `sign(r_i + p'B_i) E_i`.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ProblemInstance;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BellmanError {
    #[error("{what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(
        "Bellman update produced p[{index}] = {value} < 0; the instance does not satisfy \
         the cost condition s >= E'|r| - G'|gamma| (validate it first)"
    )]
    NegativeValue { index: usize, value: f64 },
    #[error("{name} must be a positive finite number, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("initial state has x[{index}] = {value} < 0; the value p'x is only defined on the positive orthant")]
    NegativeState { index: usize, value: f64 },
}

/// Relative size below which a negative update entry is treated as roundoff.
const NEGATIVE_ROUNDOFF: f64 = 1e-12;

/// A nonnegative value vector together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub p: Array1<f64>,
    pub iterations: usize,
    /// `||p_k - p_{k-1}||_inf` of the last update.
    pub residual_inf_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IterationStatus {
    Converged,
    Diverged,
    MaxIterationsReached,
}

impl fmt::Display for IterationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IterationStatus::Converged => "Converged",
            IterationStatus::Diverged => "Diverged",
            IterationStatus::MaxIterationsReached => "MaxIterationsReached",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub status: IterationStatus,
    pub value: ValueVector,
    /// Step changes `||p_k - p_{k-1}||_inf`, when requested.
    pub history: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub cap: f64,
    pub record_history: bool,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions {
            tol: 1e-10,
            max_iter: 100_000,
            cap: 1e12,
            record_history: false,
        }
    }
}

/// A structured gain: row `i` is `signs[i] * bound_row_i`, so `|gain|`
/// reproduces the bound matrix (`E` for the controller, `G` for the adversary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    gain: Array2<f64>,
    signs: Vec<i8>,
}

impl GainMatrix {
    /// Builds `diag(signs) * bound`.
    pub fn from_signs(bound: ArrayView2<'_, f64>, signs: Vec<i8>) -> Self {
        assert_eq!(bound.nrows(), signs.len(), "one sign per row");
        let mut gain = bound.to_owned();
        for (mut row, &sign) in gain.outer_iter_mut().zip(&signs) {
            if sign < 0 {
                row.mapv_inplace(|v| -v);
            }
        }
        GainMatrix { gain, signs }
    }

    /// Wraps an arbitrary matrix, e.g. a gain read from a file. Signs are
    /// taken from the first nonzero entry of each row.
    pub fn from_matrix(gain: Array2<f64>) -> Self {
        let signs = gain
            .outer_iter()
            .map(|row| match row.iter().find(|v| **v != 0.0) {
                Some(v) if *v < 0.0 => -1,
                _ => 1,
            })
            .collect();
        GainMatrix { gain, signs }
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.gain.view()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn rows(&self) -> usize {
        self.gain.nrows()
    }

    pub fn cols(&self) -> usize {
        self.gain.ncols()
    }

    /// `gain * x`.
    pub fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.gain.dot(&x)
    }
}

/// `sign` with `sign(0) = +1`.
fn tie_sign(v: f64) -> i8 {
    if v < 0.0 {
        -1
    } else {
        1
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), BellmanError> {
    if expected == found {
        Ok(())
    } else {
        Err(BellmanError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

fn inf_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Induced infinity norm (max absolute row sum).
pub fn matrix_inf_norm(m: ArrayView2<'_, f64>) -> f64 {
    m.outer_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn apply_operator(p: ArrayView1<'_, f64>, inst: &ProblemInstance) -> Array1<f64> {
    let control = (&inst.r() + &inst.b().t().dot(&p)).mapv(f64::abs);
    let disturbance = (&inst.f().t().dot(&p) - &inst.gamma()).mapv(f64::abs);
    &inst.s() + &inst.a().t().dot(&p) - inst.e().t().dot(&control)
        + inst.g().t().dot(&disturbance)
}

/// One value-iteration update `p -> T(p)`.
///
/// Fails if any output entry is negative beyond roundoff, which can only
/// happen when the cost condition does not hold. Entries within roundoff
/// below zero are clamped to zero.
pub fn bellman_step(
    p: ArrayView1<'_, f64>,
    inst: &ProblemInstance,
) -> Result<Array1<f64>, BellmanError> {
    check_len("p", inst.n(), p.len())?;
    let mut next = apply_operator(p, inst);
    let scale = 1.0 + inf_norm(p) + inf_norm(inst.s());
    for (index, v) in next.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -NEGATIVE_ROUNDOFF * scale {
                return Err(BellmanError::NegativeValue { index, value: *v });
            }
            *v = 0.0;
        }
    }
    Ok(next)
}

/// Iterates [`bellman_step`] from `p_0 = 0`.
///
/// Stops with `Diverged` once `||p_k||_inf > cap` (or a non-finite entry
/// appears), `Converged` once the step change is at most `tol`, and
/// `MaxIterationsReached` after `max_iter` updates.
pub fn value_iterate(
    inst: &ProblemInstance,
    opts: &IterationOptions,
) -> Result<IterationResult, BellmanError> {
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(BellmanError::InvalidParameter {
            name: "tol",
            value: opts.tol,
        });
    }
    if !(opts.cap > 0.0 && opts.cap.is_finite()) {
        return Err(BellmanError::InvalidParameter {
            name: "cap",
            value: opts.cap,
        });
    }
    if opts.max_iter == 0 {
        return Err(BellmanError::InvalidParameter {
            name: "max_iter",
            value: 0.0,
        });
    }

    let mut p = Array1::zeros(inst.n());
    let mut history = opts.record_history.then(Vec::new);
    let mut step = f64::INFINITY;
    let mut status = IterationStatus::MaxIterationsReached;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let next = bellman_step(p.view(), inst)?;
        step = inf_norm((&next - &p).view());
        p = next;
        iterations += 1;
        if let Some(h) = history.as_mut() {
            h.push(step);
        }
        let size = inf_norm(p.view());
        if !size.is_finite() || size > opts.cap {
            status = IterationStatus::Diverged;
            break;
        }
        if step <= opts.tol {
            status = IterationStatus::Converged;
            break;
        }
    }

    log::debug!("value iteration: {status} after {iterations} steps, last step {step:e}");
    Ok(IterationResult {
        status,
        value: ValueVector {
            p,
            iterations,
            residual_inf_norm: step,
        },
        history,
    })
}

/// `p - T(p)`; identically zero iff `p` solves the Bellman equation.
pub fn bellman_residual(
    p: ArrayView1<'_, f64>,
    inst: &ProblemInstance,
) -> Result<Array1<f64>, BellmanError> {
    check_len("p", inst.n(), p.len())?;
    Ok(&p - &apply_operator(p, inst))
}

/// Residual bound `2 tol (1 + ||A|| + ||E|| ||B|| + ||G|| ||F||)` (infinity
/// norms) that a result converged at `tol` is expected to satisfy.
pub fn residual_tolerance(inst: &ProblemInstance, tol: f64) -> f64 {
    let n = |m: ArrayView2<'_, f64>| matrix_inf_norm(m);
    2.0 * tol * (1.0 + n(inst.a()) + n(inst.e()) * n(inst.b()) + n(inst.g()) * n(inst.f()))
}

/// Optimal feedback gain `K`: row `i` is `sign(r_i + p'B_i) E_i`, so that
/// `u = -K x` is optimal for the value `p'x`.
pub fn synthesize_gain(
    p: ArrayView1<'_, f64>,
    inst: &ProblemInstance,
) -> Result<GainMatrix, BellmanError> {
    check_len("p", inst.n(), p.len())?;
    let weights = &inst.r() + &inst.b().t().dot(&p);
    let signs = weights.iter().map(|&v| tie_sign(v)).collect();
    Ok(GainMatrix::from_signs(inst.e(), signs))
}

/// Worst-case adversary gain `L`: row `j` is `sign(-gamma_j + p'F_j) G_j`, so
/// that `w = L x` attains the inner maximum for the value `p'x`.
pub fn adversary_gain(
    p: ArrayView1<'_, f64>,
    inst: &ProblemInstance,
) -> Result<GainMatrix, BellmanError> {
    check_len("p", inst.n(), p.len())?;
    let weights = inst.f().t().dot(&p) - inst.gamma();
    let signs = weights.iter().map(|&v| tie_sign(v)).collect();
    Ok(GainMatrix::from_signs(inst.g(), signs))
}

/// Optimal cost `p'x0` from a nonnegative initial state.
pub fn optimal_cost(p: ArrayView1<'_, f64>, x0: ArrayView1<'_, f64>) -> Result<f64, BellmanError> {
    check_len("x0", p.len(), x0.len())?;
    if let Some((index, &value)) = x0.indexed_iter().find(|(_, v)| **v < 0.0) {
        return Err(BellmanError::NegativeState { index, value });
    }
    Ok(Zip::from(&p).and(&x0).fold(0.0, |acc, a, b| acc + a * b))
}
