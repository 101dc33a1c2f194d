//! Closed-loop rollouts of `x(t+1) = Ax + Bu + Fw` under `u = -Kx` and a
//! named disturbance policy, with stage-cost accounting.

use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::GainMatrix;
use crate::model::ProblemInstance;

/// Relative slack on `|u| <= Ex` for gains that reproduce `E` up to roundoff.
const ADMISSIBILITY_SLACK: f64 = 1e-12;

/// Relative size below which a negative propagated state entry is treated as
/// roundoff. Initial states must be exactly nonnegative.
const STATE_ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulateError {
    #[error("{what} has shape {found:?}, expected {expected:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("state at t = {t} has x[{index}] = {value} < 0")]
    NegativeState { t: usize, index: usize, value: f64 },
    #[error("input u[{index}] = {value} at t = {t} exceeds its bound (Ex)[{index}] = {bound}")]
    InadmissibleInput {
        t: usize,
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("disturbance w[{index}] = {value} at t = {t} exceeds its bound (Gx)[{index}] = {bound}")]
    InadmissibleDisturbance {
        t: usize,
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
}

/// How the disturbance is chosen at each step.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbancePolicy {
    /// `w = L x` with the worst-case adversary gain.
    WorstCase(GainMatrix),
    Zero,
    /// Each `w_j` uniform in `[-(Gx)_j, (Gx)_j]`.
    RandomAdmissible { seed: u64 },
}

impl DisturbancePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            DisturbancePolicy::WorstCase(_) => "worst",
            DisturbancePolicy::Zero => "zero",
            DisturbancePolicy::RandomAdmissible { .. } => "random",
        }
    }
}

/// A running disturbance generator; holds the RNG state of random policies.
#[derive(Debug, Clone)]
pub struct Adversary {
    policy: DisturbancePolicy,
    rng: ChaCha8Rng,
}

impl Adversary {
    pub fn new(policy: DisturbancePolicy) -> Self {
        let seed = match policy {
            DisturbancePolicy::RandomAdmissible { seed } => seed,
            _ => 0,
        };
        Adversary {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn policy(&self) -> &DisturbancePolicy {
        &self.policy
    }

    fn disturbance(&mut self, x: ArrayView1<'_, f64>, inst: &ProblemInstance) -> Array1<f64> {
        match &self.policy {
            DisturbancePolicy::WorstCase(gain) => gain.apply(x),
            DisturbancePolicy::Zero => Array1::zeros(inst.l()),
            DisturbancePolicy::RandomAdmissible { .. } => {
                let bounds = inst.g().dot(&x);
                uniform_in_box(&bounds, &mut self.rng)
            }
        }
    }
}

/// Uniform sample from `[-b_i, b_i]` per coordinate; `|v_i| <= b_i` exactly.
fn uniform_in_box(bounds: &Array1<f64>, rng: &mut impl Rng) -> Array1<f64> {
    bounds.mapv(|b| b * (2.0 * rng.random::<f64>() - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next: Array1<f64>,
    pub u: Array1<f64>,
    pub w: Array1<f64>,
    pub stage_cost: f64,
}

/// `s'x + r'u - gamma'w`.
pub fn stage_cost(
    inst: &ProblemInstance,
    x: ArrayView1<'_, f64>,
    u: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
) -> f64 {
    inst.s().dot(&x) + inst.r().dot(&u) - inst.gamma().dot(&w)
}

fn check_gain(gain: &GainMatrix, what: &'static str, rows: usize, n: usize) -> Result<(), SimulateError> {
    if (gain.rows(), gain.cols()) != (rows, n) {
        return Err(SimulateError::DimensionMismatch {
            what,
            expected: (rows, n),
            found: (gain.rows(), gain.cols()),
        });
    }
    Ok(())
}

fn check_nonnegative(t: usize, x: ArrayView1<'_, f64>) -> Result<(), SimulateError> {
    let floor = if t == 0 {
        0.0
    } else {
        -STATE_ROUNDOFF * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    };
    if let Some((index, &value)) = x.indexed_iter().find(|(_, v)| v.is_nan() || **v < floor) {
        return Err(SimulateError::NegativeState { t, index, value });
    }
    Ok(())
}

/// A bound can be slightly negative when the state carries roundoff below
/// zero; its magnitude is compared then.
fn within(value: f64, bound: f64) -> bool {
    value.abs() <= bound.abs() * (1.0 + ADMISSIBILITY_SLACK)
}

fn step_at(
    t: usize,
    x: ArrayView1<'_, f64>,
    gain: &GainMatrix,
    adversary: &mut Adversary,
    inst: &ProblemInstance,
) -> Result<StepOutcome, SimulateError> {
    check_nonnegative(t, x)?;
    let u = -gain.apply(x);
    let w = adversary.disturbance(x, inst);

    let u_bounds = inst.e().dot(&x);
    for (index, (&value, &bound)) in u.iter().zip(&u_bounds).enumerate() {
        if !within(value, bound) {
            return Err(SimulateError::InadmissibleInput {
                t,
                index,
                value,
                bound,
            });
        }
    }
    let w_bounds = inst.g().dot(&x);
    for (index, (&value, &bound)) in w.iter().zip(&w_bounds).enumerate() {
        if !within(value, bound) {
            return Err(SimulateError::InadmissibleDisturbance {
                t,
                index,
                value,
                bound,
            });
        }
    }

    let next = inst.a().dot(&x) + inst.b().dot(&u) + inst.f().dot(&w);
    let stage_cost = stage_cost(inst, x, u.view(), w.view());
    Ok(StepOutcome {
        next,
        u,
        w,
        stage_cost,
    })
}

/// One closed-loop step `u = -Kx`, `w` from the adversary. Admissibility of
/// both signals is checked on every call.
pub fn closed_loop_step(
    x: ArrayView1<'_, f64>,
    gain: &GainMatrix,
    adversary: &mut Adversary,
    inst: &ProblemInstance,
) -> Result<StepOutcome, SimulateError> {
    if x.len() != inst.n() {
        return Err(SimulateError::DimensionMismatch {
            what: "x",
            expected: (inst.n(), 1),
            found: (x.len(), 1),
        });
    }
    check_gain(gain, "K", inst.m(), inst.n())?;
    if let DisturbancePolicy::WorstCase(l) = adversary.policy() {
        check_gain(l, "L", inst.l(), inst.n())?;
    }
    step_at(0, x, gain, adversary, inst)
}

/// A closed-loop rollout: `T + 1` states and `T` of everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Array1<f64>>,
    pub inputs: Vec<Array1<f64>>,
    pub disturbances: Vec<Array1<f64>>,
    pub stage_costs: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.stage_costs.len()
    }

    pub fn final_state(&self) -> ArrayView1<'_, f64> {
        self.states.last().expect("trajectory has an initial state").view()
    }

    /// CSV with header `t,x_1..x_n,u_1..u_m,w_1..w_l,stage_cost`. The last
    /// row carries only the terminal state.
    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let m = self.inputs.first().map_or(0, |u| u.len());
        let l = self.disturbances.first().map_or(0, |w| w.len());

        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=l).map(|i| format!("w_{i}")));
        header.push("stage_cost".into());

        let mut out = header.join(",");
        out.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            let mut fields: Vec<String> = vec![t.to_string()];
            fields.extend(x.iter().map(f64::to_string));
            match (self.inputs.get(t), self.disturbances.get(t), self.stage_costs.get(t)) {
                (Some(u), Some(w), Some(g)) => {
                    fields.extend(u.iter().map(f64::to_string));
                    fields.extend(w.iter().map(f64::to_string));
                    fields.push(g.to_string());
                }
                _ => fields.extend(std::iter::repeat_n(String::new(), m + l + 1)),
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

/// Rolls the closed loop forward `horizon` steps from `x0 >= 0`.
pub fn simulate(
    inst: &ProblemInstance,
    gain: &GainMatrix,
    policy: DisturbancePolicy,
    x0: ArrayView1<'_, f64>,
    horizon: usize,
) -> Result<Trajectory, SimulateError> {
    if horizon == 0 {
        return Err(SimulateError::EmptyHorizon);
    }
    if x0.len() != inst.n() {
        return Err(SimulateError::DimensionMismatch {
            what: "x0",
            expected: (inst.n(), 1),
            found: (x0.len(), 1),
        });
    }
    check_gain(gain, "K", inst.m(), inst.n())?;
    if let DisturbancePolicy::WorstCase(l) = &policy {
        check_gain(l, "L", inst.l(), inst.n())?;
    }

    let mut adversary = Adversary::new(policy);
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        inputs: Vec::with_capacity(horizon),
        disturbances: Vec::with_capacity(horizon),
        stage_costs: Vec::with_capacity(horizon),
    };
    let mut x = x0.to_owned();
    for t in 0..horizon {
        let step = step_at(t, x.view(), gain, &mut adversary, inst)?;
        traj.states.push(std::mem::replace(&mut x, step.next));
        traj.inputs.push(step.u);
        traj.disturbances.push(step.w);
        traj.stage_costs.push(step.stage_cost);
    }
    check_nonnegative(horizon, x.view())?;
    traj.states.push(x);
    Ok(traj)
}

pub fn accumulated_cost(traj: &Trajectory) -> f64 {
    traj.stage_costs.iter().sum()
}

/// Per-step `|g(t) + p'x(t+1) - p'x(t)|`, zero along an optimal worst-case
/// rollout when `p` solves the Bellman equation.
pub fn telescoping_errors(traj: &Trajectory, p: ArrayView1<'_, f64>) -> Vec<f64> {
    traj.stage_costs
        .iter()
        .enumerate()
        .map(|(t, g)| (g + p.dot(&traj.states[t + 1]) - p.dot(&traj.states[t])).abs())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub trials: usize,
    pub horizon: usize,
    /// Smallest state entry seen over all trials.
    pub min_entry: f64,
    /// Smallest entry is `>= 0`.
    pub passed: bool,
    /// `(trial, t, index)` of the first negative entry.
    pub first_negative: Option<(usize, usize, usize)>,
}

/// Runs `trials` rollouts with random admissible inputs (any sign, uniform in
/// `[-Ex, Ex]`) and disturbances, tracking the smallest state entry. A trial
/// stops at its first negative state.
pub fn check_positive_invariance(
    inst: &ProblemInstance,
    x0: ArrayView1<'_, f64>,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> InvarianceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_entry = x0.iter().copied().fold(f64::INFINITY, f64::min);
    let mut first_negative = None;

    for trial in 0..trials {
        let mut x = x0.to_owned();
        for t in 1..=horizon {
            let u = uniform_in_box(&inst.e().dot(&x), &mut rng);
            let w = uniform_in_box(&inst.g().dot(&x), &mut rng);
            x = inst.a().dot(&x) + inst.b().dot(&u) + inst.f().dot(&w);
            let (index, low) = x
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
            min_entry = min_entry.min(low);
            if low < 0.0 {
                first_negative.get_or_insert((trial, t, index));
                break;
            }
        }
    }

    InvarianceReport {
        trials,
        horizon,
        min_entry,
        passed: min_entry >= 0.0,
        first_negative,
    }
}
