//! DC power networks as a source of problem instances.
//!
//! Bus voltages follow `C dV/dt = -L_R V + u + w`, with `L_R` the Laplacian
//! weighted by line conductances `1/R_ij`. Explicit Euler with step `h`
//! gives `x(t+1) = (I - h C^-1 L_R) x + h C^-1 u + h C^-1 w`, which fits the
//! problem form with `A = I - h C^-1 L_R` and `B = F = h C^-1`.
//!
//! Positivity of the discretized problem splits into a diagonal part, which
//! holds for all small enough `h`, and an `h`-independent off-diagonal part:
//! `E + G` may only be nonzero where a line exists, and there
//! `e_ij + g_ij <= 1/R_ij`.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    self, matrix_from_rows, Condition, ConditionCheck, ModelError, ProblemInstance, ProblemParts,
    ValidationReport,
};

/// Attempts at stepping `h_max` down by one ulp until the exact check passes.
const MAX_STEP_NUDGES: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DcNetError {
    #[error("network has no buses")]
    Empty,
    #[error("capacitance of bus {bus} is {value}; capacitances must be positive and finite")]
    BadCapacitance { bus: usize, value: f64 },
    #[error("line {line} connects bus {bus} to itself")]
    SelfLoop { line: usize, bus: usize },
    #[error("line {line} references bus {bus}, but the network has {n} buses")]
    BusOutOfRange { line: usize, bus: usize, n: usize },
    #[error("line {line} has resistance {value}; resistances must be positive and finite")]
    BadResistance { line: usize, value: f64 },
    #[error(
        "lines {first} and {second} both connect buses {i} and {j}; combine parallel lines \
         into one equivalent resistance"
    )]
    ParallelLines {
        first: usize,
        second: usize,
        i: usize,
        j: usize,
    },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("{what} has shape {found:?}, expected {expected:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{field}[{row}][{col}] = {value} is negative; {field} >= 0 is required")]
    NegativeEntry {
        field: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("constraint structure is incompatible with the network: {}", format_entries(.0))]
    StructuralInfeasibility(Vec<OffDiagonalViolation>),
    #[error("assembled problem violates {} standing-assumption entries", .0.violations.len())]
    Refused(Box<ValidationReport>),
    #[error("design is missing {0:?}")]
    MissingDesignField(&'static str),
    #[error("network file parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn format_entries(entries: &[OffDiagonalViolation]) -> String {
    entries
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// A resistive line between two buses (zero-based indices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcNetwork {
    capacitances: Vec<f64>,
    lines: Vec<Line>,
}

impl DcNetwork {
    pub fn new(capacitances: Vec<f64>, lines: Vec<Line>) -> Result<Self, DcNetError> {
        let n = capacitances.len();
        if n == 0 {
            return Err(DcNetError::Empty);
        }
        if let Some((bus, &value)) = capacitances
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c > 0.0))
        {
            return Err(DcNetError::BadCapacitance { bus, value });
        }
        let mut seen = std::collections::BTreeMap::new();
        for (idx, line) in lines.iter().enumerate() {
            for bus in [line.from, line.to] {
                if bus >= n {
                    return Err(DcNetError::BusOutOfRange { line: idx, bus, n });
                }
            }
            if line.from == line.to {
                return Err(DcNetError::SelfLoop {
                    line: idx,
                    bus: line.from,
                });
            }
            if !(line.resistance.is_finite() && line.resistance > 0.0) {
                return Err(DcNetError::BadResistance {
                    line: idx,
                    value: line.resistance,
                });
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if let Some(first) = seen.insert(key, idx) {
                return Err(DcNetError::ParallelLines {
                    first,
                    second: idx,
                    i: key.0,
                    j: key.1,
                });
            }
        }
        Ok(DcNetwork {
            capacitances,
            lines,
        })
    }

    pub fn n(&self) -> usize {
        self.capacitances.len()
    }

    pub fn capacitances(&self) -> &[f64] {
        &self.capacitances
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Conductance `1/R_ij` of the line between `i` and `j`, if any.
    pub fn conductance(&self, i: usize, j: usize) -> Option<f64> {
        self.lines
            .iter()
            .find(|l| (l.from, l.to) == (i, j) || (l.from, l.to) == (j, i))
            .map(|l| 1.0 / l.resistance)
    }

    /// Parses the network file format (bus indices in the file are 1-based).
    pub fn from_json(text: &str) -> Result<Self, DcNetError> {
        let file: NetworkFile = serde_json::from_str(text).map_err(parse_error)?;
        file.into_network()
    }
}

fn parse_error(err: serde_json::Error) -> DcNetError {
    DcNetError::Parse {
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LineRecord {
    i: usize,
    j: usize,
    #[serde(rename = "R")]
    r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkFile {
    capacitances: Vec<f64>,
    #[serde(default)]
    lines: Vec<LineRecord>,
}

impl NetworkFile {
    fn into_network(self) -> Result<DcNetwork, DcNetError> {
        let n = self.capacitances.len();
        let lines = self
            .lines
            .iter()
            .enumerate()
            .map(|(idx, rec)| {
                for bus in [rec.i, rec.j] {
                    if bus == 0 || bus > n {
                        return Err(DcNetError::BusOutOfRange { line: idx, bus, n });
                    }
                }
                Ok(Line {
                    from: rec.i - 1,
                    to: rec.j - 1,
                    resistance: rec.r,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        DcNetwork::new(self.capacitances, lines)
    }
}

/// Weighted Laplacian: `-1/R_ij` off the diagonal, conductance sums on it.
pub fn build_laplacian(net: &DcNetwork) -> Array2<f64> {
    let n = net.n();
    let mut lap = Array2::zeros((n, n));
    for line in &net.lines {
        let c = 1.0 / line.resistance;
        lap[[line.from, line.to]] -= c;
        lap[[line.to, line.from]] -= c;
        lap[[line.from, line.from]] += c;
        lap[[line.to, line.to]] += c;
    }
    lap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedSystem {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub f: Array2<f64>,
    pub h: f64,
}

/// Explicit-Euler discretization with step `h`.
pub fn discretize(net: &DcNetwork, h: f64) -> Result<DiscretizedSystem, DcNetError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(DcNetError::InvalidStep(h));
    }
    let n = net.n();
    let lap = build_laplacian(net);
    let mut a = Array2::zeros((n, n));
    let mut b = Array2::zeros((n, n));
    for i in 0..n {
        let scale = h / net.capacitances[i];
        b[[i, i]] = scale;
        for j in 0..n {
            let identity = if i == j { 1.0 } else { 0.0 };
            a[[i, j]] = identity - scale * lap[[i, j]];
        }
    }
    Ok(DiscretizedSystem {
        a,
        f: b.clone(),
        b,
        h,
    })
}

/// An off-diagonal entry where `e_ij + g_ij` exceeds what the line allows.
/// Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffDiagonalViolation {
    pub row: usize,
    pub col: usize,
    /// `e_ij + g_ij`.
    pub value: f64,
    /// `1/R_ij`, or 0 when no line connects the buses.
    pub limit: f64,
    pub has_line: bool,
}

impl fmt::Display for OffDiagonalViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.has_line {
            write!(
                f,
                "e+g at ({}, {}) is {} > 1/R = {}",
                self.row, self.col, self.value, self.limit
            )
        } else {
            write!(
                f,
                "e+g at ({}, {}) is {} but no line connects these buses; E and G must \
                 inherit the zero pattern of the Laplacian",
                self.row, self.col, self.value
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepBound {
    /// Largest feasible step and the bus whose diagonal condition binds.
    Bounded { h_max: f64, binding_bus: usize },
    /// No diagonal condition constrains `h` (isolated buses, `E = G = 0`).
    Unbounded,
}

fn check_square(what: &'static str, m: ArrayView2<'_, f64>, n: usize) -> Result<(), DcNetError> {
    if m.dim() != (n, n) {
        return Err(DcNetError::DimensionMismatch {
            what,
            expected: (n, n),
            found: m.dim(),
        });
    }
    if let Some(((row, col), &value)) = m.indexed_iter().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(DcNetError::NegativeEntry {
            field: what,
            row,
            col,
            value,
        });
    }
    Ok(())
}

/// Entries where `E + G` is incompatible with the line structure.
pub fn off_diagonal_violations(
    net: &DcNetwork,
    e: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
) -> Vec<OffDiagonalViolation> {
    let n = net.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let value = e[[i, j]] + g[[i, j]];
            match net.conductance(i, j) {
                Some(limit) if value > limit => out.push(OffDiagonalViolation {
                    row: i,
                    col: j,
                    value,
                    limit,
                    has_line: true,
                }),
                None if value != 0.0 => out.push(OffDiagonalViolation {
                    row: i,
                    col: j,
                    value,
                    limit: 0.0,
                    has_line: false,
                }),
                _ => {}
            }
        }
    }
    out
}

/// Largest `h` with `(e_ii + g_ii) + sum_j 1/R_ij <= C_i / h` at every bus.
///
/// Off-diagonal conditions do not depend on `h`; if any fails the network is
/// reported as structurally infeasible instead. The analytic bound is
/// stepped down by at most a few ulps so that [`check_network_condition`]
/// passes at `h_max` with zero slack.
pub fn max_step_size(
    net: &DcNetwork,
    e: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
) -> Result<StepBound, DcNetError> {
    let n = net.n();
    check_square("E", e, n)?;
    check_square("G", g, n)?;
    let violations = off_diagonal_violations(net, e, g);
    if !violations.is_empty() {
        return Err(DcNetError::StructuralInfeasibility(violations));
    }

    let lap = build_laplacian(net);
    let mut bound: Option<(f64, usize)> = None;
    for i in 0..n {
        let demand = e[[i, i]] + g[[i, i]] + lap[[i, i]];
        if demand > 0.0 {
            let h = net.capacitances[i] / demand;
            if bound.is_none_or(|(best, _)| h < best) {
                bound = Some((h, i));
            }
        }
    }
    let Some((mut h_max, binding_bus)) = bound else {
        return Ok(StepBound::Unbounded);
    };

    for _ in 0..MAX_STEP_NUDGES {
        if check_network_condition(net, h_max, e, g, 0.0)?.ok() {
            break;
        }
        h_max = next_down(h_max);
    }
    Ok(StepBound::Bounded { h_max, binding_bus })
}

fn next_down(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    f64::from_bits(x.to_bits() - 1)
}

/// Evaluates `I - h C^-1 L_R >= h C^-1 E + h C^-1 G` entrywise.
pub fn check_network_condition(
    net: &DcNetwork,
    h: f64,
    e: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    slack: f64,
) -> Result<ConditionCheck, DcNetError> {
    let n = net.n();
    check_square("E", e, n)?;
    check_square("G", g, n)?;
    let sys = discretize(net, h)?;
    let mut rhs = Array2::zeros((n, n));
    for i in 0..n {
        let scale = sys.b[[i, i]];
        for j in 0..n {
            rhs[[i, j]] = scale * e[[i, j]] + scale * g[[i, j]];
        }
    }
    Ok(ConditionCheck::from_bounds(
        Condition::Positivity,
        sys.a.view(),
        rhs.view(),
        slack,
    ))
}

/// Constraint structure and cost weights for a network problem. All
/// matrices are `n x n` and all vectors length `n` (one input and one
/// disturbance per bus).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDesign {
    pub e: Array2<f64>,
    pub g: Array2<f64>,
    pub s: Array1<f64>,
    pub r: Array1<f64>,
    pub gamma: Array1<f64>,
}

/// Design block as read from JSON; every key is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DesignFile {
    #[serde(rename = "E", default)]
    pub e: Option<Vec<Vec<f64>>>,
    #[serde(rename = "G", default)]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub s: Option<Vec<f64>>,
    #[serde(default)]
    pub r: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
}

impl DesignFile {
    pub fn from_json(text: &str) -> Result<Self, DcNetError> {
        serde_json::from_str(text).map_err(parse_error)
    }

    /// `E` and `G`, defaulting to zero matrices.
    pub fn constraints(&self, n: usize) -> Result<(Array2<f64>, Array2<f64>), DcNetError> {
        let matrix = |field: &'static str, rows: &Option<Vec<Vec<f64>>>| match rows {
            Some(rows) => matrix_from_rows(field, rows.clone()).map_err(DcNetError::from),
            None => Ok(Array2::zeros((n, n))),
        };
        Ok((matrix("E", &self.e)?, matrix("G", &self.g)?))
    }

    /// Full design; `s` is required, `r` and `gamma` default to zero.
    pub fn design(&self, n: usize) -> Result<NetworkDesign, DcNetError> {
        let (e, g) = self.constraints(n)?;
        let s = self.s.clone().ok_or(DcNetError::MissingDesignField("s"))?;
        let vector = |v: &Option<Vec<f64>>| v.clone().map_or_else(|| Array1::zeros(n), Array1::from);
        Ok(NetworkDesign {
            e,
            g,
            s: Array1::from(s),
            r: vector(&self.r),
            gamma: vector(&self.gamma),
        })
    }
}

/// Builds the network problem, refusing it unless both standing assumptions
/// hold.
pub fn assemble_problem(
    net: &DcNetwork,
    h: f64,
    design: &NetworkDesign,
) -> Result<ProblemInstance, DcNetError> {
    let n = net.n();
    let positivity = check_network_condition(net, h, design.e.view(), design.g.view(), 0.0)?;
    let sys = discretize(net, h)?;
    let inst = ProblemInstance::new(ProblemParts {
        a: sys.a,
        b: sys.b,
        f: sys.f,
        e: design.e.clone(),
        g: design.g.clone(),
        s: design.s.clone(),
        r: design.r.clone(),
        gamma: design.gamma.clone(),
    })?;
    debug_assert_eq!(inst.n(), n);
    let cost = model::check_cost_condition(&inst, 0.0);
    if !positivity.ok() || !cost.ok() {
        return Err(DcNetError::Refused(Box::new(ValidationReport::from_checks(
            positivity, cost,
        ))));
    }
    Ok(inst)
}
