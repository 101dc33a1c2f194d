//! Problem data for the minimax control problem, the two standing-assumption
//! checks (positive-orthant invariance and stage-cost nonnegativity) and the
//! JSON problem file format shared by every CLI command.
//!
//! The problem is
//!
//! ```text
//! inf_mu max_w  sum_t  s'x(t) + r'u(t) - gamma'w(t)
//!   x(t+1) = A x(t) + B u(t) + F w(t),   |u| <= E x,   |w| <= G x
//! ```
//!
//! with `A: n x n`, `B: n x m`, `F: n x l`, `E: m x n`, `G: l x n`.
//! Column `i` of `B` multiplies `u_i`; row `i` of `E` bounds it.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch between {first} and {second}: {detail}")]
    DimensionMismatch {
        first: &'static str,
        second: &'static str,
        detail: String,
    },
    #[error("{field} must have at least one row and one column")]
    Empty { field: &'static str },
    #[error("{field} is ragged: row {row} has {found} entries, expected {expected}")]
    Ragged {
        field: &'static str,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("{field}[{row}][{col}] = {value} violates the requirement {field} >= 0 elementwise")]
    Negative {
        field: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("{field}[{row}][{col}] is not a finite number")]
    NonFinite {
        field: &'static str,
        row: usize,
        col: usize,
    },
    #[error("problem file parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

impl ModelError {
    fn mismatch(first: &'static str, second: &'static str, detail: String) -> Self {
        ModelError::DimensionMismatch {
            first,
            second,
            detail,
        }
    }
}

/// Raw matrices and vectors of a problem, before shape validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemParts {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub f: Array2<f64>,
    pub e: Array2<f64>,
    pub g: Array2<f64>,
    pub s: Array1<f64>,
    pub r: Array1<f64>,
    pub gamma: Array1<f64>,
}

/// A shape-consistent problem instance with `E >= 0` and `G >= 0`.
///
/// Construction does not check the positivity and cost conditions; call
/// [`validate`] (or the individual checks) explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemFile", into = "ProblemFile")]
pub struct ProblemInstance {
    a: Array2<f64>,
    b: Array2<f64>,
    f: Array2<f64>,
    e: Array2<f64>,
    g: Array2<f64>,
    s: Array1<f64>,
    r: Array1<f64>,
    gamma: Array1<f64>,
}

impl ProblemInstance {
    pub fn new(parts: ProblemParts) -> Result<Self, ModelError> {
        let ProblemParts {
            a,
            b,
            f,
            e,
            g,
            s,
            r,
            gamma,
        } = parts;

        let n = a.nrows();
        for (name, mat) in [("A", &a), ("B", &b), ("F", &f), ("E", &e), ("G", &g)] {
            if mat.nrows() == 0 || mat.ncols() == 0 {
                return Err(ModelError::Empty { field: name });
            }
        }
        if a.ncols() != n {
            return Err(ModelError::mismatch(
                "A",
                "A",
                format!("A must be square, got {}x{}", n, a.ncols()),
            ));
        }
        let m = b.ncols();
        let l = f.ncols();
        let shape_checks: [(&'static str, &'static str, usize, usize, &str); 9] = [
            ("B", "A", b.nrows(), n, "rows of B must equal the state dimension"),
            ("F", "A", f.nrows(), n, "rows of F must equal the state dimension"),
            ("E", "B", e.nrows(), m, "rows of E must equal the columns of B"),
            ("E", "A", e.ncols(), n, "columns of E must equal the state dimension"),
            ("G", "F", g.nrows(), l, "rows of G must equal the columns of F"),
            ("G", "A", g.ncols(), n, "columns of G must equal the state dimension"),
            ("s", "A", s.len(), n, "length of s must equal the state dimension"),
            ("r", "B", r.len(), m, "length of r must equal the columns of B"),
            ("gamma", "F", gamma.len(), l, "length of gamma must equal the columns of F"),
        ];
        for (first, second, found, expected, what) in shape_checks {
            if found != expected {
                return Err(ModelError::mismatch(
                    first,
                    second,
                    format!("{what} ({found} != {expected})"),
                ));
            }
        }

        for (name, mat) in [("A", &a), ("B", &b), ("F", &f), ("E", &e), ("G", &g)] {
            if let Some(((row, col), _)) = mat.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(ModelError::NonFinite {
                    field: name,
                    row,
                    col,
                });
            }
        }
        for (name, vec) in [("s", &s), ("r", &r), ("gamma", &gamma)] {
            if let Some((row, _)) = vec.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(ModelError::NonFinite {
                    field: name,
                    row,
                    col: 0,
                });
            }
        }
        for (name, mat) in [("E", &e), ("G", &g)] {
            if let Some(((row, col), &value)) = mat.indexed_iter().find(|(_, v)| **v < 0.0) {
                return Err(ModelError::Negative {
                    field: name,
                    row,
                    col,
                    value,
                });
            }
        }

        Ok(ProblemInstance {
            a,
            b,
            f,
            e,
            g,
            s,
            r,
            gamma,
        })
    }

    /// Single-state, single-input, single-disturbance instance.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        a: f64,
        b: f64,
        f: f64,
        e: f64,
        g: f64,
        s: f64,
        r: f64,
        gamma: f64,
    ) -> Result<Self, ModelError> {
        let m = |v: f64| Array2::from_elem((1, 1), v);
        let v = |v: f64| Array1::from_elem(1, v);
        ProblemInstance::new(ProblemParts {
            a: m(a),
            b: m(b),
            f: m(f),
            e: m(e),
            g: m(g),
            s: v(s),
            r: v(r),
            gamma: v(gamma),
        })
    }

    pub fn into_parts(self) -> ProblemParts {
        ProblemParts {
            a: self.a,
            b: self.b,
            f: self.f,
            e: self.e,
            g: self.g,
            s: self.s,
            r: self.r,
            gamma: self.gamma,
        }
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Disturbance dimension.
    pub fn l(&self) -> usize {
        self.f.ncols()
    }

    pub fn a(&self) -> ArrayView2<'_, f64> {
        self.a.view()
    }

    pub fn b(&self) -> ArrayView2<'_, f64> {
        self.b.view()
    }

    pub fn f(&self) -> ArrayView2<'_, f64> {
        self.f.view()
    }

    pub fn e(&self) -> ArrayView2<'_, f64> {
        self.e.view()
    }

    pub fn g(&self) -> ArrayView2<'_, f64> {
        self.g.view()
    }

    pub fn s(&self) -> ArrayView1<'_, f64> {
        self.s.view()
    }

    pub fn r(&self) -> ArrayView1<'_, f64> {
        self.r.view()
    }

    pub fn gamma(&self) -> ArrayView1<'_, f64> {
        self.gamma.view()
    }

    /// Serializes to the problem file format.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&ProblemFile::from(self.clone()))
            .expect("problem file serialization is infallible");
        out.push('\n');
        out
    }
}

/// Which standing assumption a check evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `A - |B| E - |F| G >= 0`: the positive orthant is invariant.
    Positivity,
    /// `s - E'|r| + G'|gamma| >= 0`: the worst-case stage cost is nonnegative.
    Cost,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Positivity => f.write_str("A >= |B|E + |F|G"),
            Condition::Cost => f.write_str("s >= E'|r| - G'|gamma|"),
        }
    }
}

/// One entry where `lhs >= bound` fails. Indices are zero-based; for the
/// cost condition `col` is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    pub row: usize,
    pub col: usize,
    pub lhs: f64,
    pub bound: f64,
    pub margin: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} fails at ({}, {}): lhs {} < bound {} (margin {})",
            self.condition, self.row, self.col, self.lhs, self.bound, self.margin
        )
    }
}

/// Elementwise evaluation of one condition: `margins[i][j] = lhs - bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub slack: f64,
    pub margins: Vec<Vec<f64>>,
    pub violations: Vec<Violation>,
}

impl ConditionCheck {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn min_margin(&self) -> f64 {
        self.margins
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Builds a check from `lhs` and `bound` of identical shape; an entry
    /// passes iff `lhs - bound >= -slack`.
    pub(crate) fn from_bounds(
        condition: Condition,
        lhs: ArrayView2<'_, f64>,
        bound: ArrayView2<'_, f64>,
        slack: f64,
    ) -> Self {
        debug_assert_eq!(lhs.dim(), bound.dim());
        let mut violations = Vec::new();
        let margins = lhs
            .outer_iter()
            .zip(bound.outer_iter())
            .enumerate()
            .map(|(row, (lrow, brow))| {
                lrow.iter()
                    .zip(brow.iter())
                    .enumerate()
                    .map(|(col, (&lhs, &bound))| {
                        let margin = lhs - bound;
                        if margin.is_nan() || margin < -slack {
                            violations.push(Violation {
                                condition,
                                row,
                                col,
                                lhs,
                                bound,
                                margin,
                            });
                        }
                        margin
                    })
                    .collect()
            })
            .collect();
        ConditionCheck {
            condition,
            slack,
            margins,
            violations,
        }
    }
}

/// Combined result of both standing-assumption checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dim_ok: bool,
    pub positivity_ok: bool,
    pub cost_ok: bool,
    pub violations: Vec<Violation>,
    pub positivity_margins: Vec<Vec<f64>>,
    pub cost_margins: Vec<f64>,
}

impl ValidationReport {
    pub fn from_checks(positivity: ConditionCheck, cost: ConditionCheck) -> Self {
        let mut violations = positivity.violations;
        violations.extend(cost.violations);
        ValidationReport {
            dim_ok: true,
            positivity_ok: violations
                .iter()
                .all(|v| v.condition != Condition::Positivity),
            cost_ok: violations.iter().all(|v| v.condition != Condition::Cost),
            violations,
            positivity_margins: positivity.margins,
            cost_margins: cost.margins.into_iter().flatten().collect(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.dim_ok && self.positivity_ok && self.cost_ok
    }
}

/// `|B| E + |F| G`, the right-hand side of the positivity condition.
pub fn positivity_bound(inst: &ProblemInstance) -> Array2<f64> {
    inst.b.mapv(f64::abs).dot(&inst.e) + inst.f.mapv(f64::abs).dot(&inst.g)
}

/// `E'|r| - G'|gamma|`, the right-hand side of the cost condition.
pub fn cost_bound(inst: &ProblemInstance) -> Array1<f64> {
    inst.e.t().dot(&inst.r.mapv(f64::abs)) - inst.g.t().dot(&inst.gamma.mapv(f64::abs))
}

/// Checks `A - |B| E - |F| G >= -slack` entrywise.
pub fn check_positivity_condition(inst: &ProblemInstance, slack: f64) -> ConditionCheck {
    let bound = positivity_bound(inst);
    ConditionCheck::from_bounds(Condition::Positivity, inst.a.view(), bound.view(), slack)
}

/// Checks `s - E'|r| + G'|gamma| >= -slack` entrywise.
pub fn check_cost_condition(inst: &ProblemInstance, slack: f64) -> ConditionCheck {
    let bound = cost_bound(inst).insert_axis(Axis(1));
    let lhs = inst.s.view().insert_axis(Axis(1));
    ConditionCheck::from_bounds(Condition::Cost, lhs, bound.view(), slack)
}

/// Runs both checks with zero slack.
pub fn validate(inst: &ProblemInstance) -> ValidationReport {
    validate_with_slack(inst, 0.0)
}

pub fn validate_with_slack(inst: &ProblemInstance, slack: f64) -> ValidationReport {
    ValidationReport::from_checks(
        check_positivity_condition(inst, slack),
        check_cost_condition(inst, slack),
    )
}

/// On-disk layout of a problem: matrices as arrays of rows, vectors flat.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ProblemFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    s: Vec<f64>,
    r: Vec<f64>,
    gamma: Vec<f64>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, serde_json::Value>,
}

pub(crate) fn matrix_from_rows(
    field: &'static str,
    rows: Vec<Vec<f64>>,
) -> Result<Array2<f64>, ModelError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(ModelError::Empty { field });
    }
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(ModelError::Ragged {
            field,
            row,
            found: r.len(),
            expected: ncols,
        });
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((nrows, ncols), flat).expect("shape checked above"))
}

pub(crate) fn matrix_to_rows(mat: &Array2<f64>) -> Vec<Vec<f64>> {
    mat.outer_iter().map(|row| row.to_vec()).collect()
}

impl TryFrom<ProblemFile> for ProblemInstance {
    type Error = ModelError;

    fn try_from(file: ProblemFile) -> Result<Self, Self::Error> {
        ProblemInstance::new(ProblemParts {
            a: matrix_from_rows("A", file.a)?,
            b: matrix_from_rows("B", file.b)?,
            f: matrix_from_rows("F", file.f)?,
            e: matrix_from_rows("E", file.e)?,
            g: matrix_from_rows("G", file.g)?,
            s: Array1::from(file.s),
            r: Array1::from(file.r),
            gamma: Array1::from(file.gamma),
        })
    }
}

impl From<ProblemInstance> for ProblemFile {
    fn from(inst: ProblemInstance) -> Self {
        ProblemFile {
            a: matrix_to_rows(&inst.a),
            b: matrix_to_rows(&inst.b),
            f: matrix_to_rows(&inst.f),
            e: matrix_to_rows(&inst.e),
            g: matrix_to_rows(&inst.g),
            s: inst.s.to_vec(),
            r: inst.r.to_vec(),
            gamma: inst.gamma.to_vec(),
            extra: BTreeMap::new(),
        }
    }
}

/// A parsed problem together with warnings about ignored keys.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub instance: ProblemInstance,
    pub warnings: Vec<String>,
}

/// Parses a problem file, collecting a warning for every unknown key.
pub fn load_problem_with_warnings(text: &str) -> Result<LoadedProblem, ModelError> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|err| ModelError::Parse {
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    })?;
    let warnings = file
        .extra
        .keys()
        .map(|key| format!("ignoring unknown key {key:?}"))
        .collect();
    Ok(LoadedProblem {
        instance: ProblemInstance::try_from(file)?,
        warnings,
    })
}

/// Parses a problem file. Unknown keys are logged at warn level. The
/// standing assumptions are not checked.
pub fn load_problem(text: &str) -> Result<ProblemInstance, ModelError> {
    let loaded = load_problem_with_warnings(text)?;
    for warning in &loaded.warnings {
        log::warn!("{warning}");
    }
    Ok(loaded.instance)
}
