use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use posminimax::bellman::{self, IterationOptions, IterationResult, IterationStatus};
use posminimax::dcnet::{self, DcNetError, DcNetwork, DesignFile, StepBound};
use posminimax::model::{self, ProblemInstance};
use posminimax::oracle::{self, OracleLimits};
use posminimax::simulate::{self, DisturbancePolicy};
use posminimax::GainMatrix;

use crate::{DcnetArgs, IterationArgs, OracleArgs, PolicyArg, SimulateArgs, SynthArgs, ValidateArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Violation = 1,
    InputError = 2,
    NotConverged = 3,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load(path: &Path) -> Result<ProblemInstance> {
    let loaded = model::load_problem_with_warnings(&read(path)?)
        .with_context(|| format!("invalid problem file {}", path.display()))?;
    for warning in &loaded.warnings {
        eprintln!("warning: {}: {warning}", path.display());
    }
    Ok(loaded.instance)
}

fn emit(report: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn human(enabled: bool, line: impl FnOnce() -> String) {
    if enabled {
        eprintln!("{}", line());
    }
}

fn parse_vector(text: &str, n: usize, what: &str) -> Result<Array1<f64>> {
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("{what} must be a comma-separated list of numbers"))?;
    if values.len() != n {
        bail!("{what} has {} entries, expected {n}", values.len());
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        bail!("{what} must be nonnegative and finite, got {v}");
    }
    Ok(Array1::from(values))
}

fn rows(m: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn options(args: &IterationArgs) -> IterationOptions {
    IterationOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        cap: args.cap,
        record_history: false,
    }
}

pub fn validate(args: &ValidateArgs, verbose: bool) -> Result<Status> {
    let inst = load(&args.problem)?;
    let report = model::validate_with_slack(&inst, args.slack);
    emit(&serde_json::to_value(&report)?, args.out.as_deref())?;
    human(verbose, || {
        format!(
            "positivity: {}, cost: {}, {} violation(s)",
            ok_str(report.positivity_ok),
            ok_str(report.cost_ok),
            report.violations.len()
        )
    });
    Ok(if report.is_valid() {
        Status::Ok
    } else {
        Status::Violation
    })
}

fn ok_str(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "violated"
    }
}

/// Validates and runs value iteration; `Err(status)` carries the report
/// that was already emitted for an early exit.
fn solve(
    inst: &ProblemInstance,
    args: &IterationArgs,
    out: Option<&Path>,
) -> Result<std::result::Result<IterationResult, Status>> {
    let report = model::validate(inst);
    if !report.is_valid() {
        emit(
            &json!({ "status": "NotValidated", "validation": report }),
            out,
        )?;
        return Ok(Err(Status::Violation));
    }
    Ok(Ok(bellman::value_iterate(inst, &options(args))?))
}

pub fn synth(args: &SynthArgs, verbose: bool) -> Result<Status> {
    let inst = load(&args.problem)?;
    let x0 = args
        .x0
        .as_deref()
        .map(|t| parse_vector(t, inst.n(), "--x0"))
        .transpose()?;
    let result = match solve(&inst, &args.iteration, args.out.as_deref())? {
        Ok(result) => result,
        Err(status) => return Ok(status),
    };
    let value = &result.value;
    let mut report = json!({
        "status": result.status,
        "iterations": value.iterations,
        "step_change": value.residual_inf_norm,
        "p": value.p.to_vec(),
    });

    if result.status != IterationStatus::Converged {
        emit(&report, args.out.as_deref())?;
        human(verbose, || {
            format!("{} after {} iterations", result.status, value.iterations)
        });
        return Ok(Status::NotConverged);
    }

    let k = bellman::synthesize_gain(value.p.view(), &inst)?;
    let l = bellman::adversary_gain(value.p.view(), &inst)?;
    let residual = bellman::bellman_residual(value.p.view(), &inst)?;
    let map = report.as_object_mut().expect("object literal");
    map.insert(
        "residual_inf_norm".into(),
        json!(residual.iter().fold(0.0f64, |a, v| a.max(v.abs()))),
    );
    map.insert("K".into(), json!(rows(k.matrix())));
    map.insert("K_signs".into(), json!(k.signs()));
    map.insert("L".into(), json!(rows(l.matrix())));
    map.insert("L_signs".into(), json!(l.signs()));
    if let Some(x0) = &x0 {
        let cost = bellman::optimal_cost(value.p.view(), x0.view())?;
        map.insert("x0".into(), json!(x0.to_vec()));
        map.insert("optimal_cost".into(), json!(cost));
    }
    emit(&report, args.out.as_deref())?;
    human(verbose, || {
        format!(
            "Converged after {} iterations, p = {:?}",
            value.iterations,
            value.p.to_vec()
        )
    });
    Ok(Status::Ok)
}

fn read_gain(path: &Path, key: &str) -> Result<Option<GainMatrix>> {
    let value: Value = serde_json::from_str(&read(path)?)
        .with_context(|| format!("invalid gain file {}", path.display()))?;
    let Some(entry) = value.get(key) else {
        return Ok(None);
    };
    let rows: Vec<Vec<f64>> = serde_json::from_value(entry.clone())
        .with_context(|| format!("{key} in {} must be an array of rows", path.display()))?;
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        bail!("{key} in {} must be a nonempty rectangular matrix", path.display());
    }
    let flat = rows.into_iter().flatten().collect();
    Ok(Some(GainMatrix::from_matrix(Array2::from_shape_vec(
        (nrows, ncols),
        flat,
    )?)))
}

pub fn simulate(args: &SimulateArgs, verbose: bool) -> Result<Status> {
    if args.horizon == 0 {
        bail!("--horizon must be at least 1");
    }
    if args.policy == PolicyArg::Random && args.seed.is_none() {
        bail!("--policy random requires --seed");
    }
    let inst = load(&args.problem)?;
    let x0 = match &args.x0 {
        Some(t) => parse_vector(t, inst.n(), "--x0")?,
        None => Array1::ones(inst.n()),
    };
    let result = match solve(&inst, &args.iteration, None)? {
        Ok(result) => result,
        Err(status) => return Ok(status),
    };
    if result.status != IterationStatus::Converged {
        emit(
            &json!({ "status": result.status, "iterations": result.value.iterations }),
            None,
        )?;
        return Ok(Status::NotConverged);
    }
    let p = &result.value.p;

    let file_k = args.gain.as_deref().map(|g| read_gain(g, "K")).transpose()?;
    let file_l = args.gain.as_deref().map(|g| read_gain(g, "L")).transpose()?;
    let k = match file_k.flatten() {
        Some(k) => k,
        None => bellman::synthesize_gain(p.view(), &inst)?,
    };
    let policy = match args.policy {
        PolicyArg::Worst => DisturbancePolicy::WorstCase(match file_l.flatten() {
            Some(l) => l,
            None => bellman::adversary_gain(p.view(), &inst)?,
        }),
        PolicyArg::Zero => DisturbancePolicy::Zero,
        PolicyArg::Random => DisturbancePolicy::RandomAdmissible {
            seed: args.seed.expect("checked above"),
        },
    };
    let policy_name = policy.name();

    let traj = simulate::simulate(&inst, &k, policy, x0.view(), args.horizon)?;
    if let Some(path) = &args.out {
        fs::write(path, traj.to_csv())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }

    let accumulated = simulate::accumulated_cost(&traj);
    let initial = p.dot(&x0);
    let terminal = p.dot(&traj.final_state());
    let telescoping = simulate::telescoping_errors(&traj, p.view())
        .into_iter()
        .fold(0.0f64, f64::max);
    let gap = accumulated + terminal - initial;
    let bound_tol = 1e-9 * (1.0 + initial.abs());
    let report = json!({
        "policy": policy_name,
        "horizon": args.horizon,
        "seed": args.seed,
        "x0": x0.to_vec(),
        "p": p.to_vec(),
        "accumulated_cost": accumulated,
        "initial_value": initial,
        "terminal_value": terminal,
        "telescoping_max_error": telescoping,
        "telescoping_gap": gap,
        "bound_holds": gap <= bound_tol,
    });
    emit(&report, None)?;
    human(verbose, || {
        format!(
            "{policy_name}: cost {accumulated} over {} steps, p'x0 = {initial}",
            args.horizon
        )
    });
    Ok(Status::Ok)
}

pub fn oracle_check(args: &OracleArgs, verbose: bool) -> Result<Status> {
    let inst = load(&args.problem)?;
    let limits = OracleLimits::default();
    limits.check(&inst, args.horizon)?;
    let report = model::validate(&inst);
    if !report.is_valid() {
        emit(
            &json!({ "status": "NotValidated", "validation": report }),
            args.out.as_deref(),
        )?;
        return Ok(Status::Violation);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let samples: Vec<Array1<f64>> = (0..args.samples)
        .map(|_| Array1::from_shape_fn(inst.n(), |_| 10.0 * rng.random::<f64>()))
        .collect();
    let check = oracle::verify_linear_value(&inst, args.horizon, &samples, args.tol, &limits)?;
    let mut value = serde_json::to_value(&check)?;
    let map = value.as_object_mut().expect("struct serializes to an object");
    map.insert("seed".into(), json!(args.seed));
    map.insert("tol".into(), json!(args.tol));
    emit(&value, args.out.as_deref())?;
    human(verbose, || {
        format!(
            "oracle check {} (max scaled deviation {:e})",
            if check.passed { "passed" } else { "FAILED" },
            check.max_deviation
        )
    });
    Ok(if check.passed {
        Status::Ok
    } else {
        Status::Violation
    })
}

pub fn dcnet(args: &DcnetArgs, verbose: bool) -> Result<Status> {
    if args.h.is_none() && !args.hmax {
        bail!("nothing to do: pass --h to assemble a problem and/or --hmax");
    }
    let network_text = read(&args.network)?;
    let net = DcNetwork::from_json(&network_text)
        .with_context(|| format!("invalid network file {}", args.network.display()))?;
    let design_text = match &args.design {
        Some(path) => read(path)?,
        None => network_text,
    };
    let design = DesignFile::from_json(&design_text).context("invalid design block")?;
    let (e, g) = design.constraints(net.n())?;

    let mut report = serde_json::Map::new();
    report.insert("n".into(), json!(net.n()));
    let mut status = Status::Ok;

    if args.hmax {
        match dcnet::max_step_size(&net, e.view(), g.view()) {
            Ok(StepBound::Bounded { h_max, binding_bus }) => {
                report.insert("h_max".into(), json!(h_max));
                report.insert("binding_bus".into(), json!(binding_bus + 1));
                human(verbose, || format!("h_max = {h_max} (bus {})", binding_bus + 1));
            }
            Ok(StepBound::Unbounded) => {
                report.insert("h_max".into(), Value::Null);
                report.insert("unbounded".into(), json!(true));
                human(verbose, || "h_max is unbounded".to_string());
            }
            Err(DcNetError::StructuralInfeasibility(entries)) => {
                human(verbose, || format!("{} structural violation(s)", entries.len()));
                report.insert("structural_violations".into(), json!(entries
                    .iter()
                    .map(|v| json!({
                        "row": v.row + 1,
                        "col": v.col + 1,
                        "value": v.value,
                        "limit": v.limit,
                        "has_line": v.has_line,
                    }))
                    .collect::<Vec<_>>()));
                status = Status::Violation;
            }
            Err(err) => return Err(err.into()),
        }
    }

    if let (Some(h), Status::Ok) = (args.h, status) {
        report.insert("h".into(), json!(h));
        let design = design.design(net.n())?;
        match dcnet::assemble_problem(&net, h, &design) {
            Ok(inst) => {
                report.insert("feasible".into(), json!(true));
                write_problem(&inst, args.out.as_deref())?;
                human(verbose, || format!("assembled a validated problem at h = {h}"));
            }
            Err(DcNetError::Refused(validation)) => {
                report.insert("feasible".into(), json!(false));
                report.insert("validation".into(), serde_json::to_value(&*validation)?);
                human(verbose, || {
                    format!("refused: {} violation(s)", validation.violations.len())
                });
                status = Status::Violation;
            }
            Err(err) => return Err(err.into()),
        }
    }

    let text = serde_json::to_string_pretty(&Value::Object(report))?;
    if args.out.is_some() || args.h.is_none() {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
    Ok(status)
}

fn write_problem(inst: &ProblemInstance, out: Option<&Path>) -> Result<()> {
    let text = inst.to_json();
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
