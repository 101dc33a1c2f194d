//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::process::Command;
use std::time::Instant;

use ndarray::{array, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posminimax::bellman::{residual_tolerance, IterationStatus};
use posminimax::dcnet::{self, DcNetwork, Line, NetworkDesign, StepBound};
use posminimax::generate::{random_instance, random_network};
use posminimax::oracle::{self, OracleLimits};
use posminimax::simulate::{self, DisturbancePolicy};
use posminimax::{
    adversary_gain, bellman_residual, bellman_step, synthesize_gain, value_iterate,
    IterationOptions, ProblemInstance,
};

/// Oracle work per (instance, horizon, state): at most `2^ORACLE_BITS` leaves.
const ORACLE_BITS: usize = 18;

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn instance(rng: &mut ChaCha8Rng, max_n: usize, max_ml: usize) -> ProblemInstance {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_ml);
    let l = rng.random_range(1..=max_ml);
    random_instance(rng, n, m, l)
}

fn state(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.random_range(0.0..=10.0))
}

fn vertices(bounds: ArrayView1<'_, f64>) -> Vec<Array1<f64>> {
    (0..1usize << bounds.len())
        .map(|mask| {
            Array1::from_iter(
                bounds
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| if mask >> i & 1 == 1 { b } else { -b }),
            )
        })
        .collect()
}

fn s1() -> ProblemInstance {
    ProblemInstance::scalar(0.9, 0.2, 0.1, 1.0, 1.0, 1.0, 0.1, 0.05).unwrap()
}

fn scalar_golden() -> Outcome {
    let start = Instant::now();
    let inst = s1();
    let res = value_iterate(&inst, &IterationOptions::default()).unwrap();
    let p = res.value.p[0];
    let k = synthesize_gain(res.value.p.view(), &inst).unwrap();
    let l = adversary_gain(res.value.p.view(), &inst).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let passed = res.status == IterationStatus::Converged
        && (p - 4.25).abs() <= 1e-8
        && k.matrix() == array![[1.0]]
        && l.matrix() == array![[1.0]]
        && elapsed < 0.1;
    outcome(
        passed,
        format!(
            "p = {p:.12}, |p - 4.25| = {:.1e}, K = {:?}, L = {:?}, {:.4} s",
            (p - 4.25).abs(),
            k.matrix().as_slice().unwrap(),
            l.matrix().as_slice().unwrap(),
            elapsed
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let limits = OracleLimits::default();
    let (mut checks, mut worst, mut failures, mut deepest_full) = (0, 0.0f64, 0, 0);
    let instances = 50;
    for _ in 0..instances {
        let inst = instance(&mut rng, 4, 3);
        let bits = inst.m() + inst.l();
        let max_k = (ORACLE_BITS / bits).min(6);
        if max_k == 6 {
            deepest_full += 1;
        }
        let samples: Vec<_> = (0..10).map(|_| state(&mut rng, inst.n())).collect();
        for k in 0..=max_k {
            let check = oracle::verify_linear_value(&inst, k, &samples, 1e-9, &limits).unwrap();
            checks += 1;
            worst = worst.max(check.max_deviation);
            failures += usize::from(!check.passed);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && elapsed < 60.0,
        format!(
            "{instances} instances x 10 states, {checks} (instance, k) checks, {deepest_full} instances \
             run to k = 6, others to k = floor({ORACLE_BITS}/(m+l)); max scaled deviation {worst:.1e}, \
             {failures} failures, {elapsed:.1} s"
        ),
    )
}

fn monotone_iterates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut ulp_wobbles, mut negatives) = (0, 0, 0);
    for _ in 0..100 {
        let inst = instance(&mut rng, 6, 6);
        let mut p = Array1::zeros(inst.n());
        for _ in 0..20 {
            let next = bellman_step(p.view(), &inst).unwrap();
            negatives += next.iter().filter(|v| **v < 0.0).count();
            for (a, b) in next.iter().zip(&p) {
                if a < b {
                    if *a >= b - 4.0 * f64::EPSILON * b {
                        ulp_wobbles += 1;
                    } else {
                        violations += 1;
                    }
                }
            }
            p = next;
        }
    }
    outcome(
        violations == 0 && negatives == 0,
        format!(
            "100 instances x 20 iterations: {violations} decreases, {negatives} negative entries \
             ({ulp_wobbles} decreases within 4 ulps at converged entries)"
        ),
    )
}

/// Converged instances shared by the residual and gain criteria.
fn converged_instances() -> Vec<(ProblemInstance, Array1<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    (0..100)
        .filter_map(|_| {
            let inst = instance(&mut rng, 6, 6);
            let res = value_iterate(&inst, &IterationOptions::default()).unwrap();
            (res.status == IterationStatus::Converged).then_some((inst, res.value.p))
        })
        .collect()
}

fn residual_bound(converged: &[(ProblemInstance, Array1<f64>)]) -> Outcome {
    let tol = IterationOptions::default().tol;
    let mut worst_ratio = 0.0f64;
    let mut failures = 0;
    for (inst, p) in converged {
        let residual = bellman_residual(p.view(), inst).unwrap();
        let size = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = residual_tolerance(inst, tol);
        worst_ratio = worst_ratio.max(size / bound);
        failures += usize::from(size > bound);
    }
    outcome(
        failures == 0 && !converged.is_empty(),
        format!(
            "{} converged results, {failures} above the bound, worst residual/bound = {worst_ratio:.2e}",
            converged.len()
        ),
    )
}

fn gain_structure(converged: &[(ProblemInstance, Array1<f64>)]) -> Outcome {
    let mut failures = 0;
    for (inst, p) in converged {
        let k = synthesize_gain(p.view(), inst).unwrap();
        let l = adversary_gain(p.view(), inst).unwrap();
        let k_ok = k
            .matrix()
            .iter()
            .zip(inst.e())
            .all(|(kv, ev)| kv.abs().to_bits() == ev.to_bits() && (*kv == 0.0) == (*ev == 0.0));
        let l_ok = l
            .matrix()
            .iter()
            .zip(inst.g())
            .all(|(lv, gv)| lv.abs().to_bits() == gv.to_bits());
        failures += usize::from(!(k_ok && l_ok));
    }
    outcome(
        failures == 0 && !converged.is_empty(),
        format!("{} converged instances, {failures} with |K| != E or |L| != G", converged.len()),
    )
}

fn telescoping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut used, mut worst_step, mut worst_total, mut failures) = (0, 0.0f64, 0.0f64, 0);
    while used < 20 {
        let inst = instance(&mut rng, 6, 6);
        let res = value_iterate(&inst, &IterationOptions::default()).unwrap();
        if res.status != IterationStatus::Converged {
            continue;
        }
        used += 1;
        let p = res.value.p;
        let k = synthesize_gain(p.view(), &inst).unwrap();
        let l = adversary_gain(p.view(), &inst).unwrap();
        let x0 = state(&mut rng, inst.n());
        let traj = simulate::simulate(&inst, &k, DisturbancePolicy::WorstCase(l), x0.view(), 100).unwrap();
        let scale = 1.0 + p.dot(&x0);
        let step = simulate::telescoping_errors(&traj, p.view())
            .into_iter()
            .fold(0.0f64, f64::max);
        let total = (simulate::accumulated_cost(&traj) + p.dot(&traj.final_state()) - p.dot(&x0)).abs();
        worst_step = worst_step.max(step / scale);
        worst_total = worst_total.max(total);
        failures += usize::from(step > 1e-9 * scale || total > 1e-7);
    }
    outcome(
        failures == 0,
        format!(
            "20 instances, T = 100: max per-step error / (1 + p'x0) = {worst_step:.1e}, \
             max |sum g + p'x(T) - p'x0| = {worst_total:.1e}"
        ),
    )
}

fn positive_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lowest = f64::INFINITY;
    let mut trials = 0;
    for i in 0..20 {
        let inst = instance(&mut rng, 6, 6);
        let x0 = state(&mut rng, inst.n());
        let report = simulate::check_positive_invariance(&inst, x0.view(), 50, 50, 100 + i);
        lowest = lowest.min(report.min_entry);
        trials += report.trials;
    }
    outcome(
        lowest >= -1e-12,
        format!("{trials} rollouts of 50 steps over 20 instances, smallest state entry {lowest:.3e}"),
    )
}

fn divergence_detection() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("sd.json");
    std::fs::write(
        &path,
        r#"{"A":[[1.1]],"B":[[1.0]],"F":[[1.0]],"E":[[0.0]],"G":[[0.0]],"s":[1.0],"r":[0.0],"gamma":[0.0]}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_posminimax"))
        .arg("synth")
        .arg(&path)
        .output()
        .unwrap();
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap_or_default();
    let code = out.status.code();
    outcome(
        code == Some(3) && report["status"] == "Diverged",
        format!("status {}, exit code {code:?}", report["status"]),
    )
}

fn network_golden() -> Outcome {
    let line = |from, to| Line {
        from,
        to,
        resistance: 1.0,
    };
    let net = DcNetwork::new(vec![1.0; 3], vec![line(0, 1), line(1, 2)]).unwrap();
    let sys = dcnet::discretize(&net, 0.1).unwrap();
    let expected = array![[0.9, 0.1, 0.0], [0.1, 0.8, 0.1], [0.0, 0.1, 0.9]];
    let a_exact = sys.a == expected;

    let zero = Array2::<f64>::zeros((3, 3));
    let h_max = match dcnet::max_step_size(&net, zero.view(), zero.view()).unwrap() {
        StepBound::Bounded { h_max, .. } => h_max,
        StepBound::Unbounded => f64::NAN,
    };
    let at = dcnet::check_network_condition(&net, 0.5, zero.view(), zero.view(), 0.0)
        .unwrap()
        .ok();
    let beyond = dcnet::check_network_condition(&net, 0.5 * (1.0 + 1e-6), zero.view(), zero.view(), 0.0)
        .unwrap()
        .ok();
    outcome(
        a_exact && h_max == 0.5 && at && !beyond,
        format!(
            "A exact: {a_exact}, h_max = {h_max}, check at 0.5: {at}, at 0.5(1+1e-6): {beyond}"
        ),
    )
}

fn network_signs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut problems, mut failures) = (0, 0);
    while problems < 50 {
        let n = rng.random_range(1..=6);
        let net = random_network(&mut rng, n, 0.3);
        let mut e = Array2::zeros((n, n));
        let mut g = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i == j || net.conductance(i, j).is_some() {
                    e[[i, j]] = rng.random_range(0.0..0.3);
                    g[[i, j]] = rng.random_range(0.0..0.3);
                }
            }
        }
        let h = match dcnet::max_step_size(&net, e.view(), g.view()) {
            Ok(StepBound::Bounded { h_max, .. }) => h_max * rng.random_range(0.1..=1.0),
            Ok(StepBound::Unbounded) => 1.0,
            Err(_) => continue,
        };
        let r = Array1::from_shape_simple_fn(n, || rng.random_range(0.0..1.0));
        let gamma = Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0));
        let s = e.t().dot(&r) + 1.0;
        let design = NetworkDesign {
            e: e.clone(),
            g,
            s,
            r,
            gamma,
        };
        let Ok(inst) = dcnet::assemble_problem(&net, h, &design) else {
            continue;
        };
        problems += 1;
        let res = value_iterate(&inst, &IterationOptions::default()).unwrap();
        let k = synthesize_gain(res.value.p.view(), &inst).unwrap();
        failures += usize::from(k.matrix() != e);
    }
    outcome(
        failures == 0,
        format!("{problems} assembled network problems with r >= 0, {failures} with K != +E"),
    )
}

fn one_step_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut pairs, mut failures) = (0, 0);
    while pairs < 50 {
        let inst = instance(&mut rng, 5, 4);
        let res = value_iterate(&inst, &IterationOptions::default()).unwrap();
        if res.status != IterationStatus::Converged {
            continue;
        }
        pairs += 1;
        let p = res.value.p;
        let x = state(&mut rng, inst.n());
        let k = synthesize_gain(p.view(), &inst).unwrap();
        let l = adversary_gain(p.view(), &inst).unwrap();

        let input = |u: &Array1<f64>| inst.r().dot(u) + p.dot(&inst.b().dot(u));
        let best_u = vertices(inst.e().dot(&x).view())
            .iter()
            .map(input)
            .fold(f64::INFINITY, f64::min);
        let chosen_u = input(&-k.apply(x.view()));

        let disturbance = |w: &Array1<f64>| -inst.gamma().dot(w) + p.dot(&inst.f().dot(w));
        let best_w = vertices(inst.g().dot(&x).view())
            .iter()
            .map(disturbance)
            .fold(f64::NEG_INFINITY, f64::max);
        let chosen_w = disturbance(&l.apply(x.view()));

        let u_ok = chosen_u <= best_u + 1e-12 * (1.0 + best_u.abs());
        let w_ok = chosen_w >= best_w - 1e-12 * (1.0 + best_w.abs());
        failures += usize::from(!(u_ok && w_ok));
    }
    outcome(
        failures == 0,
        format!("{pairs} (instance, state) pairs with m, l <= 4, {failures} not optimal over vertices"),
    )
}

fn main() {
    let converged = converged_instances();
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("scalar golden fixed point", Box::new(scalar_golden)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("monotonicity and nonnegativity", Box::new(monotone_iterates)),
        ("fixed-point residual", Box::new(|| residual_bound(&converged))),
        ("gain structure", Box::new(|| gain_structure(&converged))),
        ("telescoping identity", Box::new(telescoping)),
        ("positive invariance", Box::new(positive_invariance)),
        ("divergence detection", Box::new(divergence_detection)),
        ("DC network golden", Box::new(network_golden)),
        ("network controller signs", Box::new(network_signs)),
        ("one-step optimality", Box::new(one_step_optimality)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        failed += usize::from(!result.passed);
        println!(
            "criterion {:>2} {:<32} {}  {}",
            i + 1,
            name,
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
