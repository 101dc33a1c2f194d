//! Random problem instances and networks for testing and benchmarking.
//!
//! Instances are built to satisfy both standing conditions by construction
//! and to have a finite value (the open-loop bound `A + |B|E + |F|G` has
//! column sums at most `0.9`).

use std::collections::HashSet;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::dcnet::{DcNetwork, Line};
use crate::model::{ProblemInstance, ProblemParts};

fn signed(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..=1.0))
}

/// Nonnegative matrix with roughly `density` of its entries nonzero.
fn sparse(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random_bool(density) {
            rng.random_range(0.0..=1.0)
        } else {
            0.0
        }
    })
}

/// A random instance with `n` states, `m` inputs and `l` disturbances that
/// passes [`crate::model::validate`] with zero slack. All sizes must be
/// at least 1.
pub fn random_instance(rng: &mut impl Rng, n: usize, m: usize, l: usize) -> ProblemInstance {
    let e = sparse(rng, m, n, 0.6);
    let g = sparse(rng, l, n, 0.6);
    let b = signed(rng, n, m);
    let f = signed(rng, n, l);
    let extra = sparse(rng, n, n, 0.7);

    let coupling = b.mapv(f64::abs).dot(&e) + f.mapv(f64::abs).dot(&g);
    // `A` itself contains `coupling`, so the bound counts it twice.
    let total = &coupling * 2.0 + &extra;
    let widest = total
        .columns()
        .into_iter()
        .map(|c| c.sum())
        .fold(0.0, f64::max);
    let scale = if widest > 0.0 { 0.9 / widest } else { 1.0 };

    let b = b * scale;
    let f = f * scale;
    let a = b.mapv(f64::abs).dot(&e) + f.mapv(f64::abs).dot(&g) + extra * scale;

    let r = Array1::from_shape_simple_fn(m, || rng.random_range(-1.0..=1.0));
    let gamma = Array1::from_shape_simple_fn(l, || rng.random_range(-1.0..=1.0));
    let s = e.t().dot(&r.mapv(f64::abs)) + Array1::from_shape_simple_fn(n, || rng.random_range(0.0..=1.0));

    ProblemInstance::new(ProblemParts {
        a,
        b,
        f,
        e,
        g,
        s,
        r,
        gamma,
    })
    .expect("shapes agree by construction")
}

/// A connected network on `n` buses: a random spanning tree plus each other
/// pair with probability `extra`. Capacitances and resistances are drawn
/// from `[0.5, 2]`.
pub fn random_network(rng: &mut impl Rng, n: usize, extra: f64) -> DcNetwork {
    let mut lines = Vec::new();
    let mut linked = HashSet::new();
    for to in 1..n {
        let from = rng.random_range(0..to);
        linked.insert((from, to));
        lines.push(Line {
            from,
            to,
            resistance: rng.random_range(0.5..=2.0),
        });
    }
    for from in 0..n {
        for to in from + 1..n {
            if !linked.contains(&(from, to)) && rng.random_bool(extra) {
                lines.push(Line {
                    from,
                    to,
                    resistance: rng.random_range(0.5..=2.0),
                });
            }
        }
    }
    let capacitances = (0..n).map(|_| rng.random_range(0.5..=2.0)).collect();
    DcNetwork::new(capacitances, lines).expect("a simple graph without self loops")
}
