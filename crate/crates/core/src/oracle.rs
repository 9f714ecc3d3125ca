//! Reference entropic OT solver used to cross-check [`crate::sinkhorn::solve`].
//!
//! Written against dual potentials `f`, `g` with plain loops and its own
//! log-sum-exp so it shares no code with the production solver. It is slow
//! and only accepts small problems.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::sinkhorn::TransportPlan;

pub const ORACLE_MAX_N: usize = 64;
pub const ORACLE_TOLERANCE: f64 = 1e-12;
pub const ORACLE_MAX_ITER: usize = 100_000;

fn lse(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for &x in xs {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// Solves to marginal error below [`ORACLE_TOLERANCE`] or fails.
pub fn oracle_solve(
    cost: &Array2<f64>,
    p: &Array1<f64>,
    q: &Array1<f64>,
    epsilon: f64,
) -> Result<TransportPlan> {
    solve_capped(cost, p, q, epsilon, ORACLE_MAX_ITER)
}

fn solve_capped(
    cost: &Array2<f64>,
    p: &Array1<f64>,
    q: &Array1<f64>,
    epsilon: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    let n = cost.nrows();
    let m = cost.ncols();
    if n > ORACLE_MAX_N || m > ORACLE_MAX_N {
        return Err(Error::Contract(format!("oracle accepts at most {ORACLE_MAX_N} points, got {n}x{m}")));
    }
    if p.len() != n || q.len() != m {
        return Err(Error::Shape("marginal lengths do not match cost".into()));
    }
    if !(epsilon > 0.0) || cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Contract("oracle needs finite cost and positive epsilon".into()));
    }

    let c: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| cost[[i, j]]).collect()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];

    let plan_entry = |f: &[f64], g: &[f64], i: usize, j: usize| ((f[i] + g[j] - c[i][j]) / epsilon).exp();

    for it in 1..=max_iter {
        for i in 0..n {
            for j in 0..m {
                buf[j] = (g[j] - c[i][j]) / epsilon;
            }
            f[i] = epsilon * (p[i].ln() - lse(&buf[..m]));
        }
        for j in 0..m {
            for i in 0..n {
                buf[i] = (f[i] - c[i][j]) / epsilon;
            }
            g[j] = epsilon * (q[j].ln() - lse(&buf[..n]));
        }
        // columns are exact after the g update; rows measure progress
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..m {
                row += plan_entry(&f, &g, i, j);
            }
            err = err.max((row - p[i]).abs());
        }
        if err < ORACLE_TOLERANCE {
            let plan = Array2::from_shape_fn((n, m), |(i, j)| plan_entry(&f, &g, i, j));
            return Ok(TransportPlan {
                plan,
                p: p.clone(),
                q: q.clone(),
                iterations_used: it,
                converged: true,
            });
        }
    }
    Err(Error::Numerical(format!(
        "oracle did not reach {ORACLE_TOLERANCE:e} within {max_iter} iterations"
    )))
}
