//! Randomized cross-checks of a Sinkhorn solver against the reference oracle.
//!
//! The solver under test is passed in as a function so that a deliberately
//! broken solver can be checked to fail.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::oracle::{oracle_solve, ORACLE_MAX_N};
use crate::rng::SplitMix64;
use crate::sinkhorn::{entropic_objective, solve, LastUpdate, MassMode, SinkhornConfig, TransportPlan};

pub type SolveFn<'a> =
    dyn Fn(&Array2<f64>, &Array1<f64>, &Array1<f64>, &SinkhornConfig) -> Result<TransportPlan> + 'a;

pub const PLAN_TOL: f64 = 1e-6;
pub const OBJECTIVE_TOL: f64 = 1e-6;
pub const MARGINAL_TOL: f64 = 1e-6;
pub const ORACLE_MARGINAL_TOL: f64 = 1e-10;
pub const DOMAIN_TOL: f64 = 1e-8;
pub const SHIFT_TOL: f64 = 1e-9;

const TEMPERATURES: [f64; 4] = [0.1, 0.25, 0.5, 1.0];

/// Solver settings used for "converged" comparisons.
pub fn converged_config(epsilon: f64) -> SinkhornConfig {
    SinkhornConfig {
        epsilon,
        max_iter: 1_000_000,
        tolerance: 1e-12,
        mass_mode: MassMode::Uniform,
        last_update: LastUpdate::Column,
        log_domain: false,
    }
}

/// One random OT problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub cost: Array2<f64>,
    pub p: Array1<f64>,
    pub q: Array1<f64>,
    pub epsilon: f64,
}

fn random_simplex(rng: &mut SplitMix64, n: usize) -> Array1<f64> {
    let raw = Array1::from_shape_simple_fn(n, || 0.1 + rng.next_unit());
    let s = raw.sum();
    raw / s
}

/// Cost entries uniform in `[0, 1)`, marginals bounded away from zero.
pub fn random_instance(rng: &mut SplitMix64, n: usize) -> Instance {
    let cost = Array2::from_shape_simple_fn((n, n), || rng.next_unit());
    let p = random_simplex(rng, n);
    let q = random_simplex(rng, n);
    let epsilon = TEMPERATURES[(rng.next_u64() % TEMPERATURES.len() as u64) as usize];
    Instance { cost, p, q, epsilon }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub size: usize,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<22} {:>5} {:>12} {:>10}  result", "check", "n", "value", "tol").unwrap();
        for c in &self.checks {
            writeln!(
                out,
                "{:<22} {:>5} {:>12.3e} {:>10.0e}  {}",
                c.name,
                c.size,
                c.value,
                c.tolerance,
                if c.passed() { "pass" } else { "FAIL" }
            )
            .unwrap();
        }
        out
    }
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) })
}

fn max_vec_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) })
}

/// All checks for one instance.
pub fn check_instance(inst: &Instance, solver: &SolveFn) -> Result<Vec<Check>> {
    let n = inst.cost.nrows();
    let cfg = converged_config(inst.epsilon);
    let lin = solver(&inst.cost, &inst.p, &inst.q, &cfg)?;
    let log = solver(&inst.cost, &inst.p, &inst.q, &SinkhornConfig { log_domain: true, ..cfg })?;
    let shifted_cost = inst.cost.mapv(|c| c + 0.37);
    let shifted = solver(&shifted_cost, &inst.p, &inst.q, &cfg)?;
    let oracle = oracle_solve(&inst.cost, &inst.p, &inst.q, inst.epsilon)?;

    let objective_gap = (entropic_objective(&lin.plan, &inst.cost, inst.epsilon)
        - entropic_objective(&oracle.plan, &inst.cost, inst.epsilon))
    .abs();
    let oracle_marginals =
        max_vec_diff(&oracle.row_sums(), &inst.p).max(max_vec_diff(&oracle.col_sums(), &inst.q));

    let convergence_gap = if lin.converged { 0.0 } else { f64::INFINITY };
    Ok(vec![
        Check { name: "solver_converged", size: n, value: convergence_gap, tolerance: 0.0 },
        Check { name: "plan_vs_oracle", size: n, value: max_abs_diff(&lin.plan, &oracle.plan), tolerance: PLAN_TOL },
        Check { name: "objective_vs_oracle", size: n, value: objective_gap, tolerance: OBJECTIVE_TOL },
        Check { name: "column_marginal", size: n, value: max_vec_diff(&lin.col_sums(), &inst.q), tolerance: MARGINAL_TOL },
        Check { name: "oracle_marginals", size: n, value: oracle_marginals, tolerance: ORACLE_MARGINAL_TOL },
        Check { name: "log_vs_linear", size: n, value: max_abs_diff(&lin.plan, &log.plan), tolerance: DOMAIN_TOL },
        Check { name: "cost_shift_invariance", size: n, value: max_abs_diff(&lin.plan, &shifted.plan), tolerance: SHIFT_TOL },
    ])
}

/// Runs the check suite on one random instance per requested size.
pub fn run_verify(seed: u64, sizes: &[usize], solver: &SolveFn) -> Result<VerifyReport> {
    if let Some(&bad) = sizes.iter().find(|&&n| n == 0 || n > ORACLE_MAX_N) {
        return Err(Error::Contract(format!("verify sizes must lie in 1..={ORACLE_MAX_N}, got {bad}")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut report = VerifyReport::default();
    for &n in sizes {
        let inst = random_instance(&mut rng, n);
        report.checks.extend(check_instance(&inst, solver)?);
    }
    Ok(report)
}

/// [`run_verify`] against the production solver.
pub fn run_default(seed: u64, sizes: &[usize]) -> Result<VerifyReport> {
    run_verify(seed, sizes, &solve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn production_solver_passes() {
        let report = run_default(3, &[2, 4, 8]).unwrap();
        assert!(report.all_passed(), "{}", report.render());
    }

    #[test]
    fn corrupted_solver_fails() {
        let broken = |c: &Array2<f64>, p: &Array1<f64>, q: &Array1<f64>, cfg: &SinkhornConfig| {
            let mut plan = solve(c, p, q, cfg)?;
            plan.plan[[0, 0]] *= 1.01;
            Ok(plan)
        };
        let report = run_verify(3, &[2, 4], &broken).unwrap();
        assert!(!report.all_passed());
    }

    #[test]
    fn oversized_request_rejected() {
        assert!(run_default(0, &[65]).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let a = run_default(9, &[4]).unwrap().render();
        let b = run_default(9, &[4]).unwrap().render();
        assert_eq!(a, b);
    }
}
