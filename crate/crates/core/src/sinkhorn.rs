//! Entropic optimal transport by Sinkhorn matrix scaling.
//!
//! Given a cost `C`, marginals `p`, `q` and temperature `eps`, the solver
//! builds the Gibbs kernel `K = exp(-C / eps)` and alternates
//!
//! ```text
//! u <- p / (K v)
//! v <- q / (K^T u)
//! ```
//!
//! returning the contribution matrix `P = diag(u) K diag(v)`. The order of the
//! two half-steps is configurable: whichever side is scaled last matches its
//! marginal exactly, so with the default column-last order the row sums of a
//! truncated run still carry per-token structure.
//!
//! The scaling vectors are *not* passed through `exp(. / eps)` before the
//! kernel products. Wrapping them that way does not have
//! `diag(u) K diag(v)` as a fixed point; the iteration here is the standard
//! one whose fixed point is the entropic optimum.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::token::TokenSet;

/// Smallest kernel entry kept in linear-domain mode.
pub const KERNEL_FLOOR: f64 = 1e-300;

/// Mass given to zero-norm tokens before renormalization.
pub const MASS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassMode {
    Uniform,
    /// Mass proportional to each token's Euclidean norm.
    L2Norm,
}

/// Which scaling vector is updated second within an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastUpdate {
    Column,
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub mass_mode: MassMode,
    pub last_update: LastUpdate,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iter: 3,
            tolerance: 1e-6,
            mass_mode: MassMode::L2Norm,
            last_update: LastUpdate::Column,
            log_domain: false,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Contract(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Contract(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Contract("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Solver output: the contribution matrix and the marginals it was fit to.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub p: Array1<f64>,
    pub q: Array1<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl TransportPlan {
    pub fn n(&self) -> usize {
        self.plan.nrows()
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.plan.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<f64> {
        self.plan.sum_axis(Axis(0))
    }
}

fn token_masses(set: &TokenSet, mode: MassMode) -> Array1<f64> {
    let n = set.len();
    match mode {
        MassMode::Uniform => Array1::from_elem(n, 1.0 / n as f64),
        MassMode::L2Norm => {
            let raw: Array1<f64> = set
                .data()
                .rows()
                .into_iter()
                .map(|r| r.dot(&r).sqrt().max(MASS_FLOOR))
                .collect();
            let total = raw.sum();
            raw / total
        }
    }
}

/// Source and target marginals, each strictly positive and summing to one.
pub fn make_marginals(
    source: &TokenSet,
    target: &TokenSet,
    mode: MassMode,
) -> (Array1<f64>, Array1<f64>) {
    (token_masses(source, mode), token_masses(target, mode))
}

pub(crate) fn check_problem(cost: &Array2<f64>, p: &Array1<f64>, q: &Array1<f64>) -> Result<()> {
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Contract("cost matrix is empty".into()));
    }
    if p.len() != rows || q.len() != cols {
        return Err(Error::Shape(format!(
            "cost is {rows}x{cols} but marginals have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Contract("cost matrix has non-finite entries".into()));
    }
    for (name, m) in [("p", p), ("q", q)] {
        if m.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(Error::Contract(format!("marginal {name} has negative or non-finite mass")));
        }
        let s = m.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("marginal {name} sums to {s}, expected 1")));
        }
    }
    Ok(())
}

fn max_abs_diff(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, |m, d| if d.is_nan() { f64::NAN } else { m.max(d) })
}

fn underflow_error(what: &str, idx: usize) -> Error {
    Error::Numerical(format!(
        "kernel {what} {idx} underflows to zero in linear domain; enable log_domain or raise epsilon"
    ))
}

/// Runs Sinkhorn scaling on `cost` with marginals `p`, `q`.
pub fn solve(
    cost: &Array2<f64>,
    p: &Array1<f64>,
    q: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    check_problem(cost, p, q)?;
    if cfg.log_domain {
        solve_log(cost, p, q, cfg)
    } else {
        solve_linear(cost, p, q, cfg)
    }
}

fn solve_linear(
    cost: &Array2<f64>,
    p: &Array1<f64>,
    q: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let raw = cost.mapv(|c| (-c / cfg.epsilon).exp());
    for (i, row) in raw.rows().into_iter().enumerate() {
        if row.iter().all(|&k| k < KERNEL_FLOOR) {
            return Err(underflow_error("row", i));
        }
    }
    for (j, col) in raw.columns().into_iter().enumerate() {
        if col.iter().all(|&k| k < KERNEL_FLOOR) {
            return Err(underflow_error("column", j));
        }
    }
    let kernel = raw.mapv(|k| k.max(KERNEL_FLOOR));

    let (rows, cols) = kernel.dim();
    let mut u = Array1::<f64>::ones(rows);
    let mut v = Array1::<f64>::ones(cols);
    let mut converged = false;
    let mut iterations_used = 0;

    let scale = |marginal: &Array1<f64>, kx: Array1<f64>, side: &str| -> Result<Array1<f64>> {
        let out = marginal / &kx;
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "{side} scaling overflowed in linear domain; enable log_domain or raise epsilon"
            )));
        }
        Ok(out)
    };

    for t in 1..=cfg.max_iter {
        iterations_used = t;
        let (u_new, v_new) = match cfg.last_update {
            LastUpdate::Column => {
                let u_new = scale(p, kernel.dot(&v), "row")?;
                let v_new = scale(q, kernel.t().dot(&u_new), "column")?;
                (u_new, v_new)
            }
            LastUpdate::Row => {
                let v_new = scale(q, kernel.t().dot(&u), "column")?;
                let u_new = scale(p, kernel.dot(&v_new), "row")?;
                (u_new, v_new)
            }
        };
        let du = max_abs_diff(u.view(), u_new.view());
        let dv = max_abs_diff(v.view(), v_new.view());
        u = u_new;
        v = v_new;
        if du < cfg.tolerance && dv < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let mut plan = kernel;
    for ((i, j), x) in plan.indexed_iter_mut() {
        *x *= u[i] * v[j];
    }
    Ok(TransportPlan { plan, p: p.clone(), q: q.clone(), iterations_used, converged })
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let buf: Vec<f64> = values.collect();
    let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + buf.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `|exp(a) - exp(b)|` without forming either exponential when they are large.
fn exp_gap(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let hi = a.max(b);
    let lo = a.min(b);
    if hi == f64::NEG_INFINITY {
        return 0.0;
    }
    hi.exp() * -(lo - hi).exp_m1()
}

fn solve_log(
    cost: &Array2<f64>,
    p: &Array1<f64>,
    q: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let log_k = cost.mapv(|c| -c / cfg.epsilon);
    let log_p = p.mapv(f64::ln);
    let log_q = q.mapv(f64::ln);
    let (rows, cols) = log_k.dim();
    let mut log_u = Array1::<f64>::zeros(rows);
    let mut log_v = Array1::<f64>::zeros(cols);
    let mut converged = false;
    let mut iterations_used = 0;

    let row_step = |log_v: &Array1<f64>| -> Array1<f64> {
        Array1::from_shape_fn(rows, |i| {
            log_p[i] - log_sum_exp(log_k.row(i).iter().zip(log_v.iter()).map(|(k, g)| k + g))
        })
    };
    let col_step = |log_u: &Array1<f64>| -> Array1<f64> {
        Array1::from_shape_fn(cols, |j| {
            log_q[j] - log_sum_exp(log_k.column(j).iter().zip(log_u.iter()).map(|(k, f)| k + f))
        })
    };

    for t in 1..=cfg.max_iter {
        iterations_used = t;
        let (u_new, v_new) = match cfg.last_update {
            LastUpdate::Column => {
                let u_new = row_step(&log_v);
                let v_new = col_step(&u_new);
                (u_new, v_new)
            }
            LastUpdate::Row => {
                let v_new = col_step(&log_u);
                let u_new = row_step(&v_new);
                (u_new, v_new)
            }
        };
        if u_new.iter().chain(v_new.iter()).any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::Numerical("log-domain scaling produced non-finite values".into()));
        }
        let du = u_new
            .iter()
            .zip(log_u.iter())
            .map(|(&a, &b)| exp_gap(a, b))
            .fold(0.0, f64::max);
        let dv = v_new
            .iter()
            .zip(log_v.iter())
            .map(|(&a, &b)| exp_gap(a, b))
            .fold(0.0, f64::max);
        log_u = u_new;
        log_v = v_new;
        if du < cfg.tolerance && dv < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let plan = Array2::from_shape_fn((rows, cols), |(i, j)| (log_u[i] + log_k[[i, j]] + log_v[j]).exp());
    Ok(TransportPlan { plan, p: p.clone(), q: q.clone(), iterations_used, converged })
}

/// Shannon entropy `-sum P log P`, with `0 log 0 = 0`.
pub fn plan_entropy(plan: &Array2<f64>) -> f64 {
    -plan.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Entropic objective `<P, C> - eps * H(P)`.
pub fn entropic_objective(plan: &Array2<f64>, cost: &Array2<f64>, epsilon: f64) -> f64 {
    let transport: f64 = plan.iter().zip(cost.iter()).map(|(p, c)| p * c).sum();
    transport - epsilon * plan_entropy(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn converged_cfg(epsilon: f64) -> SinkhornConfig {
        SinkhornConfig {
            epsilon,
            max_iter: 100_000,
            tolerance: 1e-13,
            mass_mode: MassMode::Uniform,
            last_update: LastUpdate::Column,
            log_domain: false,
        }
    }

    #[test]
    fn uniform_marginals() {
        let s = TokenSet::new(Array2::ones((4, 2)), 2, 2).unwrap();
        let (p, q) = make_marginals(&s, &s, MassMode::Uniform);
        assert_eq!(p, array![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(q, p);
    }

    #[test]
    fn norm_marginals_are_proportional() {
        let s = TokenSet::new(array![[1.0, 0.0], [0.0, 3.0]], 1, 2).unwrap();
        let (p, _) = make_marginals(&s, &s, MassMode::L2Norm);
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn zero_token_gets_floor_mass() {
        let s = TokenSet::new(array![[0.0, 0.0], [2.0, 0.0]], 1, 2).unwrap();
        let (p, _) = make_marginals(&s, &s, MassMode::L2Norm);
        assert!(p.iter().all(|&x| x > 0.0));
        assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_by_two_closed_form() {
        let cost = array![[0.0, 1.0], [1.0, 0.0]];
        let p = array![0.5, 0.5];
        let plan = solve(&cost, &p, &p, &converged_cfg(1.0)).unwrap();
        assert!(plan.converged);
        let diag = 1.0 / (2.0 * (1.0 + (-1.0f64).exp()));
        let off = (-1.0f64).exp() / (2.0 * (1.0 + (-1.0f64).exp()));
        assert_abs_diff_eq!(plan.plan[[0, 0]], diag, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.plan[[1, 1]], diag, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.plan[[0, 1]], off, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.plan[[0, 0]], 0.36552, epsilon = 1e-5);
        assert_abs_diff_eq!(plan.plan[[0, 1]], 0.13448, epsilon = 1e-5);
    }

    #[test]
    fn zero_cost_gives_product_plan() {
        let n = 5;
        let cost = Array2::zeros((n, n));
        let p = Array1::from_elem(n, 1.0 / n as f64);
        let plan = solve(&cost, &p, &p, &converged_cfg(0.3)).unwrap();
        for &x in plan.plan.iter() {
            assert_abs_diff_eq!(x, 1.0 / 25.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn column_last_matches_columns_exactly() {
        let cost = array![[0.1, 0.9, 0.4], [0.7, 0.2, 0.5], [0.3, 0.8, 0.0]];
        let p = array![0.2, 0.3, 0.5];
        let q = array![0.6, 0.1, 0.3];
        let cfg = SinkhornConfig { max_iter: 2, ..converged_cfg(0.1) };
        let plan = solve(&cost, &p, &q, &cfg).unwrap();
        assert!(!plan.converged);
        for (c, want) in plan.col_sums().iter().zip(q.iter()) {
            assert_abs_diff_eq!(c, want, epsilon = 1e-15);
        }
        let cfg = SinkhornConfig { last_update: LastUpdate::Row, ..cfg };
        let plan = solve(&cost, &p, &q, &cfg).unwrap();
        for (r, want) in plan.row_sums().iter().zip(p.iter()) {
            assert_abs_diff_eq!(r, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn non_finite_cost_rejected() {
        let cost = array![[0.0, f64::NAN], [1.0, 0.0]];
        let p = array![0.5, 0.5];
        assert!(matches!(solve(&cost, &p, &p, &converged_cfg(1.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn underflow_reported_in_linear_mode_and_handled_in_log_mode() {
        let cost = array![[0.0, 1.0], [1000.0, 1000.0]];
        let p = array![0.5, 0.5];
        let cfg = converged_cfg(1.0);
        assert!(matches!(solve(&cost, &p, &p, &cfg), Err(Error::Numerical(_))));
        let cfg = SinkhornConfig { log_domain: true, max_iter: 50, ..cfg };
        let plan = solve(&cost, &p, &p, &cfg).unwrap();
        assert!(plan.plan.iter().all(|x| x.is_finite() && *x >= 0.0));
        for c in plan.col_sums() {
            assert_abs_diff_eq!(c, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_and_linear_agree() {
        let cost = array![[0.1, 0.9, 0.4], [0.7, 0.2, 0.5], [0.3, 0.8, 0.0]];
        let p = array![0.2, 0.3, 0.5];
        let q = array![0.6, 0.1, 0.3];
        for max_iter in [1, 3, 10_000] {
            let lin = SinkhornConfig { max_iter, tolerance: 1e-12, ..converged_cfg(0.2) };
            let log = SinkhornConfig { log_domain: true, ..lin };
            let a = solve(&cost, &p, &q, &lin).unwrap();
            let b = solve(&cost, &p, &q, &log).unwrap();
            assert_eq!(a.iterations_used, b.iterations_used);
            for (x, y) in a.plan.iter().zip(b.plan.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cost = array![[0.0]];
        let p = array![1.0];
        for cfg in [
            SinkhornConfig { epsilon: 0.0, ..Default::default() },
            SinkhornConfig { tolerance: -1.0, ..Default::default() },
            SinkhornConfig { max_iter: 0, ..Default::default() },
        ] {
            assert!(matches!(solve(&cost, &p, &p, &cfg), Err(Error::Contract(_))));
        }
    }

    #[test]
    fn bad_marginals_rejected() {
        let cost = array![[0.0, 1.0], [1.0, 0.0]];
        let p = array![0.5, 0.6];
        let q = array![0.5, 0.5];
        assert!(solve(&cost, &p, &q, &converged_cfg(1.0)).is_err());
        let short = array![1.0];
        assert!(matches!(solve(&cost, &short, &q, &converged_cfg(1.0)), Err(Error::Shape(_))));
    }
}
