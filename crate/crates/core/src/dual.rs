//! Dual of the ranking QP: a nonnegatively constrained QP in
//! y = (mu0, mu1, eta) with M = A^T A / gamma applied implicitly, so the
//! cost per iteration rides on the sparsity of the stacked system.

use crate::error::{MooError, Result};
use crate::nonneg::{solve_nonneg_qp, NonnegQpOptions, QuadOp, SplitMethod};
use crate::problem::{RankingProblem, StackedSystem};

/// Assembled dual data: operator M plus the linear term q = xi - A^T p / gamma.
#[derive(Debug, Clone)]
pub struct DualProblem<'a> {
    pub system: &'a StackedSystem,
    pub q: Vec<f64>,
}

impl<'a> DualProblem<'a> {
    pub fn new(system: &'a StackedSystem, p: &[f64]) -> Result<Self> {
        if p.len() != system.a.rows {
            return Err(MooError::DimensionMismatch(format!(
                "click vector has {} entries, system has {} rows",
                p.len(),
                system.a.rows
            )));
        }
        Ok(DualProblem { system, q: system.q_vector(p) })
    }
}

#[derive(Debug, Clone)]
pub struct DualSolveOptions {
    /// Stationarity tolerance on the projected-gradient residual.
    pub tol: f64,
    /// 0 means max(10_000, 50 * dim).
    pub max_iter: usize,
    pub method: SplitMethod,
    pub keep_trace: bool,
}

impl Default for DualSolveOptions {
    fn default() -> Self {
        DualSolveOptions {
            tol: 1e-8,
            max_iter: 0,
            method: SplitMethod::ProjectedGradient,
            keep_trace: false,
        }
    }
}

/// Optimal multipliers with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub mu0: f64,
    pub mu1: f64,
    pub eta: Vec<f64>,
    pub iterations: usize,
    /// stationarity residual ||y - proj(y - (My - q))||_inf
    pub primal_residual: f64,
    /// complementary slackness max_t |y_t (My - q)_t|
    pub dual_residual: f64,
    pub objective: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

impl DualSolution {
    pub fn y(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 + self.eta.len());
        y.push(self.mu0);
        y.push(self.mu1);
        y.extend_from_slice(&self.eta);
        y
    }
}

/// Solve the dual QP. A non-converged run still returns the best iterate,
/// flagged, so the caller can decide whether to proceed.
pub fn solve_dual(
    system: &StackedSystem,
    p: &[f64],
    opts: &DualSolveOptions,
) -> Result<DualSolution> {
    if !(system.gamma > 0.0) {
        return Err(MooError::InvalidInput(format!("gamma = {} must be > 0", system.gamma)));
    }
    let dual = DualProblem::new(system, p)?;
    let qp_opts = NonnegQpOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        method: opts.method,
        keep_trace: opts.keep_trace,
    };
    let sol = solve_nonneg_qp(system, &dual.q, &qp_opts)?;
    let mut y = sol.y;
    let mu0 = y[0];
    let mu1 = y[1];
    let eta = y.split_off(2);
    Ok(DualSolution {
        mu0,
        mu1,
        eta,
        iterations: sol.iterations,
        primal_residual: sol.stationarity,
        dual_residual: sol.comp_slack,
        objective: sol.objective,
        converged: sol.converged,
        objective_trace: sol.objective_trace,
    })
}

/// Convenience wrapper: assemble the stacked system and solve.
pub fn solve_dual_for(problem: &RankingProblem, opts: &DualSolveOptions) -> Result<DualSolution> {
    let sys = crate::problem::assemble_stacked(problem)?;
    solve_dual(&sys, &problem.p, opts)
}

/// Exact evaluation of the dual objective 1/2 y^T M y - y^T q.
pub fn dual_objective(y: &[f64], m: &dyn QuadOp, q: &[f64]) -> Result<f64> {
    if y.len() != m.dim() || q.len() != m.dim() {
        return Err(MooError::DimensionMismatch(format!(
            "y: {}, q: {}, operator: {}",
            y.len(),
            q.len(),
            m.dim()
        )));
    }
    let mut my = vec![0.0f64; y.len()];
    m.apply(y, &mut my);
    Ok(crate::nonneg::dual_objective_of(&my, y, q))
}

/// Lagrangian dual function value at y for the ranking problem
/// (the maximization form): -obj(y) - p^T p / (2 gamma). Any feasible
/// primal objective bounds this from above.
pub fn lagrangian_dual_value(system: &StackedSystem, p: &[f64], y: &[f64]) -> Result<f64> {
    let dual = DualProblem::new(system, p)?;
    let obj = dual_objective(y, system, &dual.q)?;
    let ptp: f64 = p.iter().map(|v| v * v).sum();
    Ok(-obj - ptp / (2.0 * system.gamma))
}

/// Primal objective of the ranking QP: -x^T p + gamma/2 x^T x.
pub fn ranking_objective(x: &[f64], p: &[f64], gamma: f64) -> f64 {
    let mut lin = 0.0;
    let mut quad = 0.0;
    for t in 0..x.len() {
        lin += x[t] * p[t];
        quad += x[t] * x[t];
    }
    -lin + 0.5 * gamma * quad
}
