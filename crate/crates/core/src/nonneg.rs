//! Nonnegatively constrained convex QP core:
//!
//! minimize  1/2 y^T M y - q^T y   subject to  y >= 0
//!
//! with M positive semidefinite and applied as an operator. This one solver
//! backs both the ranking dual and the linearized-QP dual. The baseline is
//! projected gradient with a Barzilai-Borwein step and a monotone safeguard;
//! an over-relaxed operator-splitting variant sits behind a flag.

use crate::error::{MooError, Result};
use crate::problem::StackedSystem;

/// Quadratic operator y -> M y.
pub trait QuadOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, y: &[f64], out: &mut [f64]);
}

impl QuadOp for StackedSystem {
    fn dim(&self) -> usize {
        self.dim_y()
    }
    fn apply(&self, y: &[f64], out: &mut [f64]) {
        self.apply_m(y, out)
    }
}

/// Dense symmetric operator.
pub struct DenseSymOp(pub nalgebra::DMatrix<f64>);

impl QuadOp for DenseSymOp {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, y: &[f64], out: &mut [f64]) {
        let n = self.0.nrows();
        for r in 0..n {
            let row = self.0.row(r);
            let mut acc = 0.0;
            for c in 0..n {
                acc += row[c] * y[c];
            }
            out[r] = acc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMethod {
    /// Projected gradient with BB step (default).
    ProjectedGradient,
    /// Over-relaxed splitting (ADMM form) with penalty `rho` and
    /// relaxation factor `relax` in (1, 2).
    OperatorSplitting { rho: f64, relax: f64 },
}

#[derive(Debug, Clone)]
pub struct NonnegQpOptions {
    /// Stationarity tolerance on ||y - proj(y - (My - q))||_inf.
    pub tol: f64,
    /// 0 means the default cap max(10_000, 50 * dim).
    pub max_iter: usize,
    pub method: SplitMethod,
    /// Record the objective value at every iterate.
    pub keep_trace: bool,
}

impl Default for NonnegQpOptions {
    fn default() -> Self {
        NonnegQpOptions {
            tol: 1e-8,
            max_iter: 0,
            method: SplitMethod::ProjectedGradient,
            keep_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonnegQpSolution {
    pub y: Vec<f64>,
    pub iterations: usize,
    /// ||y - proj(y - g)||_inf at the returned iterate.
    pub stationarity: f64,
    /// max_t |y_t * g_t| at the returned iterate.
    pub comp_slack: f64,
    pub objective: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

pub fn dual_objective_of(m_y: &[f64], y: &[f64], q: &[f64]) -> f64 {
    let mut quad = 0.0;
    let mut lin = 0.0;
    for t in 0..y.len() {
        quad += y[t] * m_y[t];
        lin += y[t] * q[t];
    }
    0.5 * quad - lin
}

fn stationarity_and_slack(y: &[f64], g: &[f64]) -> (f64, f64) {
    let mut st = 0.0f64;
    let mut cs = 0.0f64;
    for t in 0..y.len() {
        let proj = (y[t] - g[t]).max(0.0);
        st = st.max((y[t] - proj).abs());
        cs = cs.max((y[t] * g[t]).abs());
    }
    (st, cs)
}

/// Solve the nonnegative QP. Non-convergence returns the best iterate with
/// `converged = false`; callers decide whether that is an error.
pub fn solve_nonneg_qp(
    op: &dyn QuadOp,
    q: &[f64],
    opts: &NonnegQpOptions,
) -> Result<NonnegQpSolution> {
    solve_nonneg_qp_with_start(op, q, opts, None)
}

/// Same solver with an explicit starting point (projected onto y >= 0);
/// refinement schedules use it to warm-start from the previous budget.
pub fn solve_nonneg_qp_with_start(
    op: &dyn QuadOp,
    q: &[f64],
    opts: &NonnegQpOptions,
    start: Option<Vec<f64>>,
) -> Result<NonnegQpSolution> {
    let dim = op.dim();
    if q.len() != dim {
        return Err(MooError::DimensionMismatch(format!(
            "q has {} entries, operator dimension is {dim}",
            q.len()
        )));
    }
    if let Some(s) = &start {
        if s.len() != dim {
            return Err(MooError::DimensionMismatch(format!(
                "start has {} entries, operator dimension is {dim}",
                s.len()
            )));
        }
    }
    let max_iter = if opts.max_iter == 0 {
        10_000usize.max(50 * dim)
    } else {
        opts.max_iter
    };
    match opts.method {
        SplitMethod::ProjectedGradient => {
            pg_bb(op, q, opts.tol, max_iter, opts.keep_trace, start)
        }
        SplitMethod::OperatorSplitting { rho, relax } => {
            splitting(op, q, opts.tol, max_iter, rho, relax, opts.keep_trace)
        }
    }
}

fn pg_bb(
    op: &dyn QuadOp,
    q: &[f64],
    tol: f64,
    max_iter: usize,
    keep_trace: bool,
    start: Option<Vec<f64>>,
) -> Result<NonnegQpSolution> {
    let dim = op.dim();
    let mut y = match start {
        Some(mut s) => {
            for v in s.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            s
        }
        None => vec![0.0f64; dim],
    };
    let mut my = vec![0.0f64; dim];
    op.apply(&y, &mut my);
    let mut g: Vec<f64> = my.iter().zip(q).map(|(m, q)| m - q).collect();
    let mut f = dual_objective_of(&my, &y, q);
    let mut trace = if keep_trace { vec![f] } else { Vec::new() };

    // initial step from a crude curvature probe along g
    let mut alpha = {
        let gnorm: f64 = g.iter().map(|v| v * v).sum();
        if gnorm == 0.0 {
            1.0
        } else {
            let mut mg = vec![0.0f64; dim];
            op.apply(&g, &mut mg);
            let curv: f64 = g.iter().zip(&mg).map(|(a, b)| a * b).sum();
            if curv > 0.0 {
                (gnorm / curv).clamp(1e-12, 1e12)
            } else {
                1.0
            }
        }
    };

    let mut y_new = vec![0.0f64; dim];
    let mut my_new = vec![0.0f64; dim];
    let mut iterations = 0usize;
    let mut converged = false;
    let (mut st, mut cs) = stationarity_and_slack(&y, &g);

    while iterations < max_iter {
        if st <= tol {
            converged = true;
            break;
        }
        // monotone safeguard: halve the BB step until the objective does
        // not increase beyond rounding
        let mut step = alpha;
        let mut accepted = false;
        for _ in 0..60 {
            for t in 0..dim {
                y_new[t] = (y[t] - step * g[t]).max(0.0);
            }
            op.apply(&y_new, &mut my_new);
            let f_new = dual_objective_of(&my_new, &y_new, q);
            if f_new <= f + 1e-13 * (1.0 + f.abs()) {
                accepted = true;
                // BB1 step from the accepted move
                let mut ss = 0.0f64;
                let mut sz = 0.0f64;
                let mut zz = 0.0f64;
                for t in 0..dim {
                    let s = y_new[t] - y[t];
                    let z = my_new[t] - my[t];
                    ss += s * s;
                    sz += s * z;
                    zz += z * z;
                }
                // s^T M s < 0 beyond rounding cannot happen for PSD M
                if sz < -1e-8 * (ss * zz).sqrt() && ss > 0.0 {
                    return Err(MooError::NotPositiveDefinite(format!(
                        "negative curvature detected: s'Ms = {sz:.3e}"
                    )));
                }
                alpha = if sz > 0.0 { (ss / sz).clamp(1e-12, 1e12) } else { 1e12 };
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut my, &mut my_new);
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // step underflow: rounding floor reached
        }
        for t in 0..dim {
            g[t] = my[t] - q[t];
        }
        let r = stationarity_and_slack(&y, &g);
        st = r.0;
        cs = r.1;
        if keep_trace {
            trace.push(f);
        }
        iterations += 1;
    }
    if st <= tol {
        converged = true;
    }
    Ok(NonnegQpSolution {
        y,
        iterations,
        stationarity: st,
        comp_slack: cs,
        objective: f,
        converged,
        objective_trace: trace,
    })
}

/// Conjugate gradient for (M + rho I) x = rhs, warm-started at `x`.
fn cg_shifted(op: &dyn QuadOp, rho: f64, rhs: &[f64], x: &mut [f64], tol: f64, max_iter: usize) {
    let dim = rhs.len();
    let mut ax = vec![0.0f64; dim];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = (0..dim).map(|t| rhs[t] - (ax[t] + rho * x[t])).collect();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let rhs_norm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut ap = vec![0.0f64; dim];
    for _ in 0..max_iter {
        if rs.sqrt() <= tol * rhs_norm {
            break;
        }
        op.apply(&p, &mut ap);
        for t in 0..dim {
            ap[t] += rho * p[t];
        }
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let step = rs / pap;
        for t in 0..dim {
            x[t] += step * p[t];
            r[t] -= step * ap[t];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        for t in 0..dim {
            p[t] = r[t] + beta * p[t];
        }
        rs = rs_new;
    }
}

fn splitting(
    op: &dyn QuadOp,
    q: &[f64],
    tol: f64,
    max_iter: usize,
    rho: f64,
    relax: f64,
    keep_trace: bool,
) -> Result<NonnegQpSolution> {
    let dim = op.dim();
    let mut y = vec![0.0f64; dim];
    let mut z = vec![0.0f64; dim];
    let mut u = vec![0.0f64; dim];
    let mut rhs = vec![0.0f64; dim];
    let mut mz = vec![0.0f64; dim];
    let mut trace = Vec::new();
    let mut iterations = 0usize;

    while iterations < max_iter {
        for t in 0..dim {
            rhs[t] = q[t] + rho * (z[t] - u[t]);
        }
        cg_shifted(op, rho, &rhs, &mut y, 1e-12, 20 * dim.max(50));
        for t in 0..dim {
            let relaxed = relax * y[t] + (1.0 - relax) * z[t];
            let z_new = (relaxed + u[t]).max(0.0);
            u[t] += relaxed - z_new;
            z[t] = z_new;
        }
        iterations += 1;
        // true stationarity on the feasible iterate z, checked periodically
        if iterations % 5 == 0 || iterations == max_iter {
            op.apply(&z, &mut mz);
            let g: Vec<f64> = mz.iter().zip(q).map(|(m, q)| m - q).collect();
            let r = stationarity_and_slack(&z, &g);
            if keep_trace {
                trace.push(dual_objective_of(&mz, &z, q));
            }
            if r.0 <= tol {
                break;
            }
        }
    }
    op.apply(&z, &mut mz);
    let g: Vec<f64> = mz.iter().zip(q).map(|(m, q)| m - q).collect();
    let r = stationarity_and_slack(&z, &g);
    let f = dual_objective_of(&mz, &z, q);
    Ok(NonnegQpSolution {
        converged: r.0 <= tol,
        stationarity: r.0,
        comp_slack: r.1,
        y: z,
        iterations,
        objective: f,
        objective_trace: trace,
    })
}
