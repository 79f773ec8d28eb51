//! Dense primal active-set solver for strictly convex QPs
//!
//!   minimize  1/2 x^T P x + q^T x
//!   subject to A_eq x = b_eq,  A_in x <= b_in
//!
//! starting from a feasible point. Small and exact: used for per-user
//! projections, oracle inner solves, and cross-checks. Blocking constraints
//! added to the working set are automatically independent of it (a row with
//! a^T d != 0 cannot lie in the span of rows with A_W d = 0).

use nalgebra::{DMatrix, DVector};

use crate::error::{MooError, Result};

#[derive(Debug, Clone)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl DenseQp {
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        DenseQp {
            p,
            q,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.p * x)[(0, 0)] + self.q.dot(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KktInfo {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub comp_slack: f64,
}

impl KktInfo {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.comp_slack)
    }
}

#[derive(Debug, Clone)]
pub struct AsQpSolution {
    pub x: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub lambda_in: DVector<f64>,
    pub iterations: usize,
    pub kkt: KktInfo,
}

fn kkt_residuals(qp: &DenseQp, x: &DVector<f64>, le: &DVector<f64>, li: &DVector<f64>) -> KktInfo {
    let mut grad = &qp.p * x + &qp.q;
    if qp.a_eq.nrows() > 0 {
        grad += qp.a_eq.transpose() * le;
    }
    if qp.a_in.nrows() > 0 {
        grad += qp.a_in.transpose() * li;
    }
    let stationarity = grad.amax();
    let mut primal = 0.0f64;
    if qp.a_eq.nrows() > 0 {
        primal = (&qp.a_eq * x - &qp.b_eq).amax();
    }
    let mut dual = 0.0f64;
    let mut cs = 0.0f64;
    if qp.a_in.nrows() > 0 {
        let slack = &qp.a_in * x - &qp.b_in;
        for i in 0..slack.len() {
            primal = primal.max(slack[i].max(0.0));
            dual = dual.max((-li[i]).max(0.0));
            cs = cs.max((li[i] * slack[i]).abs());
        }
    }
    KktInfo { stationarity, primal_feasibility: primal, dual_feasibility: dual, comp_slack: cs }
}

/// Solve the QP from a feasible starting point. `tol` bounds the KKT
/// residuals of the returned certificate.
pub fn solve_as_qp(
    qp: &DenseQp,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<AsQpSolution> {
    let n = qp.q.len();
    if qp.p.nrows() != n || qp.p.ncols() != n || x0.len() != n {
        return Err(MooError::DimensionMismatch("QP dimensions disagree".into()));
    }
    let m_eq = qp.a_eq.nrows();
    let m_in = qp.a_in.nrows();
    let feas_tol = tol.max(1e-10) * 10.0;
    if m_eq > 0 && (&qp.a_eq * x0 - &qp.b_eq).amax() > feas_tol {
        return Err(MooError::Infeasible("starting point violates equalities".into()));
    }
    if m_in > 0 {
        let s = &qp.a_in * x0 - &qp.b_in;
        if (0..m_in).any(|i| s[i] > feas_tol) {
            return Err(MooError::Infeasible("starting point violates inequalities".into()));
        }
    }

    let max_iter = if max_iter == 0 { 40 * (n + m_eq + m_in + 4) } else { max_iter };
    let mut x = x0.clone();
    let mut working: Vec<usize> = Vec::new(); // active inequality indices
    let step_tol = 1e-13;

    let mut lambda_eq = DVector::zeros(m_eq);
    let mut lambda_in = DVector::zeros(m_in);

    for iter in 0..max_iter {
        // KKT system on the working set
        let mw = m_eq + working.len();
        let mut kkt = DMatrix::zeros(n + mw, n + mw);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        for (r, row) in (0..m_eq).enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = qp.a_eq[(row, c)];
                kkt[(c, n + r)] = qp.a_eq[(row, c)];
            }
        }
        for (r, &row) in working.iter().enumerate() {
            for c in 0..n {
                kkt[(n + m_eq + r, c)] = qp.a_in[(row, c)];
                kkt[(c, n + m_eq + r)] = qp.a_in[(row, c)];
            }
        }
        let grad = &qp.p * &x + &qp.q;
        let mut rhs = DVector::zeros(n + mw);
        for t in 0..n {
            rhs[t] = -grad[t];
        }
        let sol = kkt
            .full_piv_lu()
            .solve(&rhs)
            .ok_or_else(|| MooError::NotConverged { iterations: iter, residual: f64::NAN })?;
        let d = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, mw).into_owned();

        if d.amax() <= step_tol * (1.0 + x.amax()) {
            // stationary on the working set: check multiplier signs
            lambda_eq = lam.rows(0, m_eq).into_owned();
            lambda_in = DVector::zeros(m_in);
            let mut most_negative: Option<(usize, f64)> = None;
            for (r, &row) in working.iter().enumerate() {
                let l = lam[m_eq + r];
                lambda_in[row] = l;
                if l < -tol.max(1e-12) {
                    match most_negative {
                        Some((_, best)) if best <= l => {}
                        _ => most_negative = Some((r, l)),
                    }
                }
            }
            match most_negative {
                None => {
                    let kkt = kkt_residuals(qp, &x, &lambda_eq, &lambda_in);
                    return Ok(AsQpSolution { x, lambda_eq, lambda_in, iterations: iter, kkt });
                }
                Some((r, _)) => {
                    working.remove(r);
                }
            }
        } else {
            // step to the nearest blocking constraint
            let mut alpha = 1.0f64;
            let mut blocking: Option<usize> = None;
            for row in 0..m_in {
                if working.contains(&row) {
                    continue;
                }
                let ad = qp.a_in.row(row).transpose().dot(&d);
                if ad > step_tol {
                    let ax = qp.a_in.row(row).transpose().dot(&x);
                    let a = ((qp.b_in[row] - ax) / ad).max(0.0);
                    if a < alpha {
                        alpha = a;
                        blocking = Some(row);
                    }
                }
            }
            x += &d * alpha;
            if let Some(row) = blocking {
                working.push(row);
            }
        }
    }
    let kkt = kkt_residuals(qp, &x, &lambda_eq, &lambda_in);
    Err(MooError::NotConverged { iterations: max_iter, residual: kkt.max_residual() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_minimum() {
        let qp = DenseQp::unconstrained(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            DVector::from_row_slice(&[-2.0, -4.0]),
        );
        let sol = solve_as_qp(&qp, &DVector::zeros(2), 1e-10, 0).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-10);
        assert!((sol.x[1] - 2.0).abs() < 1e-10);
        assert!(sol.kkt.max_residual() < 1e-9);
    }

    #[test]
    fn box_constrained_projection() {
        // project (2, -1) onto [0,1]^2: answer (1, 0)
        let qp = DenseQp {
            p: DMatrix::identity(2, 2),
            q: DVector::from_row_slice(&[-2.0, 1.0]),
            a_eq: DMatrix::zeros(0, 2),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            b_in: DVector::from_row_slice(&[1.0, 1.0, 0.0, 0.0]),
        };
        let sol = solve_as_qp(&qp, &DVector::from_row_slice(&[0.5, 0.5]), 1e-10, 0).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-10);
        assert!(sol.x[1].abs() < 1e-10);
    }

    #[test]
    fn equality_constrained_projection() {
        // project (0.6, 0.6) onto the simplex x1 + x2 = 1, x >= 0: (0.5, 0.5)
        let qp = DenseQp {
            p: DMatrix::identity(2, 2),
            q: DVector::from_row_slice(&[-0.6, -0.6]),
            a_eq: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b_eq: DVector::from_row_slice(&[1.0]),
            a_in: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            b_in: DVector::from_row_slice(&[0.0, 0.0]),
        };
        let sol = solve_as_qp(&qp, &DVector::from_row_slice(&[0.5, 0.5]), 1e-10, 0).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-10);
        assert!((sol.x[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn infeasible_start_rejected() {
        let qp = DenseQp {
            p: DMatrix::identity(1, 1),
            q: DVector::zeros(1),
            a_eq: DMatrix::zeros(0, 1),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::from_row_slice(1, 1, &[1.0]),
            b_in: DVector::from_row_slice(&[0.0]),
        };
        assert!(solve_as_qp(&qp, &DVector::from_row_slice(&[1.0]), 1e-10, 0).is_err());
    }
}
