//! Exact small-scale solvers used as ground truth: brute-force active-set
//! enumeration for tiny QPs and multiplier bisection for the QCQP.

use nalgebra::{DMatrix, DVector};

use crate::asqp::{solve_as_qp, DenseQp};
use crate::error::{MooError, Result};
use crate::problem::RankingProblem;
use crate::qcqp::QcqpInstance;

const ENUMERATION_CAP: usize = 22;
const ORACLE_DIM_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ActiveSetEnumeration,
    MultiplierBisection,
}

/// Certified exact solution of a QCQP instance.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub method: OracleMethod,
    /// multiplier of the quadratic constraint
    pub lambda_quad: f64,
    pub kkt_stationarity: f64,
    pub kkt_primal: f64,
    pub kkt_comp_slack: f64,
}

impl OracleSolution {
    pub fn max_kkt_residual(&self) -> f64 {
        self.kkt_stationarity.max(self.kkt_primal).max(self.kkt_comp_slack)
    }
}

/// Exact QCQP solve by bisection on the quadratic constraint's multiplier:
/// for fixed lambda the inner problem is a strictly convex QP over the
/// linear constraints, and the constraint slack at its solution decreases
/// monotonically in lambda.
pub fn exact_qcqp(inst: &QcqpInstance) -> Result<OracleSolution> {
    let dim = inst.dim();
    if dim > ORACLE_DIM_CAP {
        return Err(MooError::OracleCapExceeded(dim, ORACLE_DIM_CAP));
    }
    let a_dense = inst.objective.to_dense();
    let b_dense = inst.ellipsoid.matrix().to_dense();
    let a_center = &inst.obj_center;
    let b_center = &inst.ellipsoid.center;
    let b_tilde = inst.ellipsoid.radius_sq;

    let (a_eq, b_eq) = match &inst.lin_eq {
        Some(e) => (e.mat.clone(), e.rhs.clone()),
        None => (DMatrix::zeros(0, dim), DVector::zeros(0)),
    };
    let (a_in, b_in) = match &inst.lin {
        Some(rows) => {
            let m = rows.mat.to_dense();
            (m, DVector::from_column_slice(&rows.rhs))
        }
        None => (DMatrix::zeros(0, dim), DVector::zeros(0)),
    };
    let x0 = DVector::from_column_slice(&inst.linear_feasible_point()?);

    let inner = |lambda: f64, start: &DVector<f64>| -> Result<DVector<f64>> {
        let p = &a_dense * 2.0 + &b_dense * (2.0 * lambda);
        let q = -(&a_dense * a_center) * 2.0 - (&b_dense * b_center) * (2.0 * lambda);
        let qp = DenseQp {
            p,
            q,
            a_eq: a_eq.clone(),
            b_eq: b_eq.clone(),
            a_in: a_in.clone(),
            b_in: b_in.clone(),
        };
        Ok(solve_as_qp(&qp, start, 1e-12, 0)?.x)
    };
    let slack = |x: &DVector<f64>| -> f64 {
        let xs: Vec<f64> = x.iter().cloned().collect();
        inst.ellipsoid.quad(&xs) - b_tilde
    };

    // the inner QP's KKT certificate at the final multiplier covers the
    // whole Lagrangian: its gradient P x + q is 2A(x-a) + 2 lambda B(x-b)
    let certify = |lambda: f64, start: &DVector<f64>| -> Result<crate::asqp::AsQpSolution> {
        let p = &a_dense * 2.0 + &b_dense * (2.0 * lambda);
        let q = -(&a_dense * a_center) * 2.0 - (&b_dense * b_center) * (2.0 * lambda);
        let qp = DenseQp {
            p,
            q,
            a_eq: a_eq.clone(),
            b_eq: b_eq.clone(),
            a_in: a_in.clone(),
            b_in: b_in.clone(),
        };
        solve_as_qp(&qp, start, 1e-12, 0)
    };

    let h_tol = 1e-10 * b_tilde.max(1.0);
    let mut lambda = 0.0f64;
    let mut x = inner(0.0, &x0)?;
    if slack(&x) > h_tol {
        // grow the bracket until the constraint is satisfied
        let mut hi = 1.0f64;
        let mut x_hi = inner(hi, &x)?;
        let mut guard = 0;
        while slack(&x_hi) > 0.0 {
            hi *= 4.0;
            if hi > 1e14 {
                return Err(MooError::Infeasible(
                    "quadratic constraint cannot be met over the linear set".into(),
                ));
            }
            x_hi = inner(hi, &x_hi)?;
            guard += 1;
            if guard > 60 {
                return Err(MooError::NotConverged { iterations: guard, residual: slack(&x_hi) });
            }
        }
        let mut lo = 0.0f64;
        let mut x_mid = x_hi.clone();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            x_mid = inner(mid, &x_mid)?;
            let h = slack(&x_mid);
            if h.abs() <= h_tol {
                lo = mid;
                hi = mid;
                break;
            }
            if h > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        lambda = 0.5 * (lo + hi);
        x = x_mid;
    }
    let cert = certify(lambda, &x)?;
    let x = cert.x;

    let xs: Vec<f64> = x.iter().cloned().collect();
    let objective = inst.objective_value(&xs);
    let quad_violation = slack(&x).max(0.0);
    let kkt_primal = inst.linear_violation(&xs).max(quad_violation).max(cert.kkt.primal_feasibility);
    let kkt_comp_slack = (lambda * slack(&x)).abs().max(cert.kkt.comp_slack);

    Ok(OracleSolution {
        x: xs,
        objective,
        method: OracleMethod::MultiplierBisection,
        lambda_quad: lambda,
        kkt_stationarity: cert.kkt.stationarity,
        kkt_primal,
        kkt_comp_slack,
    })
}

/// Brute-force oracle for min 1/2 y^T M y - q^T y, y >= 0 with M PSD:
/// enumerate candidate free sets, solve the face system, and accept the
/// first KKT-consistent face (convexity makes any KKT point optimal).
pub fn enumerate_nonneg_qp(m: &DMatrix<f64>, q: &[f64]) -> Result<(Vec<f64>, f64)> {
    let dim = q.len();
    if m.nrows() != dim || m.ncols() != dim {
        return Err(MooError::DimensionMismatch("M and q disagree".into()));
    }
    if dim > ENUMERATION_CAP {
        return Err(MooError::OracleCapExceeded(dim, ENUMERATION_CAP));
    }
    let scale = 1.0 + m.amax().max(q.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    let tol = 1e-9 * scale;

    for mask in 0..(1u64 << dim) {
        let free: Vec<usize> = (0..dim).filter(|t| mask >> t & 1 == 1).collect();
        let nf = free.len();
        let mut y = vec![0.0f64; dim];
        if nf > 0 {
            let mut mff = DMatrix::zeros(nf, nf);
            let mut qf = DVector::zeros(nf);
            for (a, &i) in free.iter().enumerate() {
                qf[a] = q[i];
                for (b, &j) in free.iter().enumerate() {
                    mff[(a, b)] = m[(i, j)];
                }
            }
            let sol = match mff.clone().col_piv_qr().solve(&qf) {
                Some(s) => s,
                None => continue,
            };
            // consistency: the face must actually contain a stationary point
            if (&mff * &sol - &qf).amax() > tol {
                continue;
            }
            if sol.iter().any(|v| *v < -1e-12 * scale) {
                continue;
            }
            for (a, &i) in free.iter().enumerate() {
                y[i] = sol[a].max(0.0);
            }
        }
        // KKT on the active part: gradient must be nonnegative there
        let yv = DVector::from_column_slice(&y);
        let g = m * &yv - DVector::from_column_slice(q);
        let mut ok = true;
        for t in 0..dim {
            if mask >> t & 1 == 0 && g[t] < -tol {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let obj = 0.5 * (yv.transpose() * m * &yv)[(0, 0)] - yv.dot(&DVector::from_column_slice(q));
        return Ok((y, obj));
    }
    Err(MooError::Infeasible("no KKT face found (numerically degenerate)".into()))
}

/// Brute-force oracle for a dense QP with inequality rows: enumerate active
/// subsets, solve the equality-KKT system, keep KKT-consistent candidates.
pub fn enumerate_qp(qp: &DenseQp) -> Result<(DVector<f64>, f64)> {
    let n = qp.q.len();
    let m_in = qp.a_in.nrows();
    let m_eq = qp.a_eq.nrows();
    if m_in > ENUMERATION_CAP {
        return Err(MooError::OracleCapExceeded(m_in, ENUMERATION_CAP));
    }
    let scale = 1.0 + qp.p.amax().max(qp.q.amax());
    let tol = 1e-8 * scale;
    let mut best: Option<(DVector<f64>, f64)> = None;

    for mask in 0..(1u64 << m_in) {
        let active: Vec<usize> = (0..m_in).filter(|t| mask >> t & 1 == 1).collect();
        let mw = m_eq + active.len();
        let mut kkt = DMatrix::zeros(n + mw, n + mw);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        for r in 0..m_eq {
            for c in 0..n {
                kkt[(n + r, c)] = qp.a_eq[(r, c)];
                kkt[(c, n + r)] = qp.a_eq[(r, c)];
            }
        }
        for (r, &row) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + m_eq + r, c)] = qp.a_in[(row, c)];
                kkt[(c, n + m_eq + r)] = qp.a_in[(row, c)];
            }
        }
        let mut rhs = DVector::zeros(n + mw);
        for t in 0..n {
            rhs[t] = -qp.q[t];
        }
        for r in 0..m_eq {
            rhs[n + r] = qp.b_eq[r];
        }
        for (r, &row) in active.iter().enumerate() {
            rhs[n + m_eq + r] = qp.b_in[row];
        }
        let sol = match kkt.clone().col_piv_qr().solve(&rhs) {
            Some(s) => s,
            None => continue,
        };
        if (&kkt * &sol - &rhs).amax() > tol {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        // primal feasibility on inactive rows, dual feasibility on active ones
        if m_in > 0 {
            let slack = &qp.a_in * &x - &qp.b_in;
            if (0..m_in).any(|t| slack[t] > tol) {
                continue;
            }
        }
        let lam_in = sol.rows(n + m_eq, active.len());
        if lam_in.iter().any(|l| *l < -tol) {
            continue;
        }
        let obj = qp.objective(&x);
        match &best {
            Some((_, b)) if *b <= obj => {}
            _ => best = Some((x, obj)),
        }
    }
    best.ok_or_else(|| MooError::Infeasible("no KKT-consistent active set".into()))
}

/// Direct dense solve of the full ranking QP (ground truth for the
/// dual-plus-projection route). Desk sizes only.
pub fn solve_ranking_primal_direct(problem: &RankingProblem) -> Result<(Vec<f64>, f64)> {
    let (n, j, k) = (problem.n_users, problem.n_items, problem.n_slots);
    let dim = problem.dim();
    if dim > 200 {
        return Err(MooError::OracleCapExceeded(dim, 200));
    }
    if k > j {
        return Err(MooError::InvalidInput(format!("K = {k} exceeds J = {j}")));
    }

    // equalities: slot sums = 1 per (user, slot)
    let mut a_eq = DMatrix::zeros(n * k, dim);
    for i in 0..n {
        for kk in 0..k {
            for jj in 0..j {
                a_eq[(i * k + kk, (i * j + jj) * k + kk)] = 1.0;
            }
        }
    }
    let b_eq = DVector::from_element(n * k, 1.0);

    // inequalities: box, item sums, and the two global floors (negated)
    let m_in = 2 * dim + n * j + 2;
    let mut a_in = DMatrix::zeros(m_in, dim);
    let mut b_in = DVector::zeros(m_in);
    for t in 0..dim {
        a_in[(t, t)] = 1.0;
        b_in[t] = 1.0;
        a_in[(dim + t, t)] = -1.0;
        b_in[dim + t] = 0.0;
    }
    for i in 0..n {
        for jj in 0..j {
            for kk in 0..k {
                a_in[(2 * dim + i * j + jj, (i * j + jj) * k + kk)] = 1.0;
            }
        }
        for jj in 0..j {
            b_in[2 * dim + i * j + jj] = 1.0;
        }
    }
    let dollar = problem.dollar();
    for t in 0..dim {
        a_in[(2 * dim + n * j, t)] = -dollar[t];
        a_in[(2 * dim + n * j + 1, t)] = -problem.d[t];
    }
    b_in[2 * dim + n * j] = -problem.revenue_floor;
    b_in[2 * dim + n * j + 1] = -problem.impression_floor;

    let qp = DenseQp {
        p: DMatrix::identity(dim, dim) * problem.gamma,
        q: DVector::from_iterator(dim, problem.p.iter().map(|v| -v)),
        a_eq,
        b_eq,
        a_in,
        b_in,
    };
    let x0 = DVector::from_element(dim, 1.0 / j as f64);
    let sol = solve_as_qp(&qp, &x0, 1e-10, 0)?;
    let obj = qp.objective(&sol.x);
    Ok((sol.x.iter().cloned().collect(), obj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_identity_shrinkage() {
        let m = DMatrix::identity(2, 2);
        let (y, obj) = enumerate_nonneg_qp(&m, &[1.0, -1.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10);
        assert!(y[1].abs() < 1e-10);
        assert!((obj - (-0.5)).abs() < 1e-10);
    }

    #[test]
    fn enumeration_cap_enforced() {
        let m = DMatrix::identity(30, 30);
        assert!(matches!(
            enumerate_nonneg_qp(&m, &vec![0.0; 30]),
            Err(MooError::OracleCapExceeded(30, _))
        ));
    }

    #[test]
    fn qp_enumeration_matches_active_set_solver() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        for _ in 0..10 {
            let n = 3;
            let mut g = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            let p = &g * g.transpose() + DMatrix::identity(n, n);
            let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
            // box [0, 1]^n
            let mut a_in = DMatrix::zeros(2 * n, n);
            let mut b_in = DVector::zeros(2 * n);
            for t in 0..n {
                a_in[(t, t)] = 1.0;
                b_in[t] = 1.0;
                a_in[(n + t, t)] = -1.0;
            }
            let qp = DenseQp {
                p,
                q,
                a_eq: DMatrix::zeros(0, n),
                b_eq: DVector::zeros(0),
                a_in,
                b_in,
            };
            let (x_enum, obj_enum) = enumerate_qp(&qp).unwrap();
            let sol = solve_as_qp(&qp, &DVector::from_element(n, 0.5), 1e-10, 0).unwrap();
            let obj_as = qp.objective(&sol.x);
            assert!(
                (obj_enum - obj_as).abs() < 1e-8,
                "enumeration {obj_enum} vs active set {obj_as}"
            );
            assert!((&x_enum - &sol.x).amax() < 1e-6);
        }
    }

    fn disk_instance(target: [f64; 2], radius_sq: f64) -> QcqpInstance {
        QcqpInstance::new(
            crate::interaction::SymPd::Diagonal(DVector::from_element(2, 1.0)),
            DVector::from_column_slice(&target),
            crate::interaction::EllipsoidConstraint::unit_ball(2, radius_sq).unwrap(),
            None,
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn qcqp_radial_projection() {
        let sol = exact_qcqp(&disk_instance([2.0, 0.0], 1.0)).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-8, "{:?}", sol.x);
        assert!(sol.x[1].abs() < 1e-8);
        assert!((sol.objective - 1.0).abs() < 1e-8);
        assert!(sol.lambda_quad > 0.0);
        assert!(sol.max_kkt_residual() <= 1e-9, "kkt {}", sol.max_kkt_residual());
    }

    #[test]
    fn qcqp_inactive_constraint_keeps_lambda_zero() {
        let sol = exact_qcqp(&disk_instance([0.3, -0.2], 4.0)).unwrap();
        assert_eq!(sol.lambda_quad, 0.0);
        assert!((sol.x[0] - 0.3).abs() < 1e-9);
        assert!((sol.x[1] + 0.2).abs() < 1e-9);
        assert!(sol.objective.abs() < 1e-12);
    }

    #[test]
    fn qcqp_dimension_cap() {
        let inst = QcqpInstance::new(
            crate::interaction::SymPd::Diagonal(DVector::from_element(101, 1.0)),
            DVector::zeros(101),
            crate::interaction::EllipsoidConstraint::unit_ball(101, 1.0).unwrap(),
            None,
            None,
            None,
        )
        .unwrap();
        assert!(matches!(exact_qcqp(&inst), Err(MooError::OracleCapExceeded(101, _))));
    }

    /// Independent route: quadratic-penalty continuation with projected
    /// gradient over the box.
    fn penalty_continuation(
        a: &DMatrix<f64>,
        a_center: &DVector<f64>,
        b: &DMatrix<f64>,
        b_center: &DVector<f64>,
        b_tilde: f64,
        lower: &[f64],
        upper: &[f64],
    ) -> Vec<f64> {
        let n = a.nrows();
        let mut x = DVector::from_fn(n, |t, _| 0.5 * (lower[t] + upper[t]));
        for rho_exp in [2, 4, 6, 8, 10, 12] {
            let rho = 10f64.powi(rho_exp);
            let mut step = 1.0 / (2.0 * a.amax() + 2.0 * rho * b.amax() * 10.0);
            let mut f_prev = f64::INFINITY;
            for _ in 0..200_000 {
                let da = &x - a_center;
                let db = &x - b_center;
                let quad = (db.transpose() * b * &db)[(0, 0)];
                let viol = (quad - b_tilde).max(0.0);
                let f = (da.transpose() * a * &da)[(0, 0)] + rho * viol * viol;
                let mut grad = a * &da * 2.0;
                if viol > 0.0 {
                    grad += b * &db * (4.0 * rho * viol);
                }
                let mut x_new = &x - &grad * step;
                for t in 0..n {
                    x_new[t] = x_new[t].clamp(lower[t], upper[t]);
                }
                let moved = (&x_new - &x).amax();
                x = x_new;
                if moved < 1e-14 {
                    break;
                }
                if f > f_prev * (1.0 + 1e-9) {
                    step *= 0.5;
                }
                f_prev = f;
            }
        }
        x.iter().cloned().collect()
    }

    #[test]
    fn qcqp_agrees_with_penalty_continuation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2024);
        let n = 5;
        let mut g1 = DMatrix::zeros(n, n);
        let mut g2 = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                g1[(r, c)] = rng.gen_range(-1.0..1.0);
                g2[(r, c)] = rng.gen_range(-1.0..1.0);
            }
        }
        let a = &g1 * g1.transpose() + DMatrix::identity(n, n);
        let b = &g2 * g2.transpose() + DMatrix::identity(n, n);
        let a_center = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
        let b_center = DVector::from_fn(n, |_, _| rng.gen_range(-0.3..0.3f64));
        let b_tilde = 0.4;
        let lower = vec![-1.0f64; n];
        let upper = vec![1.0f64; n];

        let inst = QcqpInstance::new(
            crate::interaction::SymPd::Dense(a.clone()),
            a_center.clone(),
            crate::interaction::EllipsoidConstraint::new(
                crate::interaction::SymPd::Dense(b.clone()),
                b_center.clone(),
                b_tilde,
            )
            .unwrap(),
            Some(crate::qcqp::LinearRows::from_box(&lower, &upper)),
            None,
            Some(b_center.iter().cloned().collect()),
        )
        .unwrap();
        let sol = exact_qcqp(&inst).unwrap();
        assert!(sol.max_kkt_residual() <= 1e-9, "kkt {}", sol.max_kkt_residual());

        let x_pen = penalty_continuation(&a, &a_center, &b, &b_center, b_tilde, &lower, &upper);
        let obj_pen = inst.objective_value(&x_pen);
        assert!(
            (sol.objective - obj_pen).abs() <= 1e-5 * (1.0 + obj_pen.abs()),
            "bisection {} vs penalty {}",
            sol.objective,
            obj_pen
        );
        for t in 0..n {
            assert!(
                (sol.x[t] - x_pen[t]).abs() <= 1e-3,
                "coordinate {t}: {} vs {}",
                sol.x[t],
                x_pen[t]
            );
        }
    }

    #[test]
    fn linearizer_stays_below_the_oracle() {
        use rand::{Rng, SeedableRng};
        for seed in 0..5u64 {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let n = 4;
            let mut g = DMatrix::zeros(n, n);
            for r in 0..n {
                for c in 0..n {
                    g[(r, c)] = rng.gen_range(-1.0..1.0);
                }
            }
            let b_mat = &g * g.transpose() + DMatrix::identity(n, n);
            let center = DVector::from_fn(n, |_, _| rng.gen_range(-0.2..0.2f64));
            let inst = QcqpInstance::new(
                crate::interaction::SymPd::Diagonal(DVector::from_element(n, 1.0)),
                DVector::from_fn(n, |_, _| rng.gen_range(1.0..2.0f64)),
                crate::interaction::EllipsoidConstraint::new(
                    crate::interaction::SymPd::Dense(b_mat),
                    center,
                    0.8,
                )
                .unwrap(),
                None,
                None,
                None,
            )
            .unwrap();
            let oracle = exact_qcqp(&inst).unwrap();
            let lin = crate::qcqp::linearize(&inst, 64, &crate::qcqp::LinearizeOptions::default())
                .unwrap();
            let report =
                crate::qcqp::solve_qp(&inst, &lin, &crate::qcqp::QpSolveOptions::default())
                    .unwrap();
            assert!(report.converged);
            assert!(
                report.objective <= oracle.objective + 1e-8,
                "seed {seed}: relaxation {} above oracle {}",
                report.objective,
                oracle.objective
            );
        }
    }

    #[test]
    fn direct_ranking_solve_is_feasible_and_certified() {
        let p = crate::problem::synthetic_problem(2, 3, 2, 12, true).unwrap();
        let (x, _) = solve_ranking_primal_direct(&p).unwrap();
        let poly = crate::problem::build_local_polytope(3, 2).unwrap();
        for i in 0..2 {
            let xi = &x[i * 6..(i + 1) * 6];
            assert!(poly.contains(xi, 1e-8));
        }
        let rev: f64 = x.iter().zip(p.dollar()).map(|(a, b)| a * b).sum();
        assert!(rev >= p.revenue_floor - 1e-8);
    }
}
