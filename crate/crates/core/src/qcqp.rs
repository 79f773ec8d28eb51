//! QCQP-to-QP approximation: replace the single ellipsoidal constraint with
//! N tangent half-spaces at boundary points, solve the resulting QP through
//! its nonnegative dual, and certify cover/convergence behavior.
//!
//!   minimize (x - a)^T A (x - a)
//!   subject to (x - b)^T B (x - b) <= b_tilde,  C x <= c
//!
//! The tangent plane at a boundary point x_j is
//! (x - b)^T B (x_j - b) <= b_tilde, which supports the ellipsoid (by the
//! Cauchy-Schwarz bound in the B-metric), so the linearized feasible set is
//! always an outer cover and the approximate optimum never exceeds the true
//! one.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::time::Instant;

use crate::error::{MooError, Result};
use crate::interaction::{EllipsoidConstraint, SymPd};
use crate::lowdisc::{generate_boundary_points_with, BoundarySampler, PointSet};
use crate::nonneg::{
    solve_nonneg_qp_with_start, DenseSymOp, NonnegQpOptions, QuadOp, SplitMethod,
};
use crate::sparse::Csr;

/// Strictly convex objective (x - a)^T A (x - a) with cached solver.
#[derive(Debug, Clone)]
enum ObjSolver {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Diag(DVector<f64>),
}

impl ObjSolver {
    /// v -> A^{-1} v
    fn solve(&self, v: &[f64], out: &mut [f64]) {
        match self {
            ObjSolver::Chol(c) => {
                let sol = c.solve(&DVector::from_column_slice(v));
                out.copy_from_slice(sol.as_slice());
            }
            ObjSolver::Diag(d) => {
                for t in 0..v.len() {
                    out[t] = v[t] / d[t];
                }
            }
        }
    }
}

/// Linear inequality rows C x <= c (sparse; box constraints are two rows per
/// coordinate).
#[derive(Debug, Clone)]
pub struct LinearRows {
    pub mat: Csr,
    pub rhs: Vec<f64>,
}

impl LinearRows {
    /// Rows for l <= x <= u.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Self {
        let dim = lower.len();
        let mut coo = crate::sparse::Coo::new(2 * dim, dim);
        let mut rhs = Vec::with_capacity(2 * dim);
        for t in 0..dim {
            coo.push(t, t, 1.0);
        }
        rhs.extend_from_slice(upper);
        for t in 0..dim {
            coo.push(dim + t, t, -1.0);
        }
        rhs.extend(lower.iter().map(|l| -l));
        LinearRows { mat: coo.to_csr(), rhs }
    }
}

/// Equality rows E x = e (dense; used by slate-structured instances).
#[derive(Debug, Clone)]
pub struct LinearEqs {
    pub mat: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// A QCQP instance with one quadratic constraint.
#[derive(Debug, Clone)]
pub struct QcqpInstance {
    pub objective: SymPd,
    pub obj_center: DVector<f64>,
    pub ellipsoid: EllipsoidConstraint,
    pub lin: Option<LinearRows>,
    pub lin_eq: Option<LinearEqs>,
    pub feasible_hint: Option<Vec<f64>>,
    solver: ObjSolver,
}

impl QcqpInstance {
    pub fn new(
        objective: SymPd,
        obj_center: DVector<f64>,
        ellipsoid: EllipsoidConstraint,
        lin: Option<LinearRows>,
        lin_eq: Option<LinearEqs>,
        feasible_hint: Option<Vec<f64>>,
    ) -> Result<Self> {
        let dim = objective.dim();
        if obj_center.len() != dim || ellipsoid.dim() != dim {
            return Err(MooError::DimensionMismatch(format!(
                "objective {}, center {}, ellipsoid {}",
                dim,
                obj_center.len(),
                ellipsoid.dim()
            )));
        }
        if let Some(rows) = &lin {
            if rows.mat.cols != dim || rows.mat.rows != rows.rhs.len() {
                return Err(MooError::DimensionMismatch("linear rows disagree".into()));
            }
        }
        if let Some(eqs) = &lin_eq {
            if eqs.mat.ncols() != dim || eqs.mat.nrows() != eqs.rhs.len() {
                return Err(MooError::DimensionMismatch("equality rows disagree".into()));
            }
        }
        let solver = match &objective {
            SymPd::Dense(m) => ObjSolver::Chol(
                m.clone()
                    .cholesky()
                    .ok_or_else(|| MooError::NotPositiveDefinite("objective matrix".into()))?,
            ),
            SymPd::Diagonal(d) => {
                if d.iter().any(|v| *v <= 0.0) {
                    return Err(MooError::NotPositiveDefinite("objective diagonal".into()));
                }
                ObjSolver::Diag(d.clone())
            }
        };
        Ok(QcqpInstance { objective, obj_center, ellipsoid, lin, lin_eq, feasible_hint, solver })
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// (x - a)^T A (x - a)
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> =
            x.iter().zip(self.obj_center.iter()).map(|(v, a)| v - a).collect();
        self.objective.quad_form(&diff)
    }

    pub fn linear_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        if let Some(rows) = &self.lin {
            let mut out = vec![0.0; rows.mat.rows];
            rows.mat.mul_vec(x, &mut out);
            for (lhs, rhs) in out.iter().zip(&rows.rhs) {
                worst = worst.max(lhs - rhs);
            }
        }
        if let Some(eqs) = &self.lin_eq {
            let r = &eqs.mat * DVector::from_column_slice(x) - &eqs.rhs;
            worst = worst.max(r.amax());
        }
        worst
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.ellipsoid.contains(x, tol) && self.linear_violation(x) <= tol
    }

    /// A point satisfying the linear constraints (hint, then the ellipsoid
    /// center). Needed by the exact oracle's inner solves.
    pub fn linear_feasible_point(&self) -> Result<Vec<f64>> {
        if let Some(h) = &self.feasible_hint {
            if self.linear_violation(h) <= 1e-9 {
                return Ok(h.clone());
            }
        }
        let center: Vec<f64> = self.ellipsoid.center.iter().cloned().collect();
        if self.linear_violation(&center) <= 1e-9 {
            return Ok(center);
        }
        Err(MooError::Infeasible(
            "no linear-feasible starting point available (provide feasible_hint)".into(),
        ))
    }
}

/// The tangent-plane relaxation of a QCQP instance.
#[derive(Debug, Clone)]
pub struct LinearizedQp {
    pub tangent_points: PointSet,
    /// N x dim row-major tangent normals B (x_j - b)
    pub tangent_rows: Vec<f64>,
    /// right-hand sides b_tilde + row_j . b
    pub tangent_rhs: Vec<f64>,
    /// worst relative tangency residual over generators
    pub max_tangency_residual: f64,
    pub cover_bounded: Option<bool>,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoverCheck {
    /// rank / count necessary conditions only
    Quick,
    /// full positive-spanning certificate (costly in high dimension)
    Full,
    Skip,
}

#[derive(Debug, Clone)]
pub struct LinearizeOptions {
    pub sampler: BoundarySampler,
    /// accept N < dim + 1 tangent rows (the QP stays well posed because the
    /// objective is strictly convex; the cover itself is then unbounded)
    pub allow_unbounded_cover: bool,
    pub cover_check: CoverCheck,
}

impl Default for LinearizeOptions {
    fn default() -> Self {
        LinearizeOptions {
            sampler: BoundarySampler::Net,
            allow_unbounded_cover: false,
            cover_check: CoverCheck::Quick,
        }
    }
}

/// Build the N-row tangent relaxation.
pub fn linearize(inst: &QcqpInstance, n: usize, opts: &LinearizeOptions) -> Result<LinearizedQp> {
    let dim = inst.dim();
    if n < dim + 1 && !opts.allow_unbounded_cover {
        return Err(MooError::UnboundedCover(format!(
            "{n} tangent points cannot cover an ellipsoid in R^{dim}: need at least {}",
            dim + 1
        )));
    }
    let points = generate_boundary_points_with(&inst.ellipsoid, n, opts.sampler)?;
    let lin = tangent_rows_for(inst, points)?;

    let verdict = match opts.cover_check {
        CoverCheck::Skip => None,
        CoverCheck::Quick => Some(quick_cover_check(&lin)),
        CoverCheck::Full => {
            Some(certify_cover(&lin.tangent_points, &inst.ellipsoid)?.bounded)
        }
    };
    let lin = LinearizedQp { cover_bounded: verdict, ..lin };
    if lin.cover_bounded == Some(false) && !opts.allow_unbounded_cover {
        return Err(MooError::UnboundedCover(
            "tangent normals do not positively span the space".into(),
        ));
    }
    Ok(lin)
}

fn tangent_rows_for(inst: &QcqpInstance, points: PointSet) -> Result<LinearizedQp> {
    let dim = inst.dim();
    let n = points.n;
    let e = &inst.ellipsoid;
    let mut rows = vec![0.0f64; n * dim];
    let mut rhs = vec![0.0f64; n];
    let mut max_residual = 0.0f64;
    for i in 0..n {
        let x = points.point(i);
        max_residual = max_residual.max(e.boundary_residual(x));
        let g = e.normal(x);
        let dot_center: f64 = g.iter().zip(e.center.iter()).map(|(a, b)| a * b).sum();
        rows[i * dim..(i + 1) * dim].copy_from_slice(&g);
        rhs[i] = e.radius_sq + dot_center;
    }
    Ok(LinearizedQp {
        tangent_points: points,
        tangent_rows: rows,
        tangent_rhs: rhs,
        max_tangency_residual: max_residual,
        cover_bounded: None,
        dim,
    })
}

/// Necessary conditions only: enough points and full-rank normals.
fn quick_cover_check(lin: &LinearizedQp) -> bool {
    let (n, dim) = (lin.tangent_rhs.len(), lin.dim);
    if n < dim + 1 {
        return false;
    }
    let m = DMatrix::from_row_slice(n, dim, &lin.tangent_rows);
    m.rank(1e-10) == dim
}

/// Cover certification result.
#[derive(Debug, Clone)]
pub struct CoverVerdict {
    pub bounded: bool,
    /// a recession direction of the tangent polytope, when unbounded
    pub ray: Option<Vec<f64>>,
}

/// Decide whether the tangent planes at the given boundary points bound a
/// finite cover: the normals B(x_j - b) must positively span the space.
/// Rank and count give quick rejections; otherwise the distance from the
/// origin to the convex hull of the normalized normals either yields a
/// strictly separating ray or places the origin inside the hull, and a
/// final sweep of axis-pinned feasibility programs hunts for boundary rays.
pub fn certify_cover(points: &PointSet, e: &EllipsoidConstraint) -> Result<CoverVerdict> {
    let dim = e.dim();
    if points.n == 0 {
        return Err(MooError::InvalidInput("need at least one point".into()));
    }
    if points.dim != dim {
        return Err(MooError::DimensionMismatch(format!(
            "points in R^{}, ellipsoid in R^{dim}",
            points.dim
        )));
    }
    // normalized normals
    let mut normals = vec![0.0f64; points.n * dim];
    for i in 0..points.n {
        let g = e.normal(points.point(i));
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        for d in 0..dim {
            normals[i * dim + d] = g[d] / norm;
        }
    }
    let n = points.n;

    if n <= dim {
        // fewer than dim + 1 tangent planes can never bound the cover
        let ray = if n < dim {
            kernel_ray(&normals, n, dim)
        } else {
            // square system: push against all planes at once
            solve_common_ray(&normals, n, dim)
        };
        return Ok(CoverVerdict { bounded: false, ray });
    }
    let g = DMatrix::from_row_slice(n, dim, &normals);
    if g.rank(1e-10) < dim {
        return Ok(CoverVerdict { bounded: false, ray: kernel_ray(&normals, n, dim) });
    }

    // distance from the origin to conv{normals}: positive distance gives a
    // strictly separating recession direction
    let hull_point = min_norm_convex_combination(&normals, n, dim)?;
    let hull_norm: f64 = hull_point.iter().map(|v| v * v).sum::<f64>().sqrt();
    if hull_norm > 1e-7 {
        let ray: Vec<f64> = hull_point.iter().map(|v| -v / hull_norm).collect();
        return Ok(CoverVerdict { bounded: false, ray: Some(ray) });
    }

    // origin is in the hull; look for boundary rays with pinned-coordinate
    // feasibility programs min ||max(G d, 0)||^2 over d_i = sigma, |d| <= 1
    for pin in 0..dim {
        for sigma in [1.0f64, -1.0] {
            if let Some(d) = pinned_ray_search(&normals, n, dim, pin, sigma) {
                return Ok(CoverVerdict { bounded: false, ray: Some(d) });
            }
        }
    }
    Ok(CoverVerdict { bounded: true, ray: None })
}

fn kernel_ray(normals: &[f64], n: usize, dim: usize) -> Option<Vec<f64>> {
    let g = DMatrix::from_row_slice(n, dim, normals);
    let svd = g.svd(true, true);
    let v_t = svd.v_t?;
    let last = v_t.row(v_t.nrows() - 1);
    if svd.singular_values[svd.singular_values.len() - 1] < 1e-8 || n < dim {
        let ray: Vec<f64> = last.iter().cloned().collect();
        return Some(ray);
    }
    None
}

fn solve_common_ray(normals: &[f64], n: usize, dim: usize) -> Option<Vec<f64>> {
    let g = DMatrix::from_row_slice(n, dim, normals);
    let rhs = DVector::from_element(n, -1.0);
    g.svd(true, true).solve(&rhs, 1e-12).ok().map(|d| {
        let norm = d.norm().max(1e-300);
        d.iter().map(|v| v / norm).collect()
    })
}

/// Distance realizer: argmin ||sum_j y_j g_j||^2 over the simplex.
fn min_norm_convex_combination(normals: &[f64], n: usize, dim: usize) -> Result<Vec<f64>> {
    use crate::asqp::{solve_as_qp, DenseQp};
    // P_{ij} = 2 g_i . g_j on the simplex (sum y = 1, y >= 0)
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for d in 0..dim {
                acc += normals[i * dim + d] * normals[j * dim + d];
            }
            p[(i, j)] = 2.0 * acc;
        }
    }
    // tiny ridge keeps the reduced systems solvable when normals repeat
    for i in 0..n {
        p[(i, i)] += 1e-12;
    }
    let qp = DenseQp {
        p,
        q: DVector::zeros(n),
        a_eq: DMatrix::from_element(1, n, 1.0),
        b_eq: DVector::from_element(1, 1.0),
        a_in: {
            let mut m = DMatrix::zeros(n, n);
            for t in 0..n {
                m[(t, t)] = -1.0;
            }
            m
        },
        b_in: DVector::zeros(n),
    };
    let x0 = DVector::from_element(n, 1.0 / n as f64);
    let sol = solve_as_qp(&qp, &x0, 1e-12, 0)?;
    let mut point = vec![0.0f64; dim];
    for j in 0..n {
        for d in 0..dim {
            point[d] += sol.x[j] * normals[j * dim + d];
        }
    }
    Ok(point)
}

/// Projected-gradient feasibility probe for a nonzero recession direction
/// with coordinate `pin` fixed at `sigma`. Returns the ray when the hinge
/// objective reaches (numerical) zero.
fn pinned_ray_search(
    normals: &[f64],
    n: usize,
    dim: usize,
    pin: usize,
    sigma: f64,
) -> Option<Vec<f64>> {
    let mut d = vec![0.0f64; dim];
    d[pin] = sigma;
    let mut grad = vec![0.0f64; dim];
    let mut step = 0.5f64;
    let mut value = f64::INFINITY;
    for _ in 0..600 {
        // h(d) = 1/2 sum_j max(g_j . d, 0)^2
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut h = 0.0f64;
        for j in 0..n {
            let row = &normals[j * dim..(j + 1) * dim];
            let dot: f64 = row.iter().zip(&d).map(|(a, b)| a * b).sum();
            if dot > 0.0 {
                h += 0.5 * dot * dot;
                for t in 0..dim {
                    grad[t] += dot * row[t];
                }
            }
        }
        if h <= 1e-22 {
            return Some(d);
        }
        if h > value {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        value = h;
        for t in 0..dim {
            d[t] = (d[t] - step * grad[t]).clamp(-1.0, 1.0);
        }
        d[pin] = sigma;
    }
    None
}

/// One refinement step in a solve trace.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TraceEntry {
    pub n_points: usize,
    pub objective: f64,
    pub error_to_oracle: Option<f64>,
    pub wall_ms: f64,
}

/// Outcome of a linearized solve.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub objective: f64,
    pub n_points: usize,
    /// (x - b)^T B (x - b) - b_tilde at the solution (negative inside)
    pub quad_violation: f64,
    pub in_s: bool,
    pub max_row_violation: f64,
    pub comp_slack: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_ms: f64,
    pub cover_bounded: Option<bool>,
    /// objective after projecting the solution back onto the ellipsoid
    pub polished_objective: Option<f64>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone)]
pub struct QpSolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: SplitMethod,
    /// also report the objective of the solution projected back into S
    pub polish: bool,
    pub warm_start: Option<Vec<f64>>,
    /// form the dual Gram matrix densely when the row count is at most this
    pub dense_dual_cap: usize,
}

impl Default for QpSolveOptions {
    fn default() -> Self {
        QpSolveOptions {
            tol: 1e-10,
            max_iter: 0,
            method: SplitMethod::ProjectedGradient,
            polish: false,
            warm_start: None,
            dense_dual_cap: 4096,
        }
    }
}

/// All inequality rows of the linearized QP: tangents, equality pairs, then
/// sparse linear rows.
struct RowStack<'a> {
    dim: usize,
    tangents: &'a [f64],
    n_tangent: usize,
    eq: Option<&'a LinearEqs>,
    lin: Option<&'a LinearRows>,
}

impl<'a> RowStack<'a> {
    fn n_rows(&self) -> usize {
        self.n_tangent
            + self.eq.map_or(0, |e| 2 * e.mat.nrows())
            + self.lin.map_or(0, |l| l.mat.rows)
    }

    fn rhs(&self, tangent_rhs: &[f64]) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.n_rows());
        h.extend_from_slice(tangent_rhs);
        if let Some(e) = self.eq {
            h.extend(e.rhs.iter());
            h.extend(e.rhs.iter().map(|v| -v));
        }
        if let Some(l) = self.lin {
            h.extend_from_slice(&l.rhs);
        }
        h
    }

    /// out = G x
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.dim;
        for j in 0..self.n_tangent {
            let row = &self.tangents[j * dim..(j + 1) * dim];
            out[j] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        let mut base = self.n_tangent;
        if let Some(e) = self.eq {
            let m = e.mat.nrows();
            for r in 0..m {
                let mut acc = 0.0;
                for c in 0..dim {
                    acc += e.mat[(r, c)] * x[c];
                }
                out[base + r] = acc;
                out[base + m + r] = -acc;
            }
            base += 2 * m;
        }
        if let Some(l) = self.lin {
            l.mat.mul_vec(x, &mut out[base..base + l.mat.rows]);
        }
    }

    /// out += G^T y
    fn apply_t(&self, y: &[f64], out: &mut [f64]) {
        let dim = self.dim;
        for j in 0..self.n_tangent {
            let w = y[j];
            if w == 0.0 {
                continue;
            }
            let row = &self.tangents[j * dim..(j + 1) * dim];
            for t in 0..dim {
                out[t] += w * row[t];
            }
        }
        let mut base = self.n_tangent;
        if let Some(e) = self.eq {
            let m = e.mat.nrows();
            for r in 0..m {
                let w = y[base + r] - y[base + m + r];
                if w == 0.0 {
                    continue;
                }
                for t in 0..dim {
                    out[t] += w * e.mat[(r, t)];
                }
            }
            base += 2 * m;
        }
        if let Some(l) = self.lin {
            l.mat.mul_vec_t_add(&y[base..base + l.mat.rows], out);
        }
    }

    /// dense row j into `buf`
    fn dense_row(&self, j: usize, buf: &mut [f64]) {
        let dim = self.dim;
        buf.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n_tangent {
            buf.copy_from_slice(&self.tangents[j * dim..(j + 1) * dim]);
            return;
        }
        let mut base = self.n_tangent;
        if let Some(e) = self.eq {
            let m = e.mat.nrows();
            if j < base + m {
                for t in 0..dim {
                    buf[t] = e.mat[(j - base, t)];
                }
                return;
            }
            if j < base + 2 * m {
                for t in 0..dim {
                    buf[t] = -e.mat[(j - base - m, t)];
                }
                return;
            }
            base += 2 * m;
        }
        if let Some(l) = self.lin {
            let (idx, val) = l.mat.row(j - base);
            for (&c, &v) in idx.iter().zip(val) {
                buf[c] = v;
            }
        }
    }
}

/// Dual operator y -> G P^{-1} G^T y with P = 2A, applied implicitly.
struct ImplicitDualOp<'a> {
    rows: &'a RowStack<'a>,
    solver: &'a ObjSolver,
}

impl<'a> QuadOp for ImplicitDualOp<'a> {
    fn dim(&self) -> usize {
        self.rows.n_rows()
    }
    fn apply(&self, y: &[f64], out: &mut [f64]) {
        let dim = self.rows.dim;
        let mut u = vec![0.0f64; dim];
        self.rows.apply_t(y, &mut u);
        let mut w = vec![0.0f64; dim];
        self.solver.solve(&u, &mut w);
        w.iter_mut().for_each(|v| *v *= 0.5); // P = 2A
        self.rows.apply(&w, out);
    }
}

/// Solve the linearized QP through its nonnegative dual. The primal comes
/// back in closed form, x = a - A^{-1} G^T y / 2, so dual stationarity
/// bounds the primal row violation directly.
pub fn solve_qp(
    inst: &QcqpInstance,
    lin: &LinearizedQp,
    opts: &QpSolveOptions,
) -> Result<SolveReport> {
    solve_qp_internal(inst, lin, opts).map(|(report, _)| report)
}

fn solve_qp_internal(
    inst: &QcqpInstance,
    lin: &LinearizedQp,
    opts: &QpSolveOptions,
) -> Result<(SolveReport, Vec<f64>)> {
    let start = Instant::now();
    let dim = inst.dim();
    if lin.dim != dim {
        return Err(MooError::DimensionMismatch("relaxation built for another instance".into()));
    }
    let rows = RowStack {
        dim,
        tangents: &lin.tangent_rows,
        n_tangent: lin.tangent_rhs.len(),
        eq: inst.lin_eq.as_ref(),
        lin: inst.lin.as_ref(),
    };
    let n_rows = rows.n_rows();
    let h = rows.rhs(&lin.tangent_rhs);

    // q_core = G a - h (the P^{-1} term collapses against the center)
    let a_slice: Vec<f64> = inst.obj_center.iter().cloned().collect();
    let mut ga = vec![0.0f64; n_rows];
    rows.apply(&a_slice, &mut ga);
    let q_core: Vec<f64> = ga.iter().zip(&h).map(|(g, h)| g - h).collect();

    let qp_opts = NonnegQpOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        method: opts.method,
        keep_trace: false,
    };
    let sol = if n_rows <= opts.dense_dual_cap {
        let m = dense_dual_gram(&rows, &inst.solver);
        solve_nonneg_with_start(&DenseSymOp(m), &q_core, &qp_opts, opts.warm_start.as_deref())?
    } else {
        let op = ImplicitDualOp { rows: &rows, solver: &inst.solver };
        solve_nonneg_with_start(&op, &q_core, &qp_opts, opts.warm_start.as_deref())?
    };

    // primal recovery
    let mut u = vec![0.0f64; dim];
    rows.apply_t(&sol.y, &mut u);
    let mut w = vec![0.0f64; dim];
    inst.solver.solve(&u, &mut w);
    let x: Vec<f64> = (0..dim).map(|t| inst.obj_center[t] - 0.5 * w[t]).collect();

    let mut gx = vec![0.0f64; n_rows];
    rows.apply(&x, &mut gx);
    let mut max_violation = 0.0f64;
    let mut comp = 0.0f64;
    for j in 0..n_rows {
        max_violation = max_violation.max(gx[j] - h[j]);
        comp = comp.max((sol.y[j] * (gx[j] - h[j])).abs());
    }
    let quad = inst.ellipsoid.quad(&x);
    let objective = inst.objective_value(&x);
    let polished_objective = if opts.polish {
        let proj = project_onto_ellipsoid(&inst.ellipsoid, &x);
        Some(inst.objective_value(&proj))
    } else {
        None
    };
    let report = SolveReport {
        objective,
        n_points: lin.tangent_rhs.len(),
        quad_violation: quad - inst.ellipsoid.radius_sq,
        in_s: quad <= inst.ellipsoid.radius_sq * (1.0 + 1e-12) + 1e-12,
        max_row_violation: max_violation,
        comp_slack: comp,
        iterations: sol.iterations,
        converged: sol.converged,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        cover_bounded: lin.cover_bounded,
        polished_objective,
        trace: Vec::new(),
        x,
    };
    Ok((report, sol.y))
}

fn solve_nonneg_with_start(
    op: &dyn QuadOp,
    q: &[f64],
    opts: &NonnegQpOptions,
    warm: Option<&[f64]>,
) -> Result<crate::nonneg::NonnegQpSolution> {
    // warm multipliers from a nested prefix pad with zeros for the new rows
    let start = warm.filter(|y0| !y0.is_empty()).map(|y0| {
        let mut padded = vec![0.0f64; op.dim()];
        let k = y0.len().min(padded.len());
        padded[..k].copy_from_slice(&y0[..k]);
        padded
    });
    solve_nonneg_qp_with_start(op, q, opts, start)
}

fn dense_dual_gram(rows: &RowStack<'_>, solver: &ObjSolver) -> DMatrix<f64> {
    let n = rows.n_rows();
    let dim = rows.dim;
    let mut m = DMatrix::zeros(n, n);
    // parallel over rows: w_i = P^{-1} g_i, then dots with g_j for j >= i
    let entries: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut gi = vec![0.0f64; dim];
            rows.dense_row(i, &mut gi);
            let mut w = vec![0.0f64; dim];
            solver.solve(&gi, &mut w);
            w.iter_mut().for_each(|v| *v *= 0.5);
            let mut out = vec![0.0f64; n - i];
            let mut gj = vec![0.0f64; dim];
            for j in i..n {
                rows.dense_row(j, &mut gj);
                out[j - i] = w.iter().zip(&gj).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect();
    for (i, row) in entries.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            m[(i, i + off)] = v;
            m[(i + off, i)] = v;
        }
    }
    m
}

/// Exact Euclidean projection onto the ellipsoid (secular equation in the
/// eigenbasis; per-coordinate for diagonal metrics).
pub fn project_onto_ellipsoid(e: &EllipsoidConstraint, x: &[f64]) -> Vec<f64> {
    if e.contains(x, 0.0) {
        return x.to_vec();
    }
    let dim = e.dim();
    let center: Vec<f64> = e.center.iter().cloned().collect();
    let w: Vec<f64> = x.iter().zip(&center).map(|(a, b)| a - b).collect();
    let (lambdas, basis): (Vec<f64>, Option<DMatrix<f64>>) = match e.matrix() {
        SymPd::Diagonal(d) => (d.iter().cloned().collect(), None),
        SymPd::Dense(m) => {
            let eig = nalgebra::SymmetricEigen::new(m.clone());
            (eig.eigenvalues.iter().cloned().collect(), Some(eig.eigenvectors))
        }
    };
    let wt: Vec<f64> = match &basis {
        None => w.clone(),
        Some(v) => {
            let prod = v.transpose() * DVector::from_column_slice(&w);
            prod.iter().cloned().collect()
        }
    };
    let quad_at = |nu: f64| -> f64 {
        (0..dim)
            .map(|t| {
                let denom = 1.0 + nu * lambdas[t];
                lambdas[t] * wt[t] * wt[t] / (denom * denom)
            })
            .sum()
    };
    let target = e.radius_sq;
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while quad_at(hi) > target {
        hi *= 2.0;
        if hi > 1e18 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if quad_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let vt: Vec<f64> = (0..dim).map(|t| wt[t] / (1.0 + nu * lambdas[t])).collect();
    match &basis {
        None => (0..dim).map(|t| vt[t] + center[t]).collect(),
        Some(v) => {
            let back = v * DVector::from_column_slice(&vt);
            (0..dim).map(|t| back[t] + center[t]).collect()
        }
    }
}

/// Solve across an increasing schedule of tangent budgets with nested point
/// sets, recording the objective (and oracle error when available) at every
/// step. Nested samplers shrink the feasible set monotonically, so the
/// objective trace is non-decreasing up to solver tolerance.
pub fn refine(
    inst: &QcqpInstance,
    schedule: &[usize],
    opts: &QpSolveOptions,
    oracle_x: Option<&[f64]>,
) -> Result<SolveReport> {
    if schedule.is_empty() {
        return Err(MooError::InvalidInput("empty refinement schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MooError::InvalidInput("schedule must be strictly increasing".into()));
    }
    let dim = inst.dim();
    let max_n = *schedule.last().unwrap();
    // one nested master point set, prefixed per step
    let master = if max_n.is_power_of_two() {
        generate_boundary_points_with(&inst.ellipsoid, max_n, BoundarySampler::NestedNet)?
    } else {
        return Err(MooError::InvalidInput(format!("schedule tail {max_n} is not a power of two")));
    };

    let mut trace = Vec::with_capacity(schedule.len());
    let mut last: Option<SolveReport> = None;
    let mut warm: Option<Vec<f64>> = None;
    for &n in schedule {
        if !n.is_power_of_two() {
            return Err(MooError::InvalidInput(format!("schedule entry {n} is not a power of two")));
        }
        if n < dim + 1 && inst.lin.is_none() && inst.lin_eq.is_none() {
            return Err(MooError::UnboundedCover(format!(
                "schedule entry {n} below the {}-point minimum",
                dim + 1
            )));
        }
        let step_start = Instant::now();
        let lin = tangent_rows_for(inst, master.prefix(n))?;
        let mut step_opts = opts.clone();
        step_opts.warm_start = warm.take();
        let (report, dual) = solve_qp_internal(inst, &lin, &step_opts)?;
        let error = oracle_x.map(|xs| {
            let num: f64 =
                report.x.iter().zip(xs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            if den > 0.0 {
                num / den
            } else {
                num
            }
        });
        trace.push(TraceEntry {
            n_points: n,
            objective: report.objective,
            error_to_oracle: error,
            wall_ms: step_start.elapsed().as_secs_f64() * 1e3,
        });
        // nested schedules keep earlier rows as a prefix, so the multipliers
        // seed the next solve directly (tangent block first, then the fixed
        // linear rows, which shift position and are re-padded by the solver)
        warm = Some(dual[..lin.tangent_rhs.len()].to_vec());
        last = Some(report);
    }
    let mut report = last.unwrap();
    report.trace = trace;
    Ok(report)
}

/// Consistency checks of a solve against the exact oracle.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CertificateBundle {
    pub objectives_match: bool,
    /// when objectives match: the solutions must coincide (strict convexity)
    pub solutions_match: Option<bool>,
    /// outer relaxation: approximate objective below the oracle's
    pub relaxation_holds: bool,
    /// when the approximation sits outside S: the oracle must sit on the
    /// feasible boundary
    pub oracle_on_boundary: Option<bool>,
    /// fitted slope of log(error) vs log(N) from the refinement trace
    pub error_slope: Option<f64>,
}

pub fn certificate_checks(
    report: &SolveReport,
    oracle_x: &[f64],
    oracle_objective: f64,
    inst: &QcqpInstance,
) -> CertificateBundle {
    let objectives_match = (report.objective - oracle_objective).abs() <= 1e-8;
    let solutions_match = if objectives_match {
        let gap = report
            .x
            .iter()
            .zip(oracle_x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        Some(gap <= 1e-6)
    } else {
        None
    };
    let relaxation_holds = report.objective <= oracle_objective + 1e-8;
    let oracle_on_boundary = if !report.in_s {
        let quad_gap = (inst.ellipsoid.quad(oracle_x) - inst.ellipsoid.radius_sq).abs()
            / inst.ellipsoid.radius_sq.max(1.0);
        let mut on_linear_boundary = false;
        if let Some(rows) = &inst.lin {
            let mut gx = vec![0.0; rows.mat.rows];
            rows.mat.mul_vec(oracle_x, &mut gx);
            on_linear_boundary =
                gx.iter().zip(&rows.rhs).any(|(lhs, rhs)| (lhs - rhs).abs() <= 1e-6);
        }
        Some(quad_gap <= 1e-6 || on_linear_boundary)
    } else {
        None
    };
    let error_slope = {
        let pts: Vec<(f64, f64)> = report
            .trace
            .iter()
            .filter_map(|t| {
                t.error_to_oracle
                    .filter(|e| *e > 1e-14)
                    .map(|e| ((t.n_points as f64).ln(), e.ln()))
            })
            .collect();
        if pts.len() >= 2 {
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            let denom = n * sxx - sx * sx;
            if denom.abs() > 1e-12 {
                Some((n * sxy - sx * sy) / denom)
            } else {
                None
            }
        } else {
            None
        }
    };
    CertificateBundle {
        objectives_match,
        solutions_match,
        relaxation_holds,
        oracle_on_boundary,
        error_slope,
    }
}

/// Constructor for the sampler variants named on the CLI.
pub fn sampler_from_name(name: &str, seed: u64) -> Result<BoundarySampler> {
    match name {
        "net" => Ok(BoundarySampler::Net),
        "nested-net" => Ok(BoundarySampler::NestedNet),
        "cube" => Ok(BoundarySampler::UniformCube { seed }),
        "sphere" => Ok(BoundarySampler::UniformSphere { seed }),
        other => Err(MooError::InvalidInput(format!("unknown sampler '{other}'"))),
    }
}
