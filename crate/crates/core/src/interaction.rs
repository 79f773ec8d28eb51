//! Interaction-aware modeling: block-structured matrices mapping a slate to
//! position-conditional event probabilities, positive-definiteness repair,
//! and the ellipsoidal constraint set behind the QCQP.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MooError, Result};
use crate::linalg::{eig_min_symmetric, sym_sqrt_factors};

/// Repair triggers below this minimum-eigenvalue threshold. Strictly
/// positive so downstream solvers get strict convexity even when the raw
/// block is only semidefinite.
pub const PD_TRIGGER_DELTA: f64 = 1e-10;

pub const CONDITION_CAP: f64 = 1e12;

/// Parametric per-user interaction block: item-level priors on the diagonal
/// blocks and zero-diagonal cross blocks coupling distinct items across
/// distinct slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionBlock {
    #[serde(rename = "J")]
    pub n_items: usize,
    #[serde(rename = "K")]
    pub n_slots: usize,
    /// prior event probability per item, in (0, 1]
    pub p_tilde: Vec<f64>,
    /// cross blocks in (j, j') order with j < j'
    pub offdiag: Vec<OffDiagBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OffDiagBlock {
    pub j: usize,
    pub j2: usize,
    /// K x K row-major coefficients with a zero diagonal
    pub a: Vec<f64>,
}

/// Assemble the JK x JK symmetric matrix: diagonal blocks p_tilde_j I_K,
/// cross block (j, j') from the coefficients, and (j', j) as its transpose.
pub fn assemble_block(block: &InteractionBlock) -> Result<DMatrix<f64>> {
    let (j, k) = (block.n_items, block.n_slots);
    if block.p_tilde.len() != j {
        return Err(MooError::DimensionMismatch(format!(
            "p_tilde has {} entries, expected {j}",
            block.p_tilde.len()
        )));
    }
    for (idx, &pt) in block.p_tilde.iter().enumerate() {
        if !(pt > 0.0 && pt <= 1.0) {
            return Err(MooError::InvalidInput(format!("p_tilde[{idx}] = {pt} out of (0,1]")));
        }
    }
    let jk = j * k;
    let mut q = DMatrix::zeros(jk, jk);
    for jj in 0..j {
        for kk in 0..k {
            q[(jj * k + kk, jj * k + kk)] = block.p_tilde[jj];
        }
    }
    for cross in &block.offdiag {
        if cross.j >= cross.j2 || cross.j2 >= j {
            return Err(MooError::InvalidInput(format!(
                "cross block ({}, {}) out of order or range",
                cross.j, cross.j2
            )));
        }
        if cross.a.len() != k * k {
            return Err(MooError::DimensionMismatch(format!(
                "cross block ({}, {}) has {} coefficients, expected {}",
                cross.j,
                cross.j2,
                cross.a.len(),
                k * k
            )));
        }
        for kk in 0..k {
            if cross.a[kk * k + kk] != 0.0 {
                return Err(MooError::InvalidInput(format!(
                    "cross block ({}, {}) has nonzero diagonal at slot {kk}",
                    cross.j, cross.j2
                )));
            }
        }
        for r in 0..k {
            for c in 0..k {
                let v = cross.a[r * k + c];
                q[(cross.j * k + r, cross.j2 * k + c)] = v;
                q[(cross.j2 * k + c, cross.j * k + r)] = v;
            }
        }
    }
    Ok(q)
}

/// Outcome of a positive-definiteness repair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PdRepair {
    pub fired: bool,
    pub original_min_eig: f64,
    /// diagonal shift applied: -min_eig + epsilon when fired, else 0
    pub shift: f64,
    /// repair trigger threshold; strictly positive, a deviation from the
    /// plain "negative eigenvalue" rule, recorded for downstream consumers
    pub trigger_delta: f64,
}

/// Shift the diagonal so the minimum eigenvalue is at least `epsilon`.
/// The input is returned untouched when its minimum eigenvalue already
/// clears the trigger threshold.
pub fn repair_pd(q: &DMatrix<f64>, epsilon: f64) -> Result<(DMatrix<f64>, PdRepair)> {
    if !(epsilon > 0.0) {
        return Err(MooError::InvalidInput(format!("epsilon = {epsilon} must be > 0")));
    }
    let n = q.nrows();
    if q.ncols() != n {
        return Err(MooError::DimensionMismatch(format!("{}x{}", q.nrows(), q.ncols())));
    }
    let asym = (q - q.transpose()).amax();
    if asym > 1e-12 * (1.0 + q.amax()) {
        return Err(MooError::InvalidInput(format!("matrix is not symmetric ({asym:.3e})")));
    }
    let min_eig = eig_min_symmetric(q)?;
    if min_eig >= PD_TRIGGER_DELTA {
        return Ok((
            q.clone(),
            PdRepair { fired: false, original_min_eig: min_eig, shift: 0.0, trigger_delta: PD_TRIGGER_DELTA },
        ));
    }
    let shift = -min_eig + epsilon;
    let mut out = q.clone();
    for t in 0..n {
        out[(t, t)] += shift;
    }
    Ok((
        out,
        PdRepair { fired: true, original_min_eig: min_eig, shift, trigger_delta: PD_TRIGGER_DELTA },
    ))
}

/// Block-diagonal interaction model over users, repaired to positive
/// definite blocks.
#[derive(Debug, Clone)]
pub struct InteractionModel {
    pub n_items: usize,
    pub n_slots: usize,
    pub epsilon: f64,
    /// one repaired block per user
    pub blocks: Vec<DMatrix<f64>>,
    pub repairs: Vec<PdRepair>,
}

impl InteractionModel {
    /// Repair each user's block; blocks are processed in parallel.
    pub fn from_blocks(
        n_items: usize,
        n_slots: usize,
        raw: Vec<DMatrix<f64>>,
        epsilon: f64,
    ) -> Result<Self> {
        let repaired: Vec<(DMatrix<f64>, PdRepair)> = raw
            .into_par_iter()
            .map(|b| repair_pd(&b, epsilon))
            .collect::<Result<Vec<_>>>()?;
        let (blocks, repairs): (Vec<_>, Vec<_>) = repaired.into_iter().unzip();
        Ok(InteractionModel { n_items, n_slots, epsilon, blocks, repairs })
    }

    pub fn n_users(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.n_users() * self.n_items * self.n_slots
    }

    /// out = Diag(blocks) * x
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let jk = self.n_items * self.n_slots;
        assert_eq!(x.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        for (i, block) in self.blocks.iter().enumerate() {
            let xi = &x[i * jk..(i + 1) * jk];
            let oi = &mut out[i * jk..(i + 1) * jk];
            for r in 0..jk {
                let mut acc = 0.0;
                for c in 0..jk {
                    acc += block[(r, c)] * xi[c];
                }
                oi[r] = acc;
            }
        }
    }

    /// Dense Diag(blocks), for desk-size instances.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let jk = self.n_items * self.n_slots;
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for (i, block) in self.blocks.iter().enumerate() {
            m.view_mut((i * jk, i * jk), (jk, jk)).copy_from(block);
        }
        m
    }

    pub fn min_block_eig(&self) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for b in &self.blocks {
            lo = lo.min(eig_min_symmetric(b)?);
        }
        Ok(lo)
    }
}

/// Symmetric positive definite matrix, dense or diagonal. The diagonal
/// variant keeps very large structured instances cheap.
#[derive(Debug, Clone, PartialEq)]
pub enum SymPd {
    Dense(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl SymPd {
    pub fn dim(&self) -> usize {
        match self {
            SymPd::Dense(m) => m.nrows(),
            SymPd::Diagonal(d) => d.len(),
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            SymPd::Dense(m) => {
                let n = m.nrows();
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += m[(r, c)] * x[c];
                    }
                    out[r] = acc;
                }
            }
            SymPd::Diagonal(d) => {
                for t in 0..d.len() {
                    out[t] = d[t] * x[t];
                }
            }
        }
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        match self {
            SymPd::Dense(m) => {
                let n = m.nrows();
                let mut acc = 0.0;
                for r in 0..n {
                    let mut row = 0.0;
                    for c in 0..n {
                        row += m[(r, c)] * x[c];
                    }
                    acc += x[r] * row;
                }
                acc
            }
            SymPd::Diagonal(d) => x.iter().zip(d.iter()).map(|(v, dd)| dd * v * v).sum(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymPd::Dense(m) => m.clone(),
            SymPd::Diagonal(d) => DMatrix::from_diagonal(d),
        }
    }
}

/// The quadratic-constraint set {x : (x - b)^T B (x - b) <= b_tilde} with
/// cached square-root factors for the boundary maps.
#[derive(Debug, Clone)]
pub struct EllipsoidConstraint {
    mat: SymPd,
    pub center: DVector<f64>,
    pub radius_sq: f64,
    /// eigenvalue range of B
    pub eig_min: f64,
    pub eig_max: f64,
    sqrt: Option<Box<crate::linalg::SymSqrt>>,
}

impl EllipsoidConstraint {
    pub fn new(mat: SymPd, center: DVector<f64>, radius_sq: f64) -> Result<Self> {
        if center.len() != mat.dim() {
            return Err(MooError::DimensionMismatch(format!(
                "center has {} entries, matrix dimension is {}",
                center.len(),
                mat.dim()
            )));
        }
        if !(radius_sq > 0.0) {
            return Err(MooError::EmptyConstraintSet(radius_sq));
        }
        let (eig_min, eig_max, sqrt) = match &mat {
            SymPd::Dense(m) => {
                let f = sym_sqrt_factors(m, CONDITION_CAP)?;
                (f.eig_min, f.eig_max, Some(Box::new(f)))
            }
            SymPd::Diagonal(d) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &v in d.iter() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if lo <= 0.0 {
                    return Err(MooError::NotPositiveDefinite(format!(
                        "diagonal entry {lo:.3e}"
                    )));
                }
                if hi / lo > CONDITION_CAP {
                    return Err(MooError::IllConditioned { cond: hi / lo, cap: CONDITION_CAP });
                }
                (lo, hi, None)
            }
        };
        Ok(EllipsoidConstraint { mat, center, radius_sq, eig_min, eig_max, sqrt })
    }

    pub fn unit_ball(dim: usize, radius_sq: f64) -> Result<Self> {
        EllipsoidConstraint::new(
            SymPd::Diagonal(DVector::from_element(dim, 1.0)),
            DVector::zeros(dim),
            radius_sq,
        )
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn matrix(&self) -> &SymPd {
        &self.mat
    }

    /// (x - b)^T B (x - b)
    pub fn quad(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(self.center.iter()).map(|(a, b)| a - b).collect();
        self.mat.quad_form(&diff)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.quad(x) <= self.radius_sq * (1.0 + tol) + tol
    }

    /// Relative boundary residual |quad(x) - b_tilde| / b_tilde.
    pub fn boundary_residual(&self, x: &[f64]) -> f64 {
        (self.quad(x) - self.radius_sq).abs() / self.radius_sq
    }

    /// Tangent normal direction at x: B (x - b).
    pub fn normal(&self, x: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = x.iter().zip(self.center.iter()).map(|(a, b)| a - b).collect();
        let mut out = vec![0.0; diff.len()];
        self.mat.apply(&diff, &mut out);
        out
    }

    /// sqrt(b_tilde) B^{-1/2} u + b
    pub fn from_unit_sphere(&self, u: &[f64]) -> Vec<f64> {
        let s = self.radius_sq.sqrt();
        match (&self.mat, &self.sqrt) {
            (SymPd::Diagonal(d), _) => (0..u.len())
                .map(|t| s * u[t] / d[t].sqrt() + self.center[t])
                .collect(),
            (SymPd::Dense(_), Some(f)) => {
                let uv = DVector::from_column_slice(u);
                let out = &f.inv_sqrt * uv * s + &self.center;
                out.iter().cloned().collect()
            }
            _ => unreachable!("dense ellipsoid always has factors"),
        }
    }

    /// Inverse boundary map: B^{1/2} (x - b) / sqrt(b_tilde).
    pub fn to_unit_sphere(&self, x: &[f64]) -> Vec<f64> {
        let s = 1.0 / self.radius_sq.sqrt();
        match (&self.mat, &self.sqrt) {
            (SymPd::Diagonal(d), _) => (0..x.len())
                .map(|t| (x[t] - self.center[t]) * d[t].sqrt() * s)
                .collect(),
            (SymPd::Dense(_), Some(f)) => {
                let diff = DVector::from_iterator(
                    x.len(),
                    x.iter().zip(self.center.iter()).map(|(a, b)| a - b),
                );
                let out = &f.sqrt * diff * s;
                out.iter().cloned().collect()
            }
            _ => unreachable!(),
        }
    }
}

/// Assemble the interaction-aware QCQP: minimize x^T (Q_p + gamma/2 I) x
/// subject to x^T Q_r x <= threshold and the per-user slate constraints
/// K x <= b, with the uniform slate as the feasible hint.
pub fn build_qcqp(
    q_p: &InteractionModel,
    q_r: &InteractionModel,
    gamma: f64,
    threshold: f64,
) -> Result<crate::qcqp::QcqpInstance> {
    if q_p.n_users() != q_r.n_users()
        || q_p.n_items != q_r.n_items
        || q_p.n_slots != q_r.n_slots
    {
        return Err(MooError::DimensionMismatch("Q_p and Q_r models disagree".into()));
    }
    if !(gamma > 0.0) {
        return Err(MooError::InvalidInput(format!("gamma = {gamma} must be > 0")));
    }
    let dim = q_p.dim();
    let mut objective = q_p.to_dense();
    for t in 0..dim {
        objective[(t, t)] += 0.5 * gamma;
    }
    let ellipsoid = EllipsoidConstraint::new(
        SymPd::Dense(q_r.to_dense()),
        DVector::zeros(dim),
        threshold,
    )?;
    // stacked local polytopes as sparse rows
    let poly = crate::problem::build_local_polytope(q_p.n_items, q_p.n_slots)?;
    let local = poly.matrix();
    let local_b = poly.rhs();
    let jk = poly.dim();
    let n = q_p.n_users();
    let mut coo = crate::sparse::Coo::new(n * local.rows, dim);
    let mut rhs = Vec::with_capacity(n * local.rows);
    for i in 0..n {
        for r in 0..local.rows {
            let (idx, val) = local.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                coo.push(i * local.rows + r, i * jk + c, v);
            }
        }
        rhs.extend_from_slice(&local_b);
    }
    let lin = crate::qcqp::LinearRows { mat: coo.to_csr(), rhs };
    let uniform: Vec<f64> = std::iter::repeat(1.0 / q_p.n_items as f64).take(dim).collect();
    crate::qcqp::QcqpInstance::new(
        SymPd::Dense(objective),
        DVector::zeros(dim),
        ellipsoid,
        Some(lin),
        None,
        Some(uniform),
    )
}

/// Rewrite a linear threshold x^T r <= P with r = Q_r x - 2 Q_r c_r into the
/// ellipsoid (x - c_r)^T Q_r (x - c_r) <= P + c_r^T Q_r c_r.
pub fn to_ellipsoid_constraint(
    q_r: SymPd,
    threshold: f64,
    c_r: &[f64],
) -> Result<EllipsoidConstraint> {
    let dim = q_r.dim();
    if c_r.len() != dim {
        return Err(MooError::DimensionMismatch(format!(
            "center has {} entries, matrix dimension is {dim}",
            c_r.len()
        )));
    }
    let radius_sq = threshold + q_r.quad_form(c_r);
    if radius_sq <= 0.0 {
        return Err(MooError::EmptyConstraintSet(radius_sq));
    }
    EllipsoidConstraint::new(q_r, DVector::from_column_slice(c_r), radius_sq)
}

/// Reformulate the dependent case r = f(p) with p = -Q_p x for
/// f(v) = -alpha v + shift (the sign flip models a cost moving against the
/// reward): Q_r = alpha Q_p, c_r = -Q_r^{-1} shift / 2.
pub fn dependent_constraint_ellipsoid(
    q_p: &DMatrix<f64>,
    alpha: f64,
    shift: &[f64],
    threshold: f64,
) -> Result<EllipsoidConstraint> {
    if !(alpha > 0.0) {
        return Err(MooError::InvalidInput(format!("alpha = {alpha} must be > 0")));
    }
    let q_r = q_p * alpha;
    let s = DVector::from_column_slice(shift);
    let c_r = q_r
        .clone()
        .cholesky()
        .ok_or_else(|| MooError::NotPositiveDefinite("Q_r in dependent reformulation".into()))?
        .solve(&(-&s * 0.5));
    to_ellipsoid_constraint(SymPd::Dense(q_r), threshold, c_r.as_slice())
}

/// Seeded generator for interaction experiments: slot-decreasing diagonal
/// (base prior scaled by 1/(1+slot)), zero same-slot cross coefficients,
/// symmetric otherwise, truncated to `dim` when it is not a multiple of the
/// slot count.
pub fn synthetic_interaction_matrix(dim: usize, n_slots: usize, seed: u64, a_max: f64) -> DMatrix<f64> {
    use rand::{Rng, SeedableRng};
    let k = n_slots.max(1);
    let j = dim.div_ceil(k);
    let jk = j * k;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let p_tilde: Vec<f64> = (0..j).map(|_| rng.gen_range(0.3..1.0)).collect();
    let mut q = DMatrix::zeros(jk, jk);
    for jj in 0..j {
        for kk in 0..k {
            q[(jj * k + kk, jj * k + kk)] = p_tilde[jj] / (1.0 + kk as f64);
        }
    }
    for jj in 0..j {
        for j2 in jj + 1..j {
            for r in 0..k {
                for c in 0..k {
                    if r == c {
                        continue;
                    }
                    // couplings can be synergistic or antagonistic
                    let v = if a_max > 0.0 { rng.gen_range(-a_max..a_max) } else { 0.0 };
                    q[(jj * k + r, j2 * k + c)] = v;
                    q[(j2 * k + c, jj * k + r)] = v;
                }
            }
        }
    }
    q.view((0, 0), (dim, dim)).into_owned()
}
