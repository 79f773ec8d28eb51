//! Multi-slot ranking problem model: per-user constraint polytopes and the
//! stacked system behind the dual solver.
//!
//! Index layout is fixed everywhere as i-major, then item, then slot:
//! `flat = ((i*J) + j)*K + k`.

use serde::{Deserialize, Serialize};

use crate::error::{MooError, Result};
use crate::sparse::{Coo, Csr};

/// A validated multi-slot ranking instance.
///
/// `dollar` is precomputed as the elementwise product of click probability
/// and per-item revenue.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingProblem {
    pub n_users: usize,
    pub n_items: usize,
    pub n_slots: usize,
    /// click probability per (user, item, slot), flat layout
    pub p: Vec<f64>,
    /// revenue value per item; positive exactly on the sponsored set
    pub c: Vec<f64>,
    /// impression indicator per (user, item, slot), flat layout
    pub d: Vec<f64>,
    pub revenue_floor: f64,
    pub impression_floor: f64,
    pub gamma: f64,
    pub sponsored: Vec<usize>,
    pub impression: Vec<usize>,
    dollar: Vec<f64>,
}

/// On-disk schema for problem files (field names match the file format).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "I")]
    pub i: f64,
    pub gamma: f64,
    pub sponsored: Vec<usize>,
    pub impression: Vec<usize>,
}

impl RankingProblem {
    #[inline]
    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        ((i * self.n_items) + j) * self.n_slots + k
    }

    pub fn dim(&self) -> usize {
        self.n_users * self.n_items * self.n_slots
    }

    pub fn dollar(&self) -> &[f64] {
        &self.dollar
    }

    pub fn to_file(&self) -> ProblemFile {
        ProblemFile {
            n: self.n_users,
            j: self.n_items,
            k: self.n_slots,
            p: self.p.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
            r: self.revenue_floor,
            i: self.impression_floor,
            gamma: self.gamma,
            sponsored: self.sponsored.clone(),
            impression: self.impression.clone(),
        }
    }
}

/// Validate a problem description and precompute the dollar vector.
pub fn build_problem(file: &ProblemFile) -> Result<RankingProblem> {
    let (n, j, k) = (file.n, file.j, file.k);
    if n == 0 || j == 0 || k == 0 {
        return Err(MooError::InvalidInput("dimensions must be positive".into()));
    }
    if k > j {
        return Err(MooError::InvalidInput(format!(
            "K = {k} exceeds J = {j}: a slate without repeats cannot exist"
        )));
    }
    let dim = n * j * k;
    if file.p.len() != dim {
        return Err(MooError::DimensionMismatch(format!("p has {} entries, expected {dim}", file.p.len())));
    }
    if file.d.len() != dim {
        return Err(MooError::DimensionMismatch(format!("d has {} entries, expected {dim}", file.d.len())));
    }
    if file.c.len() != j {
        return Err(MooError::DimensionMismatch(format!("c has {} entries, expected {j}", file.c.len())));
    }
    for (t, &v) in file.p.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(MooError::InvalidInput(format!("p[{t}] = {v} out of [0,1]")));
        }
    }
    if !(file.gamma > 0.0) {
        return Err(MooError::InvalidInput(format!("gamma = {} must be > 0", file.gamma)));
    }
    let mut sponsored = file.sponsored.clone();
    let mut impression = file.impression.clone();
    sponsored.sort_unstable();
    sponsored.dedup();
    impression.sort_unstable();
    impression.dedup();
    if sponsored.iter().any(|&s| s >= j) || impression.iter().any(|&s| s >= j) {
        return Err(MooError::InvalidInput("item subset index out of range".into()));
    }
    for jj in 0..j {
        let in_sponsored = sponsored.binary_search(&jj).is_ok();
        if (file.c[jj] > 0.0) != in_sponsored {
            return Err(MooError::InvalidInput(format!(
                "c[{jj}] = {} inconsistent with sponsored set membership {in_sponsored}",
                file.c[jj]
            )));
        }
        if file.c[jj] < 0.0 {
            return Err(MooError::InvalidInput(format!("c[{jj}] = {} negative", file.c[jj])));
        }
    }
    for i in 0..n {
        for jj in 0..j {
            let in_impression = impression.binary_search(&jj).is_ok();
            for kk in 0..k {
                let t = ((i * j) + jj) * k + kk;
                let dv = file.d[t];
                if dv != 0.0 && dv != 1.0 {
                    return Err(MooError::InvalidInput(format!("d[{t}] = {dv} not in {{0,1}}")));
                }
                if (dv == 1.0) != in_impression {
                    return Err(MooError::InvalidInput(format!(
                        "d[{t}] inconsistent with impression set membership of item {jj}"
                    )));
                }
            }
        }
    }
    let mut dollar = vec![0.0f64; dim];
    for i in 0..n {
        for jj in 0..j {
            for kk in 0..k {
                let t = ((i * j) + jj) * k + kk;
                dollar[t] = file.p[t] * file.c[jj];
            }
        }
    }
    Ok(RankingProblem {
        n_users: n,
        n_items: j,
        n_slots: k,
        p: file.p.clone(),
        c: file.c.clone(),
        d: file.d.clone(),
        revenue_floor: file.r,
        impression_floor: file.i,
        gamma: file.gamma,
        sponsored,
        impression,
        dollar,
    })
}

/// Per-user local constraint polytope: box, slot sums stored as paired
/// inequalities, and item-sum caps, in the fixed row order
/// [ +I | -I | +B | -B | +C | -C ].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPolytope {
    pub n_items: usize,
    pub n_slots: usize,
}

impl LocalPolytope {
    pub fn dim(&self) -> usize {
        self.n_items * self.n_slots
    }

    /// 2JK + 2K + 2J rows.
    pub fn n_rows(&self) -> usize {
        let (j, k) = (self.n_items, self.n_slots);
        2 * j * k + 2 * k + 2 * j
    }

    /// Constraint matrix as sparse rows (entries are +-1).
    pub fn matrix(&self) -> Csr {
        let (j, k) = (self.n_items, self.n_slots);
        let jk = j * k;
        let mut coo = Coo::new(self.n_rows(), jk);
        for t in 0..jk {
            coo.push(t, t, 1.0); // x <= 1
            coo.push(jk + t, t, -1.0); // -x <= 0
        }
        let base = 2 * jk;
        for kk in 0..k {
            for jj in 0..j {
                coo.push(base + kk, jj * k + kk, 1.0); // sum_j x_{jk} <= 1
                coo.push(base + k + kk, jj * k + kk, -1.0); // -sum_j x_{jk} <= -1
            }
        }
        let base = 2 * jk + 2 * k;
        for jj in 0..j {
            for kk in 0..k {
                coo.push(base + jj, jj * k + kk, 1.0); // sum_k x_{jk} <= 1
                coo.push(base + j + jj, jj * k + kk, -1.0); // -sum_k x_{jk} <= 0
            }
        }
        coo.to_csr()
    }

    /// Right-hand side in the same row order.
    pub fn rhs(&self) -> Vec<f64> {
        let (j, k) = (self.n_items, self.n_slots);
        let jk = j * k;
        let mut b = Vec::with_capacity(self.n_rows());
        b.extend(std::iter::repeat(1.0).take(jk));
        b.extend(std::iter::repeat(0.0).take(jk));
        b.extend(std::iter::repeat(1.0).take(k));
        b.extend(std::iter::repeat(-1.0).take(k));
        b.extend(std::iter::repeat(1.0).take(j));
        b.extend(std::iter::repeat(0.0).take(j));
        b
    }

    /// Membership test K_i x <= b_i within `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        assert_eq!(x.len(), self.dim());
        let m = self.matrix();
        let b = self.rhs();
        let mut kx = vec![0.0; m.rows];
        m.mul_vec(x, &mut kx);
        kx.iter().zip(&b).all(|(lhs, rhs)| *lhs <= rhs + tol)
    }

    /// The uniform point x = 1/J, feasible whenever K <= J.
    pub fn uniform_point(&self) -> Vec<f64> {
        vec![1.0 / self.n_items as f64; self.dim()]
    }
}

/// Build the per-user polytope; errors when K > J (no repeat-free slate).
pub fn build_local_polytope(n_items: usize, n_slots: usize) -> Result<LocalPolytope> {
    if n_items == 0 || n_slots == 0 {
        return Err(MooError::InvalidInput("dimensions must be positive".into()));
    }
    if n_slots > n_items {
        return Err(MooError::InvalidInput(format!(
            "K = {n_slots} exceeds J = {n_items}"
        )));
    }
    Ok(LocalPolytope { n_items, n_slots })
}

/// Stacked data behind the dual problem: A = [$ : d : -K^T], xi = (R, I, -b),
/// and M = A^T A / gamma applied implicitly.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    /// nJK x (2 + n * local_rows)
    pub a: Csr,
    /// transpose of `a`, kept for fast products
    pub at: Csr,
    pub xi: Vec<f64>,
    pub gamma: f64,
}

impl StackedSystem {
    /// Dimension of the dual variable y = (mu0, mu1, eta).
    pub fn dim_y(&self) -> usize {
        self.a.cols
    }

    /// out = M y = A^T (A y) / gamma without forming M.
    pub fn apply_m(&self, y: &[f64], out: &mut [f64]) {
        let mut ay = vec![0.0f64; self.a.rows];
        self.a.mul_vec(y, &mut ay);
        out.iter_mut().for_each(|v| *v = 0.0);
        self.at.mul_vec(&ay, out);
        let inv_gamma = 1.0 / self.gamma;
        out.iter_mut().for_each(|v| *v *= inv_gamma);
    }

    /// Dense-count form of M for sparsity accounting and desk-size checks.
    /// Exact zeros are dropped by the sparse product.
    pub fn m_matrix(&self) -> Csr {
        self.at.mul_csr(&self.a).scale(1.0 / self.gamma)
    }

    /// Linear term of the dual objective: q = xi - A^T p / gamma.
    pub fn q_vector(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.a.rows);
        let mut atp = vec![0.0f64; self.a.cols];
        self.at.mul_vec(p, &mut atp);
        self.xi
            .iter()
            .zip(&atp)
            .map(|(xi, atp)| xi - atp / self.gamma)
            .collect()
    }
}

fn assemble_stacked_raw(
    n: usize,
    j: usize,
    k: usize,
    dollar: &[f64],
    d: &[f64],
    revenue_floor: f64,
    impression_floor: f64,
    gamma: f64,
) -> StackedSystem {
    let jk = j * k;
    let poly = LocalPolytope { n_items: j, n_slots: k };
    let local = poly.matrix();
    let local_b = poly.rhs();
    let mloc = poly.n_rows();

    let n_rows = n * jk;
    let n_cols = 2 + n * mloc;
    let mut coo = Coo::new(n_rows, n_cols);
    for t in 0..n_rows {
        coo.push(t, 0, dollar[t]);
        coo.push(t, 1, d[t]);
    }
    // -K^T columns, user by user
    for i in 0..n {
        for r in 0..mloc {
            let (idx, val) = local.row(r);
            for (&col_local, &v) in idx.iter().zip(val) {
                coo.push(i * jk + col_local, 2 + i * mloc + r, -v);
            }
        }
    }
    let a = coo.to_csr();
    let at = a.transpose();

    let mut xi = Vec::with_capacity(n_cols);
    xi.push(revenue_floor);
    xi.push(impression_floor);
    for _ in 0..n {
        xi.extend(local_b.iter().map(|b| -b));
    }
    StackedSystem { a, at, xi, gamma }
}

/// Assemble the stacked system for a validated problem.
pub fn assemble_stacked(problem: &RankingProblem) -> Result<StackedSystem> {
    Ok(assemble_stacked_raw(
        problem.n_users,
        problem.n_items,
        problem.n_slots,
        problem.dollar(),
        &problem.d,
        problem.revenue_floor,
        problem.impression_floor,
        problem.gamma,
    ))
}

/// The dual matrix M for an arbitrary (n, J, K) block structure with
/// single-item overlapping sponsored/impression sets: only the nonzero
/// pattern matters here, so K > J (no feasible slate) is allowed for the
/// sake of structure accounting.
pub fn dual_structure_matrix(n: usize, j: usize, k: usize, seed: u64) -> Csr {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let dim = n * j * k;
    let mut dollar = vec![0.0f64; dim];
    let mut d = vec![0.0f64; dim];
    let value: f64 = rng.gen_range(0.5..1.5);
    for i in 0..n {
        for kk in 0..k {
            let t = (i * j) * k + kk; // item 0 is both sponsored and impression-tracked
            dollar[t] = value * rng.gen_range(0.05..0.95);
            d[t] = 1.0;
        }
    }
    let sys = assemble_stacked_raw(n, j, k, &dollar, &d, 1.0, 1.0, 1.0);
    sys.m_matrix()
}

/// Closed-form nonzero count of the dual matrix M for the multi-slot
/// constraint structure, assuming the sponsored and impression sets overlap.
/// `beta` is |sponsored| + |impression|.
pub fn structured_nonzero_count(n: usize, j: usize, k: usize, beta: usize) -> usize {
    4 * (1 + n * (j + beta + k * (3 + beta) + 7 * j * k))
}

/// The matching closed-form sparsity ratio (the count divided by the squared
/// dual dimension 2(1 + nJ + nK + nJK)).
pub fn structured_sparsity_ratio(n: usize, j: usize, k: usize, beta: usize) -> f64 {
    let num = 1 + n * (j + beta + k * (3 + beta) + 7 * j * k);
    let den = 1 + n * j + n * k + n * j * k;
    num as f64 / (den * den) as f64
}

/// Seeded synthetic instance used by tests and the bench harness.
///
/// Click probabilities are bounded away from zero so the dollar vector has
/// full support on the sponsored items. Revenue/impression floors are set
/// from the uniform feasible point, so Slater's condition holds.
pub fn synthetic_problem(
    n: usize,
    j: usize,
    k: usize,
    seed: u64,
    overlap: bool,
) -> Result<RankingProblem> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let dim = n * j * k;
    let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.95)).collect();
    let sponsored = vec![0usize];
    let impression = if overlap || j == 1 { vec![0usize] } else { vec![1usize] };
    let mut c = vec![0.0f64; j];
    c[0] = rng.gen_range(0.5..1.5);
    let mut d = vec![0.0f64; dim];
    for i in 0..n {
        for &jj in &impression {
            for kk in 0..k {
                d[((i * j) + jj) * k + kk] = 1.0;
            }
        }
    }
    let uniform = 1.0 / j as f64;
    let rev_at_uniform: f64 = (0..dim)
        .map(|t| {
            let jj = (t / k) % j;
            uniform * p[t] * c[jj]
        })
        .sum();
    let imp_at_uniform: f64 = d.iter().map(|dv| uniform * dv).sum();
    let file = ProblemFile {
        n,
        j,
        k,
        p,
        c,
        d,
        r: rev_at_uniform * rng.gen_range(0.3..0.9),
        i: imp_at_uniform * rng.gen_range(0.3..0.9),
        gamma: 1.0,
        sponsored,
        impression,
    };
    build_problem(&file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::sparsity_ratio;

    fn small_file() -> ProblemFile {
        ProblemFile {
            n: 1,
            j: 2,
            k: 1,
            p: vec![0.5, 0.3],
            c: vec![0.0, 1.0],
            d: vec![0.0, 0.0],
            r: 0.0,
            i: 0.0,
            gamma: 1.0,
            sponsored: vec![1],
            impression: vec![],
        }
    }

    #[test]
    fn build_precomputes_dollar() {
        let p = build_problem(&small_file()).unwrap();
        assert_eq!(p.dollar(), &[0.0, 0.3]);
    }

    #[test]
    fn probability_out_of_range_rejected() {
        let mut f = small_file();
        f.p[0] = 1.2;
        assert!(matches!(build_problem(&f), Err(MooError::InvalidInput(_))));
    }

    #[test]
    fn slots_exceeding_items_rejected() {
        let mut f = small_file();
        f.k = 3;
        f.p = vec![0.5; 6];
        f.d = vec![0.0; 6];
        assert!(build_problem(&f).is_err());
    }

    #[test]
    fn sponsored_consistency_enforced() {
        let mut f = small_file();
        f.c = vec![0.5, 1.0]; // item 0 has value but is not sponsored
        assert!(build_problem(&f).is_err());
    }

    #[test]
    fn serialization_roundtrip_is_bit_exact() {
        let p = synthetic_problem(2, 3, 2, 42, true).unwrap();
        let json = serde_json::to_string(&p.to_file()).unwrap();
        let back: ProblemFile = serde_json::from_str(&json).unwrap();
        let p2 = build_problem(&back).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn polytope_j1_k1_is_the_point_one() {
        let poly = build_local_polytope(1, 1).unwrap();
        assert!(poly.contains(&[1.0], 1e-9));
        assert!(!poly.contains(&[0.9], 1e-9));
        assert!(!poly.contains(&[1.1], 1e-9));
    }

    #[test]
    fn polytope_j2_k1_is_the_simplex() {
        let poly = build_local_polytope(2, 1).unwrap();
        assert!(poly.contains(&[0.3, 0.7], 1e-9));
        assert!(poly.contains(&[1.0, 0.0], 1e-9));
        assert!(!poly.contains(&[0.5, 0.6], 1e-9)); // sums above 1
        assert!(!poly.contains(&[-0.1, 1.1], 1e-9));
    }

    #[test]
    fn polytope_row_count_and_uniform_feasibility() {
        let poly = build_local_polytope(3, 2).unwrap();
        assert_eq!(poly.n_rows(), 22); // 2*6 + 2*2 + 2*3
        assert_eq!(poly.matrix().rows, 22);
        assert!(poly.contains(&poly.uniform_point(), 1e-12));
    }

    #[test]
    fn stacked_matches_dense_product() {
        let p = synthetic_problem(1, 2, 2, 7, true).unwrap();
        let sys = assemble_stacked(&p).unwrap();
        let a = sys.a.to_dense();
        let m_dense = a.transpose() * &a / p.gamma;
        let m = sys.m_matrix().to_dense();
        assert!((m_dense - &m).norm() < 1e-12);
        // symmetry
        assert!((&m - m.transpose()).norm() < 1e-12);
    }

    #[test]
    fn gamma_scaling_halves_m() {
        let mut f = synthetic_problem(1, 2, 2, 9, true).unwrap().to_file();
        f.gamma = 1.0;
        let m1 = assemble_stacked(&build_problem(&f).unwrap()).unwrap().m_matrix();
        f.gamma = 2.0;
        let m2 = assemble_stacked(&build_problem(&f).unwrap()).unwrap().m_matrix();
        assert_eq!(m1.nnz(), m2.nnz());
        for (v1, v2) in m1.values.iter().zip(&m2.values) {
            assert!((v1 - 2.0 * v2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_column_gram_is_outer_product() {
        // A with a single column a gives M = a a^T at gamma = 1
        let mut coo = Coo::new(3, 1);
        coo.push(0, 0, 1.0);
        coo.push(1, 0, 2.0);
        coo.push(2, 0, -1.0);
        let a = coo.to_csr();
        let m = a.transpose().mul_csr(&a);
        assert_eq!(m.to_dense(), nalgebra::DMatrix::from_row_slice(1, 1, &[6.0]));
    }

    #[test]
    fn m_apply_matches_explicit_matrix() {
        let p = synthetic_problem(2, 3, 2, 11, true).unwrap();
        let sys = assemble_stacked(&p).unwrap();
        let dim = sys.dim_y();
        let y: Vec<f64> = (0..dim).map(|t| ((t * 37 + 5) % 11) as f64 / 7.0).collect();
        let mut out = vec![0.0; dim];
        sys.apply_m(&y, &mut out);
        let m = sys.m_matrix();
        let mut expect = vec![0.0; dim];
        m.mul_vec(&y, &mut expect);
        for t in 0..dim {
            assert!((out[t] - expect[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn m_is_positive_semidefinite() {
        let p = synthetic_problem(1, 3, 2, 13, true).unwrap();
        let sys = assemble_stacked(&p).unwrap();
        let m = sys.m_matrix().to_dense();
        let lmin = crate::linalg::eig_min_symmetric(&m).unwrap();
        assert!(lmin >= -1e-8, "min eigenvalue {lmin}");
    }

    #[test]
    fn counted_sparsity_matches_closed_form() {
        // n=1, J=2, K=2, |Js| = |JI| = 1 overlapping: psi = 43/81
        let p = synthetic_problem(1, 2, 2, 3, true).unwrap();
        let sys = assemble_stacked(&p).unwrap();
        let m = sys.m_matrix();
        assert_eq!(m.nnz(), structured_nonzero_count(1, 2, 2, 2));
        let psi = sparsity_ratio(&m).unwrap();
        assert!((psi - 43.0 / 81.0).abs() < 1e-15);
        assert!((psi - structured_sparsity_ratio(1, 2, 2, 2)).abs() < 1e-15);
    }

    #[test]
    fn disjoint_sets_lose_exactly_two_nonzeros() {
        let p = synthetic_problem(2, 3, 2, 5, false).unwrap();
        let sys = assemble_stacked(&p).unwrap();
        let m = sys.m_matrix();
        assert_eq!(m.nnz(), structured_nonzero_count(2, 3, 2, 2) - 2);
    }

    #[test]
    fn sparsity_scales_inverse_in_users() {
        // psi(M) * nJK stays within a factor 8 of its n=1 value as n grows
        let (j, k) = (3usize, 2usize);
        let base = structured_sparsity_ratio(1, j, k, 2) * (j * k) as f64;
        for n in [10usize, 100] {
            let v = structured_sparsity_ratio(n, j, k, 2) * (n * j * k) as f64;
            assert!(v <= 8.0 * base && v >= base / 8.0, "n={n}: {v} vs base {base}");
        }
    }
}
