//! Primal recovery from dual multipliers and deterministic serving plans.
//!
//! The optimal serving probabilities come back per user as the projection of
//! (mu0 $ + mu1 d + p)/gamma onto the local polytope; plans are sampled slot
//! by slot from the recovered multinomials, resampling on repeats.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::asqp::{solve_as_qp, DenseQp, KktInfo};
use crate::dual::DualSolution;
use crate::error::{MooError, Result};
use crate::problem::{build_local_polytope, LocalPolytope, RankingProblem};

/// Per-(user, item, slot) serving probabilities in the fixed flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ServingDistribution {
    pub n_users: usize,
    pub n_items: usize,
    pub n_slots: usize,
    pub x: Vec<f64>,
}

impl ServingDistribution {
    pub fn new(n_users: usize, n_items: usize, n_slots: usize, x: Vec<f64>) -> Result<Self> {
        let dist = ServingDistribution { n_users, n_items, n_slots, x };
        dist.validate(1e-6)?;
        Ok(dist)
    }

    /// Skip validation; used by tests that exercise degenerate inputs.
    pub fn new_unchecked(n_users: usize, n_items: usize, n_slots: usize, x: Vec<f64>) -> Self {
        ServingDistribution { n_users, n_items, n_slots, x }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let (n, j, k) = (self.n_users, self.n_items, self.n_slots);
        if self.x.len() != n * j * k {
            return Err(MooError::DimensionMismatch(format!(
                "x has {} entries, expected {}",
                self.x.len(),
                n * j * k
            )));
        }
        for &v in &self.x {
            if !(-tol..=1.0 + tol).contains(&v) {
                return Err(MooError::InvalidInput(format!("probability {v} out of [0,1]")));
            }
        }
        for i in 0..n {
            for kk in 0..k {
                let sum: f64 = (0..j).map(|jj| self.x[(i * j + jj) * k + kk]).sum();
                if (sum - 1.0).abs() > tol {
                    return Err(MooError::InvalidInput(format!(
                        "slot sum {sum} at user {i}, slot {kk} deviates from 1"
                    )));
                }
            }
            for jj in 0..j {
                let sum: f64 = (0..k).map(|kk| self.x[(i * j + jj) * k + kk]).sum();
                if sum > 1.0 + tol {
                    return Err(MooError::InvalidInput(format!(
                        "item sum {sum} at user {i}, item {jj} exceeds 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn slot_probabilities(&self, user: usize, slot: usize) -> Vec<f64> {
        (0..self.n_items)
            .map(|jj| self.x[(user * self.n_items + jj) * self.n_slots + slot])
            .collect()
    }
}

/// One slate per user: K distinct item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ServingPlan {
    pub n_users: usize,
    pub n_slots: usize,
    /// row-major n x K item indices
    pub slots: Vec<u32>,
    /// count of slots that fell back to renormalized sampling after the
    /// resample cap was hit
    pub fallback_slots: usize,
}

impl ServingPlan {
    pub fn row(&self, user: usize) -> &[u32] {
        &self.slots[user * self.n_slots..(user + 1) * self.n_slots]
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionOutcome {
    pub x: Vec<f64>,
    pub kkt: KktInfo,
}

/// Euclidean projection onto the local polytope, solved as a small
/// least-distance program with the slot sums as equalities. The KKT
/// certificate of the active-set solve is passed through.
pub fn project_local(point: &[f64], poly: &LocalPolytope) -> Result<ProjectionOutcome> {
    let (j, k) = (poly.n_items, poly.n_slots);
    let jk = j * k;
    if point.len() != jk {
        return Err(MooError::DimensionMismatch(format!(
            "point has {} entries, polytope dimension is {jk}",
            point.len()
        )));
    }
    let mut a_eq = DMatrix::zeros(k, jk);
    for kk in 0..k {
        for jj in 0..j {
            a_eq[(kk, jj * k + kk)] = 1.0;
        }
    }
    let b_eq = DVector::from_element(k, 1.0);

    let m_in = 2 * jk + j;
    let mut a_in = DMatrix::zeros(m_in, jk);
    let mut b_in = DVector::zeros(m_in);
    for t in 0..jk {
        a_in[(t, t)] = 1.0;
        b_in[t] = 1.0;
        a_in[(jk + t, t)] = -1.0;
    }
    for jj in 0..j {
        for kk in 0..k {
            a_in[(2 * jk + jj, jj * k + kk)] = 1.0;
        }
        b_in[2 * jk + jj] = 1.0;
    }
    let qp = DenseQp {
        p: DMatrix::identity(jk, jk),
        q: DVector::from_iterator(jk, point.iter().map(|v| -v)),
        a_eq,
        b_eq,
        a_in,
        b_in,
    };
    let x0 = DVector::from_column_slice(&poly.uniform_point());
    let sol = solve_as_qp(&qp, &x0, 1e-10, 0)?;
    if sol.kkt.max_residual() > 1e-9 {
        return Err(MooError::NotConverged {
            iterations: sol.iterations,
            residual: sol.kkt.max_residual(),
        });
    }
    Ok(ProjectionOutcome { x: sol.x.iter().cloned().collect(), kkt: sol.kkt })
}

/// Recover the optimal primal from dual multipliers: per user,
/// x_i = proj((mu0 $ + mu1 d + p)_i / gamma). Projections run in parallel
/// over users into disjoint slices, so the result is bitwise deterministic.
pub fn recover_primal(
    dual: &DualSolution,
    problem: &RankingProblem,
    allow_unconverged: bool,
) -> Result<ServingDistribution> {
    if !dual.converged && !allow_unconverged {
        return Err(MooError::NotConverged {
            iterations: dual.iterations,
            residual: dual.primal_residual,
        });
    }
    let (n, j, k) = (problem.n_users, problem.n_items, problem.n_slots);
    let jk = j * k;
    let poly = build_local_polytope(j, k)?;
    let dollar = problem.dollar();
    let inv_gamma = 1.0 / problem.gamma;
    let target: Vec<f64> = (0..problem.dim())
        .map(|t| (dual.mu0 * dollar[t] + dual.mu1 * problem.d[t] + problem.p[t]) * inv_gamma)
        .collect();

    let mut x = vec![0.0f64; n * jk];
    x.par_chunks_mut(jk)
        .enumerate()
        .try_for_each(|(i, out)| -> Result<()> {
            let proj = project_local(&target[i * jk..(i + 1) * jk], &poly)?;
            out.copy_from_slice(&proj.x);
            Ok(())
        })?;
    ServingDistribution::new(n, j, k, x)
}

const RESAMPLE_CAP: usize = 100;

/// Sample one item from the multinomial given by `weights` (renormalized).
fn sample_multinomial(weights: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    weights.len() - 1
}

/// Draw a deterministic serving plan: slots are sampled in order from the
/// per-slot multinomials, resampling when an item repeats. After
/// `RESAMPLE_CAP` repeats the slot falls back to renormalized sampling over
/// unused items (flagged in the output). Per-user streams are derived from
/// (seed, user), so the plan is independent of scheduling.
pub fn serving_plan(dist: &ServingDistribution, seed: u64) -> Result<ServingPlan> {
    let (n, j, k) = (dist.n_users, dist.n_items, dist.n_slots);
    if k > j {
        return Err(MooError::InvalidInput(format!("K = {k} exceeds J = {j}")));
    }
    let mut slots = vec![0u32; n * k];
    let mut fallback_slots = 0usize;
    for i in 0..n {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let mut used = vec![false; j];
        for kk in 0..k {
            let weights = dist.slot_probabilities(i, kk);
            let mut chosen: Option<usize> = None;
            for _ in 0..RESAMPLE_CAP {
                let cand = sample_multinomial(&weights, &mut rng);
                if !used[cand] {
                    chosen = Some(cand);
                    break;
                }
            }
            let item = match chosen {
                Some(c) => c,
                None => {
                    // renormalize over unused items
                    fallback_slots += 1;
                    let masked: Vec<f64> = weights
                        .iter()
                        .enumerate()
                        .map(|(jj, w)| if used[jj] { 0.0 } else { w.max(0.0) })
                        .collect();
                    let total: f64 = masked.iter().sum();
                    if total > 0.0 {
                        sample_multinomial(&masked, &mut rng)
                    } else {
                        // all remaining mass on used items: take the first unused
                        used.iter().position(|u| !u).expect("K <= J leaves an unused item")
                    }
                }
            };
            used[item] = true;
            slots[i * k + kk] = item as u32;
        }
    }
    Ok(ServingPlan { n_users: n, n_slots: k, slots, fallback_slots })
}
