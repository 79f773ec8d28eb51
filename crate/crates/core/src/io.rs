//! On-disk schemas shared by the CLI and the FFI layer: problems, duals,
//! interaction models, ellipsoids, QCQP instances, point sets, reports.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dual::DualSolution;
use crate::error::{MooError, Result};
use crate::interaction::{EllipsoidConstraint, SymPd};
use crate::lowdisc::{PointSet, Provenance, SpaceTag};
use crate::problem::{build_problem, ProblemFile, RankingProblem};
use crate::qcqp::{LinearEqs, LinearRows, QcqpInstance};

pub fn load_problem(path: &Path) -> Result<RankingProblem> {
    let text = std::fs::read_to_string(path)?;
    let file: ProblemFile = serde_json::from_str(&text)?;
    build_problem(&file)
}

pub fn save_problem(problem: &RankingProblem, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&problem.to_file())?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Dual solve summary written by `moo dual` and consumed by `moo serve`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualFile {
    pub mu0: f64,
    pub mu1: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub converged: bool,
    pub wall_ms: f64,
    pub dim: usize,
}

impl DualFile {
    pub fn from_solution(sol: &DualSolution, wall_ms: f64) -> Self {
        DualFile {
            mu0: sol.mu0,
            mu1: sol.mu1,
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            objective: sol.objective,
            converged: sol.converged,
            wall_ms,
            dim: 2 + sol.eta.len(),
        }
    }

    /// Rebuild a solution carrier for primal recovery (eta is not persisted;
    /// recovery only needs the two global multipliers).
    pub fn to_solution(&self) -> DualSolution {
        DualSolution {
            mu0: self.mu0,
            mu1: self.mu1,
            eta: Vec::new(),
            iterations: self.iterations,
            primal_residual: self.primal_residual,
            dual_residual: self.dual_residual,
            objective: self.objective,
            converged: self.converged,
            objective_trace: Vec::new(),
        }
    }
}

pub fn load_dual(path: &Path) -> Result<DualFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn save_dual(dual: &DualFile, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(dual)?)?;
    Ok(())
}

/// Dense or diagonal symmetric matrix in files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Dense(Vec<Vec<f64>>),
    Diagonal { diag: Vec<f64> },
}

impl MatrixSpec {
    pub fn to_sym_pd(&self) -> Result<SymPd> {
        match self {
            MatrixSpec::Dense(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(MooError::DimensionMismatch("matrix is not square".into()));
                }
                let mut m = DMatrix::zeros(n, n);
                for (r, row) in rows.iter().enumerate() {
                    for (c, &v) in row.iter().enumerate() {
                        m[(r, c)] = v;
                    }
                }
                Ok(SymPd::Dense(m))
            }
            MatrixSpec::Diagonal { diag } => {
                Ok(SymPd::Diagonal(DVector::from_column_slice(diag)))
            }
        }
    }

    pub fn from_sym_pd(m: &SymPd) -> Self {
        match m {
            SymPd::Dense(d) => MatrixSpec::Dense(
                (0..d.nrows())
                    .map(|r| (0..d.ncols()).map(|c| d[(r, c)]).collect())
                    .collect(),
            ),
            SymPd::Diagonal(d) => MatrixSpec::Diagonal { diag: d.iter().cloned().collect() },
        }
    }
}

/// Ellipsoid file: {B, b, b_tilde}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidFile {
    #[serde(rename = "B")]
    pub b_mat: MatrixSpec,
    pub b: Vec<f64>,
    pub b_tilde: f64,
}

impl EllipsoidFile {
    pub fn to_constraint(&self) -> Result<EllipsoidConstraint> {
        EllipsoidConstraint::new(
            self.b_mat.to_sym_pd()?,
            DVector::from_column_slice(&self.b),
            self.b_tilde,
        )
    }
}

pub fn load_ellipsoid(path: &Path) -> Result<EllipsoidConstraint> {
    let file: EllipsoidFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    file.to_constraint()
}

/// QCQP instance file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QcqpFile {
    #[serde(rename = "A")]
    pub a_mat: MatrixSpec,
    pub a: Vec<f64>,
    pub ellipsoid: EllipsoidFile,
    #[serde(default, rename = "box")]
    pub box_bounds: Option<BoxSpec>,
    #[serde(default, rename = "C")]
    pub c_rows: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub eq_rows: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub eq_rhs: Option<Vec<f64>>,
    #[serde(default)]
    pub feasible: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSpec {
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QcqpFile {
    pub fn to_instance(&self) -> Result<QcqpInstance> {
        let objective = self.a_mat.to_sym_pd()?;
        let dim = objective.dim();
        let mut lin: Option<LinearRows> = None;
        if let Some(bx) = &self.box_bounds {
            if bx.l.len() != dim || bx.u.len() != dim {
                return Err(MooError::DimensionMismatch("box bounds disagree".into()));
            }
            lin = Some(LinearRows::from_box(&bx.l, &bx.u));
        }
        if let (Some(rows), Some(rhs)) = (&self.c_rows, &self.c) {
            let mut coo = crate::sparse::Coo::new(rows.len(), dim);
            for (r, row) in rows.iter().enumerate() {
                if row.len() != dim {
                    return Err(MooError::DimensionMismatch("C row width disagrees".into()));
                }
                for (c, &v) in row.iter().enumerate() {
                    coo.push(r, c, v);
                }
            }
            let extra = LinearRows { mat: coo.to_csr(), rhs: rhs.clone() };
            lin = Some(match lin {
                None => extra,
                Some(existing) => merge_rows(existing, extra),
            });
        }
        let lin_eq = match (&self.eq_rows, &self.eq_rhs) {
            (Some(rows), Some(rhs)) => {
                let m = rows.len();
                let mut mat = DMatrix::zeros(m, dim);
                for (r, row) in rows.iter().enumerate() {
                    for (c, &v) in row.iter().enumerate() {
                        mat[(r, c)] = v;
                    }
                }
                Some(LinearEqs { mat, rhs: DVector::from_column_slice(rhs) })
            }
            _ => None,
        };
        QcqpInstance::new(
            objective,
            DVector::from_column_slice(&self.a),
            self.ellipsoid.to_constraint()?,
            lin,
            lin_eq,
            self.feasible.clone(),
        )
    }
}

fn merge_rows(a: LinearRows, b: LinearRows) -> LinearRows {
    let mut coo = crate::sparse::Coo::new(a.mat.rows + b.mat.rows, a.mat.cols);
    for r in 0..a.mat.rows {
        let (idx, val) = a.mat.row(r);
        for (&c, &v) in idx.iter().zip(val) {
            coo.push(r, c, v);
        }
    }
    for r in 0..b.mat.rows {
        let (idx, val) = b.mat.row(r);
        for (&c, &v) in idx.iter().zip(val) {
            coo.push(a.mat.rows + r, c, v);
        }
    }
    let mut rhs = a.rhs;
    rhs.extend(b.rhs);
    LinearRows { mat: coo.to_csr(), rhs }
}

pub fn load_qcqp(path: &Path) -> Result<QcqpInstance> {
    let file: QcqpFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    file.to_instance()
}

/// Point CSV: one row of coordinates per point.
pub fn save_points(points: &PointSet, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for i in 0..points.n {
        let row: Vec<String> = points.point(i).iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn load_points(path: &Path, space: SpaceTag) -> Result<PointSet> {
    let text = std::fs::read_to_string(path)?;
    let mut coords = Vec::new();
    let mut dim = 0usize;
    let mut n = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| MooError::InvalidInput(format!("bad number '{tok}': {e}")))
            })
            .collect::<Result<_>>()?;
        if dim == 0 {
            dim = row.len();
        } else if row.len() != dim {
            return Err(MooError::DimensionMismatch(format!(
                "row {n} has {} coordinates, expected {dim}",
                row.len()
            )));
        }
        coords.extend(row);
        n += 1;
    }
    if n == 0 {
        return Err(MooError::InvalidInput("empty point file".into()));
    }
    Ok(PointSet { dim, n, coords, space, provenance: Provenance::Random { name: "file", seed: 0 } })
}
