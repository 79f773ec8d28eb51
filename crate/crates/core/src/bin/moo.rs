//! `moo`: build/validate ranking problems, solve their duals, recover
//! serving plans, work with interaction models and ellipsoids, sample
//! boundary point sets, solve QCQPs by tangent-plane linearization, and run
//! the benchmark suite.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use moo_core::dual::{solve_dual, DualSolveOptions};
use moo_core::interaction::{assemble_block, InteractionBlock, InteractionModel};
use moo_core::io;
use moo_core::lowdisc::{
    default_n_points, generate_boundary_points_with, riesz_energy, SpaceTag,
};
use moo_core::nonneg::SplitMethod;
use moo_core::oracle::exact_qcqp;
use moo_core::primal::{recover_primal, serving_plan};
use moo_core::problem::assemble_stacked;
use moo_core::qcqp::{
    certificate_checks, linearize, refine, sampler_from_name, solve_qp, CertificateBundle,
    LinearizeOptions, QpSolveOptions, SolveReport,
};
use moo_core::sparse::sparsity_ratio;

#[derive(Parser)]
#[command(name = "moo", about = "Constrained multi-slot ranking optimizer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a problem file; print dimensions and the dual sparsity ratio
    Build {
        #[arg(long = "in")]
        input: PathBuf,
        /// assemble the stacked system and verify/count the dual matrix
        #[arg(long)]
        check: bool,
    },
    /// Solve the dual of the ranking QP
    Dual {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        max_iter: usize,
        /// pg (projected gradient) or split (over-relaxed splitting)
        #[arg(long, default_value = "pg")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the primal distribution and emit a serving plan CSV
    Serve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        dual: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        plan: PathBuf,
        /// proceed even when the stored dual is flagged non-converged
        #[arg(long)]
        allow_unconverged: bool,
    },
    /// Assemble per-user interaction blocks and check/repair definiteness
    Interact {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        check_pd: bool,
        #[arg(long, default_value_t = 2.0)]
        epsilon: f64,
    },
    /// Sample boundary points on an ellipsoid
    Points {
        #[arg(long)]
        ellipsoid: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "net")]
        sampler: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Riesz energy of a point CSV
    Energy {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        exp: f64,
    },
    /// Solve a QCQP by tangent-plane linearization
    Qcqp {
        #[arg(long = "in")]
        input: PathBuf,
        /// tangent-point budget; defaults to max(1024, 2^m >= 10 dim)
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "net")]
        sampler: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// auto: compare against the exact oracle when dim <= 100; off
        #[arg(long, default_value = "auto")]
        oracle: String,
        /// comma-separated refinement schedule (powers of two)
        #[arg(long)]
        schedule: Option<String>,
        /// accept fewer than dim + 1 tangent rows
        #[arg(long)]
        allow_unbounded_cover: bool,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the benchmark suite from a config file
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(serde::Serialize)]
struct QcqpReportFile {
    report: SolveReport,
    oracle_objective: Option<f64>,
    oracle_x: Option<Vec<f64>>,
    oracle_kkt_residual: Option<f64>,
    certificates: Option<CertificateBundle>,
}

fn parse_method(name: &str) -> moo_core::Result<SplitMethod> {
    match name {
        "pg" => Ok(SplitMethod::ProjectedGradient),
        "split" => Ok(SplitMethod::OperatorSplitting { rho: 1.0, relax: 1.7 }),
        other => Err(moo_core::MooError::InvalidInput(format!("unknown method '{other}'"))),
    }
}

fn run() -> moo_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Build { input, check } => {
            let problem = io::load_problem(&input)?;
            println!(
                "problem: n={} J={} K={} dim={} gamma={}",
                problem.n_users,
                problem.n_items,
                problem.n_slots,
                problem.dim(),
                problem.gamma
            );
            if check {
                let sys = assemble_stacked(&problem)?;
                let m = sys.m_matrix();
                let psi = sparsity_ratio(&m)?;
                println!(
                    "dual dimension: {} (A is {}x{}, {} nonzeros)",
                    sys.dim_y(),
                    sys.a.rows,
                    sys.a.cols,
                    sys.a.nnz()
                );
                println!("psi(M) = {psi} ({} nonzeros)", m.nnz());
            }
            Ok(())
        }
        Command::Dual { input, tol, max_iter, method, out } => {
            let problem = io::load_problem(&input)?;
            let sys = assemble_stacked(&problem)?;
            let opts = DualSolveOptions {
                tol,
                max_iter,
                method: parse_method(&method)?,
                keep_trace: false,
            };
            let start = Instant::now();
            let sol = solve_dual(&sys, &problem.p, &opts)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            println!(
                "mu0={} mu1={} iterations={} residual={:.3e} converged={}",
                sol.mu0, sol.mu1, sol.iterations, sol.primal_residual, sol.converged
            );
            io::save_dual(&io::DualFile::from_solution(&sol, wall_ms), &out)?;
            Ok(())
        }
        Command::Serve { input, dual, seed, plan, allow_unconverged } => {
            let problem = io::load_problem(&input)?;
            let dual_file = io::load_dual(&dual)?;
            let dist = recover_primal(&dual_file.to_solution(), &problem, allow_unconverged)?;
            let plan_out = serving_plan(&dist, seed)?;
            use std::io::Write;
            let mut f = std::fs::File::create(&plan)?;
            writeln!(f, "user,slot,item")?;
            for user in 0..plan_out.n_users {
                for (slot, item) in plan_out.row(user).iter().enumerate() {
                    writeln!(f, "{user},{slot},{item}")?;
                }
            }
            if plan_out.fallback_slots > 0 {
                eprintln!(
                    "warning: {} slots fell back to renormalized sampling",
                    plan_out.fallback_slots
                );
            }
            println!("plan written to {}", plan.display());
            Ok(())
        }
        Command::Interact { input, model, check_pd, epsilon } => {
            let problem = io::load_problem(&input)?;
            let text = std::fs::read_to_string(&model)?;
            let block: InteractionBlock = serde_json::from_str(&text)?;
            if block.n_items != problem.n_items || block.n_slots != problem.n_slots {
                return Err(moo_core::MooError::DimensionMismatch(format!(
                    "model is {}x{} (items x slots), problem is {}x{}",
                    block.n_items, block.n_slots, problem.n_items, problem.n_slots
                )));
            }
            let raw = assemble_block(&block)?;
            let blocks = vec![raw; problem.n_users];
            let model = InteractionModel::from_blocks(
                problem.n_items,
                problem.n_slots,
                blocks,
                epsilon,
            )?;
            let fired = model.repairs.iter().filter(|r| r.fired).count();
            println!(
                "assembled {} blocks of size {}; repairs fired: {fired}",
                model.n_users(),
                problem.n_items * problem.n_slots
            );
            if check_pd {
                let min_eig = model.min_block_eig()?;
                println!("min block eigenvalue: {min_eig:.6e}");
                if min_eig <= 0.0 {
                    return Err(moo_core::MooError::NotPositiveDefinite(format!(
                        "min eigenvalue {min_eig:.3e} after repair"
                    )));
                }
            }
            Ok(())
        }
        Command::Points { ellipsoid, n, sampler, seed, out } => {
            let e = io::load_ellipsoid(&ellipsoid)?;
            let s = sampler_from_name(&sampler, seed)?;
            let pts = generate_boundary_points_with(&e, n, s)?;
            io::save_points(&pts, &out)?;
            println!("{} points on the boundary written to {}", pts.n, out.display());
            Ok(())
        }
        Command::Energy { input, exp } => {
            let pts = io::load_points(&input, SpaceTag::EllipsoidBoundary)?;
            let e = riesz_energy(&pts, exp)?;
            println!("{e}");
            Ok(())
        }
        Command::Qcqp {
            input,
            n,
            sampler,
            seed,
            oracle,
            schedule,
            allow_unbounded_cover,
            tol,
            out,
        } => {
            let inst = io::load_qcqp(&input)?;
            let n = n.unwrap_or_else(|| default_n_points(inst.dim()));
            let oracle_sol = match oracle.as_str() {
                "auto" if inst.dim() <= 100 => Some(exact_qcqp(&inst)?),
                "auto" | "off" => None,
                other => {
                    return Err(moo_core::MooError::InvalidInput(format!(
                        "unknown oracle mode '{other}'"
                    )))
                }
            };
            let qp_opts = QpSolveOptions { tol, ..Default::default() };
            let report = match schedule {
                Some(text) => {
                    let steps: Vec<usize> = text
                        .split(',')
                        .map(|t| {
                            t.trim().parse::<usize>().map_err(|e| {
                                moo_core::MooError::InvalidInput(format!("bad schedule: {e}"))
                            })
                        })
                        .collect::<moo_core::Result<_>>()?;
                    refine(&inst, &steps, &qp_opts, oracle_sol.as_ref().map(|o| o.x.as_slice()))?
                }
                None => {
                    let lin_opts = LinearizeOptions {
                        sampler: sampler_from_name(&sampler, seed)?,
                        allow_unbounded_cover,
                        ..Default::default()
                    };
                    let lin = linearize(&inst, n, &lin_opts)?;
                    solve_qp(&inst, &lin, &qp_opts)?
                }
            };
            println!(
                "objective={} n_points={} in_S={} converged={}",
                report.objective, report.n_points, report.in_s, report.converged
            );
            let certificates = oracle_sol
                .as_ref()
                .map(|o| certificate_checks(&report, &o.x, o.objective, &inst));
            if let Some(o) = &oracle_sol {
                println!("oracle objective={} gap={}", o.objective, o.objective - report.objective);
            }
            let file = QcqpReportFile {
                report,
                oracle_objective: oracle_sol.as_ref().map(|o| o.objective),
                oracle_x: oracle_sol.as_ref().map(|o| o.x.clone()),
                oracle_kkt_residual: oracle_sol.as_ref().map(|o| o.max_kkt_residual()),
                certificates,
            };
            std::fs::write(&out, serde_json::to_string_pretty(&file)?)?;
            Ok(())
        }
        Command::Bench { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg: moo_core::bench::SuiteConfig = serde_json::from_str(&text)?;
            let output = moo_core::bench::run_suite(&cfg, &out)?;
            println!(
                "{} result rows -> {}",
                output.rows.len(),
                output.results_path.display()
            );
            println!("summary -> {}", output.summary_path.display());
            for t in &output.trace_paths {
                println!("trace -> {}", t.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
