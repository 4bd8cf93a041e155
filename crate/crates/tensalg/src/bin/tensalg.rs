//! Command-line front end: solve tensor problems from config files, benchmark
//! contraction plans, and run the scattered-data reconstruction demo.
//!
//! Exit codes: 0 success/converged, 1 input error, 2 non-convergence (or a
//! failed verification in `bench-contraction --execute`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tensalg::demo::{run_reconstruction, ReconParams, ReconSolve};
use tensalg::io::{
    self, build_operator, read_expression_file, read_problem_config, residual_table, SolverKind,
    ThresholdMode,
};
use tensalg::solvers::multigrid::{build_hierarchy_from_map, tmg_solve, Levels};
use tensalg::solvers::{conjugate_gradients, direct_solve, jacobi, SolveReport};
use tensalg::{
    cost_report, execute_with_stats, inner_product, left_to_right_plan, plan, DenseTensor,
    FactorSignature, IndexSpec,
};

#[derive(Parser)]
#[command(name = "tensalg", about = "Named-index tensor algebra solver toolbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the tensor problem described by a config file.
    Solve {
        config: PathBuf,
        /// Write a two-column (iteration, ⟨R,R⟩) history file.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Override the config threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Interpret the threshold relative to the initial ⟨R,R⟩.
        #[arg(long)]
        relative: bool,
    },
    /// Plan a multi-factor product and report costs against left-to-right.
    BenchContraction {
        expr_file: PathBuf,
        /// Execute both plans on seeded random data and verify agreement.
        #[arg(long)]
        execute: bool,
        #[arg(long, default_value_t = 0)]
        random_seed: u64,
    },
    /// Reconstruct a sampled synthetic field and report solver iterations.
    DemoRecon {
        #[arg(long)]
        grid: usize,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One of: direct, jacobi, cg, tmg.
        #[arg(long)]
        solver: String,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        /// Relative residual threshold.
        #[arg(long, default_value_t = 1e-8)]
        threshold: f64,
        #[arg(long, default_value_t = 2000)]
        max_iters: usize,
        /// Output directory for the reconstruction tensor and graymap.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    // Default SIGPIPE handling so piping into `head` terminates quietly
    // instead of panicking on a closed stdout.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            config,
            history,
            threshold,
            relative,
        } => cmd_solve(&config, history.as_deref(), threshold, relative),
        Command::BenchContraction {
            expr_file,
            execute,
            random_seed,
        } => cmd_bench(&expr_file, execute, random_seed),
        Command::DemoRecon {
            grid,
            samples,
            seed,
            solver,
            lambda,
            threshold,
            max_iters,
            out,
        } => cmd_demo(grid, samples, seed, &solver, lambda, threshold, max_iters, &out),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn cmd_solve(
    config_path: &std::path::Path,
    history: Option<&std::path::Path>,
    threshold_override: Option<f64>,
    relative_override: bool,
) -> Result<ExitCode, String> {
    let mut config = read_problem_config(config_path).map_err(|e| e.to_string())?;
    if let Some(t) = threshold_override {
        config.threshold = t;
    }
    if relative_override {
        config.threshold_mode = ThresholdMode::Relative;
    }

    let rhs = io::read_tensor(&config.rhs_path).map_err(|e| e.to_string())?;
    if rhs.registry().as_ref() != config.registry.as_ref() {
        return Err(format!(
            "{}: spaces differ from the config spaces",
            config.rhs_path.display()
        ));
    }
    // Rebind to the config registry so the operator and rhs share it.
    let rhs_spec = IndexSpec::from_indices(&config.registry, rhs.indices().to_vec())
        .map_err(|e| e.to_string())?;
    let rhs = DenseTensor::from_components(&rhs_spec, rhs.components().to_vec())
        .map_err(|e| e.to_string())?;

    let mut system = build_operator(&config).map_err(|e| e.to_string())?;
    let mut b = rhs;
    if config.negate {
        system = system.scaled(-1.0);
        b = b.scale(-1.0);
    }
    if b.indices() != system.output_spec().indices() {
        return Err(format!(
            "right-hand side spec `{}` does not match the operator output `{}`",
            b.spec(),
            system.output_spec()
        ));
    }

    let threshold = match config.threshold_mode {
        ThresholdMode::Absolute => config.threshold,
        ThresholdMode::Relative => {
            let rho0 = inner_product(&b, &b).map_err(|e| e.to_string())?;
            config.threshold * rho0
        }
    };

    let u0 = DenseTensor::zeros(&system.input_spec());
    let (solution, report) = match config.solver {
        SolverKind::Direct => {
            let solution = direct_solve(&system, &b).map_err(|e| e.to_string())?;
            let residual = b
                .subtract(&system.apply(&solution).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let rho = inner_product(&residual, &residual).map_err(|e| e.to_string())?;
            let rho0 = inner_product(&b, &b).map_err(|e| e.to_string())?;
            (
                solution,
                SolveReport {
                    iterations: 1,
                    residual_history: vec![rho0, rho],
                    converged: true,
                    wall_time: 0.0,
                },
            )
        }
        SolverKind::Jacobi => {
            jacobi(&system, &b, &u0, threshold, config.max_iters).map_err(|e| e.to_string())?
        }
        SolverKind::Cg => conjugate_gradients(&system, &b, &u0, threshold, config.max_iters)
            .map_err(|e| e.to_string())?,
        SolverKind::Tmg => {
            let hierarchy = build_hierarchy_from_map(system.clone(), Levels::Auto)
                .map_err(|e| e.to_string())?;
            tmg_solve(
                &hierarchy,
                &b,
                threshold,
                config.max_iters,
                config.pre_sweeps,
                config.post_sweeps,
            )
            .map_err(|e| e.to_string())?
        }
    };

    print!("{}", residual_table(&report.residual_history));
    io::write_tensor(&config.output_path, &solution).map_err(|e| e.to_string())?;
    println!("solution written to {}", config.output_path.display());
    if let Some(history_path) = history {
        io::write_history(history_path, &report.residual_history).map_err(|e| e.to_string())?;
    }
    Ok(if report.converged {
        ExitCode::from(0)
    } else {
        println!("not converged after {} iterations", report.iterations);
        ExitCode::from(2)
    })
}

fn cmd_bench(
    expr_path: &std::path::Path,
    execute: bool,
    random_seed: u64,
) -> Result<ExitCode, String> {
    let expr = read_expression_file(expr_path).map_err(|e| e.to_string())?;
    let names: Vec<&str> = expr.factors.iter().map(|(n, _)| n.as_str()).collect();
    let signatures: Vec<FactorSignature> = expr
        .factors
        .iter()
        .map(|(_, spec)| FactorSignature::from_spec(spec))
        .collect();

    if signatures.len() == 1 {
        println!("nothing to plan: single factor {}", names[0]);
        return Ok(ExitCode::from(0));
    }

    let best = plan(&signatures).map_err(|e| e.to_string())?;
    let chain = left_to_right_plan(&signatures).map_err(|e| e.to_string())?;
    let best_report = cost_report(&best, &names);
    let chain_report = cost_report(&chain, &names);

    println!("optimal plan: {}", best.expression(&names));
    for line in &best_report.lines {
        println!("  {line}");
    }
    println!(
        "  total flops={} peak_components={}{}",
        best.total_flops(),
        best.peak_components(),
        if best.is_heuristic() { " (heuristic)" } else { "" }
    );
    println!("left-to-right plan: {}", chain.expression_stored(&names));
    for line in &chain_report.lines {
        println!("  {line}");
    }
    println!(
        "  total flops={} peak_components={}",
        chain.total_flops(),
        chain.peak_components()
    );
    let speedup = chain.total_flops() as f64 / best.total_flops().max(1) as f64;
    println!("speedup: {speedup:.2}x");

    if execute {
        let mut rng = ChaCha8Rng::seed_from_u64(random_seed);
        let tensors: Vec<DenseTensor> = expr
            .factors
            .iter()
            .map(|(_, spec)| {
                let n = spec.component_count();
                let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                DenseTensor::from_components(spec, values).map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        let refs: Vec<&DenseTensor> = tensors.iter().collect();
        let (fast, _) = execute_with_stats(&best, &refs).map_err(|e| e.to_string())?;
        let (slow, _) = execute_with_stats(&chain, &refs).map_err(|e| e.to_string())?;
        let scale = slow.max_abs().max(1e-300);
        let worst = fast
            .components()
            .iter()
            .zip(slow.components())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let relative = worst / scale;
        println!("plan discrepancy: max_abs={worst:.3e} relative={relative:.3e}");
        if relative > 1e-12 {
            println!("plans disagree beyond 1e-12 relative");
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::from(0))
}

#[allow(clippy::too_many_arguments)]
fn cmd_demo(
    grid: usize,
    samples: usize,
    seed: u64,
    solver: &str,
    lambda: f64,
    threshold: f64,
    max_iters: usize,
    out_dir: &std::path::Path,
) -> Result<ExitCode, String> {
    let solver = SolverKind::parse(solver)
        .ok_or_else(|| format!("unknown solver `{solver}` (direct, jacobi, cg, tmg)"))?;
    let params = ReconParams {
        grid,
        samples,
        seed,
        solver,
        lambda,
        threshold,
        max_iters,
    };
    let outcome = run_reconstruction(&params).map_err(|e| e.to_string())?;
    match &outcome.result {
        ReconSolve::Solved { solution, report } => {
            println!(
                "solver={} iterations={} converged={} initial_rho={} final_rho={}",
                solver.name(),
                report.iterations,
                report.converged,
                io::format_component(report.initial_residual()),
                io::format_component(report.final_residual()),
            );
            std::fs::create_dir_all(out_dir).map_err(|e| e.to_string())?;
            let tensor_path = out_dir.join(format!("recon-{}.tensor", solver.name()));
            let pgm_path = out_dir.join(format!("recon-{}.pgm", solver.name()));
            io::write_tensor(&tensor_path, solution).map_err(|e| e.to_string())?;
            io::write_pgm(&pgm_path, grid, grid, solution.components())
                .map_err(|e| e.to_string())?;
            println!(
                "reconstruction written to {} and {}",
                tensor_path.display(),
                pgm_path.display()
            );
            Ok(if report.converged {
                ExitCode::from(0)
            } else {
                ExitCode::from(2)
            })
        }
        ReconSolve::Diverged { iteration } => {
            println!(
                "solver={} iterations={iteration} converged=false diverged=true",
                solver.name()
            );
            Ok(ExitCode::from(2))
        }
    }
}
