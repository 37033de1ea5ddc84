//! Command-line front end: solve a single trade-off point, sweep the
//! information-cost curve, or validate a controller by seeded simulation.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use milqg_core::channel::build_matched_channel;
use milqg_core::controller::{closed_loop_stationary, estimator_to_raw, joint_from_sigma_y};
use milqg_core::psd::Tolerance;
use milqg_core::sim::{self, SimConfig, SimController};
use milqg_core::solver;
use milqg_core::tradeoff;
use nalgebra::DMatrix;
use serde::Serialize;

use milqg_cli::artifact::SolutionArtifact;
use milqg_cli::problem::ProblemFile;

#[derive(Parser)]
#[command(
    name = "milqg",
    about = "Minimum-information memoryless LQG controller synthesis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one trade-off point, by beta or by a cost guarantee.
    Solve(SolveArgs),
    /// Sweep the information-cost curve over a beta range (CSV output).
    Sweep(SweepArgs),
    /// Monte Carlo validation of a controller against analytic predictions.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Trade-off coefficient (0 = minimize information only).
    #[arg(long, conflicts_with = "cost")]
    beta: Option<f64>,
    /// Cost-rate guarantee; beta is located by binary search.
    #[arg(long)]
    cost: Option<f64>,
    /// Include the matched Gaussian channel realization in the artifact.
    #[arg(long)]
    channel: bool,
    /// Report information in bits instead of nats.
    #[arg(long)]
    bits: bool,
    /// Write the artifact here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    problem: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    beta_min: f64,
    #[arg(long)]
    beta_max: f64,
    #[arg(long)]
    points: usize,
    /// Logarithmic beta spacing (requires beta-min > 0).
    #[arg(long)]
    log_grid: bool,
    /// Report information in bits instead of nats.
    #[arg(long)]
    bits: bool,
    /// Write the CSV here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    problem: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Steps to simulate.
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    seed: u64,
    /// Steps discarded before accumulating statistics
    /// (default: transient-based).
    #[arg(long)]
    burn_in: Option<usize>,
    /// Path to a solve artifact, or "zero" for the open loop.
    #[arg(long)]
    controller: Option<String>,
    /// Solve inline at this beta and simulate the result.
    #[arg(long, conflicts_with = "controller")]
    beta: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    problem: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match outcome {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn load_problem(path: &PathBuf) -> Result<ProblemFile, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    ProblemFile::parse(&text)
}

fn emit(output: &Option<PathBuf>, content: &str) -> Result<(), String> {
    match output {
        Some(path) => fs::write(path, content)
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, String> {
    let file = load_problem(&args.problem)?;
    let (plant, cost_spec) = file.to_specs()?;
    let config = file.solver_config();
    let bits = args.bits || file.bits_default()?;

    let report = match (args.beta, args.cost) {
        (Some(beta), None) => {
            if !beta.is_finite() || beta < 0.0 {
                return Err("--beta must be finite and nonnegative".into());
            }
            solver::solve_beta(&plant, &cost_spec, beta, &config).map_err(|e| e.to_string())?
        }
        (None, Some(c)) => tradeoff::solve_for_cost(&plant, &cost_spec, c, &config)
            .map_err(|e| e.to_string())?,
        _ => return Err("exactly one of --beta or --cost is required".into()),
    };

    let channel = if args.channel {
        Some(
            build_matched_channel(&report.state, &config.tol)
                .map_err(|e| format!("channel: {e}"))?,
        )
    } else {
        None
    };
    let dims = (plant.state_dim(), plant.obs_dim(), plant.control_dim());
    let artifact = SolutionArtifact::from_report(&report, dims, bits, channel.as_ref());
    emit(&args.output, &artifact.to_json())?;
    if report.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "warning: not converged (max residual {:.3e})",
            report.max_residual
        );
        Ok(ExitCode::FAILURE)
    }
}

fn format_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, String> {
    let file = load_problem(&args.problem)?;
    let (plant, cost_spec) = file.to_specs()?;
    let config = file.solver_config();
    let bits = args.bits || file.bits_default()?;
    let scale = if bits { std::f64::consts::LN_2 } else { 1.0 };

    if !(args.beta_min < args.beta_max) {
        return Err("--beta-min must be below --beta-max".into());
    }
    if args.points < 2 {
        return Err("--points must be at least 2".into());
    }
    let grid = if args.log_grid {
        tradeoff::log_grid(args.beta_min, args.beta_max, args.points)
    } else {
        tradeoff::linear_grid(args.beta_min, args.beta_max, args.points)
    }
    .map_err(|e| e.to_string())?;

    let sweep =
        tradeoff::sweep_curve(&plant, &cost_spec, &grid, &config).map_err(|e| e.to_string())?;

    let mut out = String::from("beta,cost_rate,info_rate,order,converged,lagrangian\n");
    for p in &sweep.points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            format_f64(p.beta),
            format_f64(p.cost_rate),
            format_f64(p.info_rate / scale),
            p.order,
            p.converged,
            format_f64(p.lagrangian)
        ));
    }
    for (beta_c, old, new) in &sweep.transitions {
        out.push_str(&format!(
            "#transition,{},{},{}\n",
            format_f64(*beta_c),
            old,
            new
        ));
    }
    emit(&args.output, out.trim_end())?;
    let all_converged = sweep.points.iter().all(|p| p.converged);
    Ok(if all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[derive(Serialize)]
struct SimRow {
    name: String,
    empirical: f64,
    analytic: f64,
    /// Batch-means standard error at the reported entry.
    std_error: f64,
    /// |empirical - analytic| / std_error at the worst entry.
    z_score: f64,
    pass: bool,
}

#[derive(Serialize)]
struct SimReportDoc {
    steps: usize,
    burn_in: usize,
    seed: u64,
    controller_source: String,
    rows: Vec<SimRow>,
    all_pass: bool,
}

fn matrix_row(
    name: &str,
    empirical: &DMatrix<f64>,
    analytic: &DMatrix<f64>,
    se: &DMatrix<f64>,
) -> SimRow {
    let mut worst_z = 0.0f64;
    let mut worst = (0usize, 0usize);
    for i in 0..empirical.nrows() {
        for j in 0..empirical.ncols() {
            let diff = (empirical[(i, j)] - analytic[(i, j)]).abs();
            let z = if se[(i, j)] > 0.0 {
                diff / se[(i, j)]
            } else if diff < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            if z > worst_z {
                worst_z = z;
                worst = (i, j);
            }
        }
    }
    SimRow {
        name: name.into(),
        empirical: empirical[worst],
        analytic: analytic[worst],
        std_error: se[worst],
        z_score: worst_z,
        pass: worst_z <= 3.0,
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, String> {
    let file = load_problem(&args.problem)?;
    let (plant, cost_spec) = file.to_specs()?;
    let config = file.solver_config();
    let tol = Tolerance::default();

    let (sim_controller, raw, source) = match (&args.controller, args.beta) {
        (Some(s), None) if s == "zero" => {
            let raw = milqg_core::ControllerRaw {
                h: DMatrix::zeros(plant.control_dim(), plant.obs_dim()),
                sigma_eta: milqg_core::PsdMatrix::zeros(plant.control_dim()),
            };
            (SimController::Raw(raw.clone()), raw, "zero".to_string())
        }
        (Some(path), None) => {
            let text =
                fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
            let art = SolutionArtifact::parse(&text)?;
            if (art.n, art.k, art.l) != (plant.state_dim(), plant.obs_dim(), plant.control_dim())
            {
                return Err("artifact dimensions do not match the problem file".into());
            }
            let est = art.estimator_controller(&tol)?;
            let raw = estimator_to_raw(&est);
            (
                SimController::Estimator(est),
                raw,
                format!("artifact:{path}"),
            )
        }
        (None, Some(beta)) => {
            let report = solver::solve_beta(&plant, &cost_spec, beta, &config)
                .map_err(|e| e.to_string())?;
            if !report.converged {
                return Err(format!(
                    "inline solve did not converge (max residual {:.3e})",
                    report.max_residual
                ));
            }
            let est = report.controller.clone();
            let raw = estimator_to_raw(&est);
            (
                SimController::Estimator(est),
                raw,
                format!("solved:beta={beta}"),
            )
        }
        _ => {
            return Err(
                "provide --controller <artifact.json>|zero or --beta <f> to solve inline".into(),
            )
        }
    };

    let analytic = closed_loop_stationary(&plant, &raw, &tol).map_err(|e| e.to_string())?;
    let rho =
        milqg_core::plant::spectral_radius(&(&plant.a + &plant.b * &raw.h * &plant.c));
    let burn_in = args
        .burn_in
        .or(file.sim.as_ref().and_then(|s| s.burn_in))
        .unwrap_or_else(|| sim::default_burn_in(rho).min(args.steps / 2));
    let sim_cfg = SimConfig {
        horizon: args.steps,
        burn_in,
        seed: args.seed,
        record_joint: !matches!(sim_controller, SimController::Raw(_)),
    };
    sim_cfg.validate().map_err(|e| e.to_string())?;

    let stats = sim::rollout(&plant, &cost_spec, &sim_controller, &sim_cfg, &tol)
        .map_err(|e| e.to_string())?;

    let analytic_cost =
        milqg_core::plant::expected_cost_rate(&cost_spec, &analytic.sigma_x, &analytic.sigma_u);
    let mut rows = Vec::new();
    let cost_z = if stats.cost_rate_se > 0.0 {
        (stats.cost_rate - analytic_cost).abs() / stats.cost_rate_se
    } else if (stats.cost_rate - analytic_cost).abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    rows.push(SimRow {
        name: "cost_rate".into(),
        empirical: stats.cost_rate,
        analytic: analytic_cost,
        std_error: stats.cost_rate_se,
        z_score: cost_z,
        pass: cost_z <= 3.0,
    });
    rows.push(matrix_row(
        "sigma_x",
        &stats.cov("x").map_err(|e| e.to_string())?,
        analytic.sigma_x.matrix(),
        &stats.cov_se("x").map_err(|e| e.to_string())?,
    ));
    rows.push(matrix_row(
        "sigma_y",
        &stats.cov("y").map_err(|e| e.to_string())?,
        analytic.sigma_y.matrix(),
        &stats.cov_se("y").map_err(|e| e.to_string())?,
    ));
    rows.push(matrix_row(
        "sigma_u",
        &stats.cov("u").map_err(|e| e.to_string())?,
        analytic.sigma_u.matrix(),
        &stats.cov_se("u").map_err(|e| e.to_string())?,
    ));
    if let SimController::Estimator(est) = &sim_controller {
        let joint =
            joint_from_sigma_y(&plant, est, &analytic.sigma_y, &tol).map_err(|e| e.to_string())?;
        let k = plant.obs_dim();
        let n = plant.state_dim();
        let offset = k + plant.control_dim();
        let sxy_analytic = joint.cov().view((offset, offset), (n, n)).into_owned();
        rows.push(matrix_row(
            "sigma_xhat_y",
            &stats.cov("xhat_y").map_err(|e| e.to_string())?,
            &sxy_analytic,
            &stats.cov_se("xhat_y").map_err(|e| e.to_string())?,
        ));
    }
    let all_pass = rows.iter().all(|r| r.pass);
    let doc = SimReportDoc {
        steps: args.steps,
        burn_in,
        seed: args.seed,
        controller_source: source,
        rows,
        all_pass,
    };
    emit(
        &args.output,
        &serde_json::to_string_pretty(&doc).expect("report serialization cannot fail"),
    )?;
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
