//! Command-line front end: eigenpairs, nonlocal-term evaluation, Newtonian
//! potentials, Newton solves, branch continuation and the verification suite.

use clap::{Parser, Subcommand};
use nonloc::config::RunConfig;
use nonloc::continuation::{branch_continue, newton_solve, seed_amplitude, NewtonOutcome};
use nonloc::error::Error;
use nonloc::grid::{DiscreteLaplacian, Field};
use nonloc::potential::{certify_decay_bound, check_gradient_bound, check_monotone_positive,
    radial_potential};
use nonloc::spectral::principal_eigenpair;
use nonloc::verify::{run_suite, shipped_fixtures, Level};
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nonloc",
    version,
    about = "Radial solver and bifurcation-branch tracer for nonlocal logistic equations on R^N"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Principal eigenpair of -Delta u = lambda f(x) u with decay at infinity
    Eig {
        #[arg(long)]
        config: PathBuf,
        /// Also write the JSON summary to this file
        #[arg(long)]
        out_json: Option<PathBuf>,
        /// Eigenfunction CSV path (default <outdir>/phi1.csv)
        #[arg(long)]
        out_phi: Option<PathBuf>,
    },
    /// Evaluate the nonlocal term phi_u for a field given as CSV
    Phi {
        #[arg(long)]
        config: PathBuf,
        /// Input field as r,value CSV (interpolated onto the run grid)
        #[arg(long)]
        field: PathBuf,
        /// Output CSV path (default <outdir>/phi.csv)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export the assembled kernel matrix as CSV
        #[arg(long)]
        dump_kernel: Option<PathBuf>,
    },
    /// Newtonian potential of a radial source with far-field diagnostics
    Potential {
        #[arg(long)]
        config: PathBuf,
        /// Source term F as r,value CSV
        #[arg(long = "F")]
        source: PathBuf,
        /// Output CSV path (default <outdir>/potential.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Newton solve of the full nonlinear equation at fixed lambda
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Seed field CSV; defaults to the eigenfunction scaled by the
        /// identity-linearization amplitude
        #[arg(long)]
        seed: Option<PathBuf>,
        /// Solution CSV path (default <outdir>/solution.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace the positive bifurcation branch from (lambda_1, 0)
    Branch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lambda_max: f64,
        #[arg(long, default_value_t = 10.0)]
        amp_max: f64,
        /// Arclength step (default from the solver config)
        #[arg(long)]
        ds: Option<f64>,
        /// Branch CSV path (default <outdir>/branch.csv)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one field snapshot CSV per accepted point into this directory
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
    /// Run the verification suite on the shipped oracle fixtures
    Verify {
        #[arg(long, default_value = "fast")]
        level: String,
        /// Write the JSON report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Io(_) | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn write_field_csv(field: &Field, path: &Path) -> nonloc::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    field.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn read_field_csv(path: &Path, grid: &std::sync::Arc<nonloc::grid::RadialGrid>) -> nonloc::Result<Field> {
    let reader = BufReader::new(File::open(path)?);
    Field::read_csv(reader, grid)
}

fn run(command: Command) -> nonloc::Result<ExitCode> {
    match command {
        Command::Eig {
            config,
            out_json,
            out_phi,
        } => {
            let cfg = RunConfig::load(&config)?;
            let spec = cfg.build_spec()?;
            let grid = cfg.build_grid()?;
            let lap = DiscreteLaplacian::new(&grid);
            let f = spec.f.sample(&grid);
            let started = std::time::Instant::now();
            let eig = principal_eigenpair(&lap, &f, cfg.solver.eig_tol, cfg.solver.eig_max_iter)?;
            let summary = json!({
                "lambda1": eig.lambda1,
                "lambda2": eig.lambda2,
                "residual": eig.residual,
                "decay_floor": eig.decay_floor,
                "runtime_ms": started.elapsed().as_secs_f64() * 1e3,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(path) = out_json {
                std::fs::write(path, serde_json::to_string_pretty(&summary)?)?;
            }
            let phi_path = out_phi.unwrap_or_else(|| cfg.output_dir().join("phi1.csv"));
            write_field_csv(&eig.phi1, &phi_path)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Phi {
            config,
            field,
            out,
            dump_kernel,
        } => {
            let cfg = RunConfig::load(&config)?;
            let inst = cfg.build_instance()?;
            let u = read_field_csv(&field, &inst.grid)?;
            let nf = inst.kernel.phi(&u);
            let out_path = out.unwrap_or_else(|| cfg.output_dir().join("phi.csv"));
            write_field_csv(&nf.phi, &out_path)?;
            if let Some(kpath) = dump_kernel {
                let mut w = BufWriter::new(File::create(kpath)?);
                inst.kernel.export_csv(&mut w)?;
                w.flush()?;
            }
            let summary = json!({
                "phi_sup": nf.phi.sup_norm(),
                "source_norm_gamma": nf.source_norm_gamma,
                "kernel_m_bound": inst.kernel.m_bound(),
                "out": out_path,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }

        Command::Potential {
            config,
            source,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let spec = cfg.build_spec()?;
            let grid = cfg.build_grid()?;
            let rhs = read_field_csv(&source, &grid)?;
            let mut res = radial_potential(&rhs)?;
            let p_field = spec.p.sample(&grid);
            // Smallest certifiable constant c0 with |F| <= c0 P.
            let c0 = rhs
                .values()
                .iter()
                .zip(p_field.values())
                .map(|(f, p)| f.abs() / p)
                .fold(0.0_f64, f64::max);
            let bound = certify_decay_bound(&mut res, &rhs, &p_field, c0);
            let radius = grid.r_max() / 4.0;
            let grad = check_gradient_bound(&res.u, &rhs, radius)?;
            let out_path = out.unwrap_or_else(|| cfg.output_dir().join("potential.csv"));
            write_field_csv(&res.u, &out_path)?;
            let summary = json!({
                "decay_constant": res.decay_constant,
                "tail_fraction": res.tail_fraction,
                "truncated": res.truncated,
                "monotone_positive": check_monotone_positive(&res, &rhs),
                "decay_bound": {
                    "c0": c0,
                    "certified": bound.certified,
                    "holds": bound.holds,
                    "max_ratio": bound.max_ratio,
                    "cap_coefficient": bound.cap_coefficient,
                },
                "gradient_bound": {
                    "radius": radius,
                    "lhs": grad.lhs,
                    "rhs": grad.rhs,
                    "holds": grad.holds,
                },
                "out": out_path,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }

        Command::Solve {
            config,
            lambda,
            seed,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let inst = cfg.build_instance()?;
            let eig = principal_eigenpair(
                &inst.laplacian,
                &inst.f,
                cfg.solver.eig_tol,
                cfg.solver.eig_max_iter,
            )?;
            let u0 = match seed {
                Some(path) => read_field_csv(&path, &inst.grid)?,
                None => {
                    let t0 = seed_amplitude(&inst, &eig, lambda).max(1e-3);
                    eig.phi1.scaled(t0)
                }
            };
            let outcome = newton_solve(&inst, &eig, lambda, &u0, &cfg.solver.newton())?;
            let (summary, code) = match outcome {
                NewtonOutcome::Point(p) => {
                    let out_path = out.unwrap_or_else(|| cfg.output_dir().join("solution.csv"));
                    write_field_csv(&p.u, &out_path)?;
                    (
                        json!({
                            "outcome": "positive",
                            "lambda": p.lambda,
                            "lambda1": eig.lambda1,
                            "sup_norm": p.sup_norm,
                            "d12_norm": p.d12_norm,
                            "identity_residual": p.identity_residual,
                            "out": out_path,
                        }),
                        ExitCode::SUCCESS,
                    )
                }
                NewtonOutcome::Trivial => (
                    json!({
                        "outcome": "trivial",
                        "lambda": lambda,
                        "lambda1": eig.lambda1,
                    }),
                    ExitCode::SUCCESS,
                ),
                NewtonOutcome::SignFailure { nonpositive_nodes } => (
                    json!({
                        "outcome": "sign_failure",
                        "lambda": lambda,
                        "nonpositive_nodes": nonpositive_nodes,
                    }),
                    ExitCode::from(1),
                ),
            };
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(code)
        }

        Command::Branch {
            config,
            lambda_max,
            amp_max,
            ds,
            out,
            snapshot_dir,
        } => {
            let cfg = RunConfig::load(&config)?;
            let inst = cfg.build_instance()?;
            let eig = principal_eigenpair(
                &inst.laplacian,
                &inst.f,
                cfg.solver.eig_tol,
                cfg.solver.eig_max_iter,
            )?;
            let ccfg = cfg.solver.continuation(lambda_max, amp_max, ds);
            let branch = branch_continue(&inst, &eig, &ccfg)?;

            let out_path = out.unwrap_or_else(|| cfg.output_dir().join("branch.csv"));
            if let Some(parent) = out_path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut w = BufWriter::new(File::create(&out_path)?);
            writeln!(w, "lambda,sup_norm,d12_norm,identity_residual,positive")?;
            for p in &branch.points {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                    p.lambda, p.sup_norm, p.d12_norm, p.identity_residual, p.positive
                )?;
            }
            w.flush()?;

            if let Some(dir) = &snapshot_dir {
                std::fs::create_dir_all(dir)?;
                for (i, p) in branch.points.iter().enumerate() {
                    write_field_csv(&p.u, &dir.join(format!("u_{i:04}.csv")))?;
                }
            }

            let summary = json!({
                "lambda1": eig.lambda1,
                "points": branch.points.len(),
                "termination": format!("{:?}", branch.termination),
                "lambda_end": branch.points.last().map(|p| p.lambda),
                "amp_end": branch.points.last().map(|p| p.sup_norm),
                "out": out_path,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }

        Command::Verify { level, out } => {
            let level = match level.as_str() {
                "fast" => Level::Fast,
                "full" => Level::Full,
                other => {
                    return Err(Error::Config(format!(
                        "unknown level {other:?}; expected fast or full"
                    )))
                }
            };
            let report = run_suite(&shipped_fixtures(), level)?;
            for c in &report.checks {
                println!(
                    "{:<24} {:<4} measured {:>12.4e}  tol {:>8.1e}  [{:>7.1} ms]  {}",
                    c.name,
                    c.status.to_uppercase(),
                    c.measured,
                    c.tolerance,
                    c.runtime_ms,
                    c.note
                );
            }
            println!(
                "suite {}: {} ({:.1} s)",
                report.level,
                if report.passed { "PASS" } else { "FAIL" },
                report.total_runtime_ms / 1e3
            );
            if let Some(path) = out {
                std::fs::write(&path, report.to_json()?)?;
            }
            Ok(if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}
