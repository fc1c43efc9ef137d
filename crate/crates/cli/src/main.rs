use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpcons::experiment;
use gpcons::{ConfigFile, Error, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(
    name = "gpcons",
    version,
    about = "Distributed GP learning for leader-follower consensus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; omitted sections take the benchmark defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (falls back to the config's output_dir, then ./out).
    #[arg(long, value_name = "DIR", env = "GPCONS_OUT")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured control mode.
    Simulate(Common),
    /// Run all three modes on shared training data.
    Compare(Common),
    /// Evaluate the uniform error bound and the ultimate-bound radii.
    BoundReport {
        #[command(flatten)]
        common: Common,
        /// Skip the closed-loop run (no trajectory-based radius).
        #[arg(long)]
        no_trajectory: bool,
    },
    /// Write the per-agent training sets as CSV.
    GenData(Common),
}

fn load(common: &Common) -> gpcons::Result<(ExperimentConfig, PathBuf)> {
    let mut file = match &common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(s) = common.seed {
        file.seed = s;
    }
    let out = common
        .out
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((ExperimentConfig::from_file(file)?, out))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:.6}", x)).collect();
    format!("[{}]", parts.join(", "))
}

fn run(cli: Cli) -> gpcons::Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let (cfg, out) = load(&c)?;
            let s = experiment::simulate(&cfg, &out)?;
            if !c.quiet {
                println!(
                    "mode {}: {} rows -> {}",
                    s.mode,
                    s.rows,
                    s.trajectory.display()
                );
                println!("tail mean E_j: {}", fmt_vec(&s.tail_mean_accumulated));
            }
        }
        Command::Compare(c) => {
            let (cfg, out) = load(&c)?;
            let s = experiment::compare(&cfg, &out)?;
            if !c.quiet {
                for m in &s.modes {
                    println!(
                        "{:<12} tail mean E_j: {}",
                        m.mode,
                        fmt_vec(&m.tail_mean_accumulated)
                    );
                }
                println!(
                    "ordering distributed < individual < none: {:?}",
                    s.ordering_holds
                );
                println!(
                    "distributed/none: {}",
                    fmt_vec(&s.ratio_distributed_to_none)
                );
                println!("wrote {}", out.join("summary.json").display());
            }
        }
        Command::BoundReport {
            common: c,
            no_trajectory,
        } => {
            let (cfg, out) = load(&c)?;
            let r = experiment::write_bound_report(&cfg, &out, !no_trajectory)?;
            if !c.quiet {
                println!("beta = {:.4}, probability = {:.4}", r.beta, r.probability);
                println!("lambda_min = {:.6}, k* = {}", r.lambda_min, r.k_star);
                println!("radius (grid nu) = {:.6}", r.grid.radius);
                println!("radius (bound nu) = {:.6}", r.bound.radius);
                if let Some(t) = &r.trajectory {
                    println!("radius (trajectory nu) = {:.6}", t.radius);
                }
                println!("wrote {}", out.join("bound_report.json").display());
            }
        }
        Command::GenData(c) => {
            let (cfg, out) = load(&c)?;
            let files = experiment::gen_data(&cfg, &out)?;
            if !c.quiet {
                println!("wrote {} training files to {}", files.len(), out.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            if let Error::VacuousCovering { .. } = e {
                eprintln!(
                    "hint: lower bounds.rho in the config so that r_omega*sqrt(m)/(2 rho) >= 1"
                );
            }
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
