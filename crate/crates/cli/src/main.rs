//! Scenario runner for the quadcopter trajectory-tracking stack.
//!
//! Three subcommands: `run` simulates one scenario and writes the tick
//! log plus a JSON summary, `check` validates a scenario and prints
//! the certificate synthesis without simulating, and `sweep` runs every
//! scenario file in a directory and prints one result line each.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use quadmpc::certificates::feasibility_condition;
use quadmpc::harness::{plan_scenario, run_scenario, write_csv, write_summary_json, RunResult};
use quadmpc::scenario::load_scenario;
use quadmpc::{Scenario, Variant};

#[derive(Parser)]
#[command(
    name = "quadmpc",
    version,
    about = "Constrained trajectory tracking for quadcopters: closed-loop runs, scenario checks and batch sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write `<stem>_<variant>.csv` and
    /// `<stem>_<variant>.json` into the output directory.
    Run {
        /// Scenario file to run.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's bound-schedule variant.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Override the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a scenario without simulating: reference feasibility
    /// over the whole run and the per-axis certificate synthesis.
    Check {
        /// Scenario file to check.
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run every `.scn` file in a directory, printing one line each.
    Sweep {
        /// Directory containing scenario files.
        #[arg(long)]
        scenarios: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    /// Time-varying bound schedule.
    Tv,
    /// One constant bound, the minimum over the whole run.
    Ti,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Tv => Variant::Tv,
            VariantArg::Ti => Variant::Ti,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            out,
            variant,
            seed,
        } => run_command(&scenario, &out, variant, seed),
        Command::Check { scenario } => check_command(&scenario),
        Command::Sweep { scenarios } => sweep_command(&scenarios),
    }
}

fn load(path: &Path) -> Result<Scenario> {
    load_scenario(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn run_command(
    scenario: &Path,
    out: &Path,
    variant: Option<VariantArg>,
    seed: Option<u64>,
) -> Result<()> {
    let mut sc = load(scenario)?;
    if let Some(v) = variant {
        sc.variant = v.into();
    }
    if let Some(s) = seed {
        sc.seed = s;
    }

    let res = run_scenario(&sc).context("running scenario")?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let stem = scenario
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let base = format!("{stem}_{}", sc.variant.as_str());

    let csv_path = out.join(format!("{base}.csv"));
    let csv = File::create(&csv_path)
        .with_context(|| format!("creating {}", csv_path.display()))?;
    write_csv(BufWriter::new(csv), &res).context("writing tick log")?;

    let json_path = out.join(format!("{base}.json"));
    let json = File::create(&json_path)
        .with_context(|| format!("creating {}", json_path.display()))?;
    write_summary_json(BufWriter::new(json), &res).context("writing summary")?;

    print_run(&stem, &sc, &res);
    println!("  wrote {}", csv_path.display());
    println!("  wrote {}", json_path.display());
    Ok(())
}

fn print_run(name: &str, sc: &Scenario, res: &RunResult) {
    let s = &res.summary;
    println!(
        "{name} [{}]: rmse [{:.4}, {:.4}, {:.4}] m over {:.1} s",
        sc.variant.as_str(),
        res.rmse[0],
        res.rmse[1],
        res.rmse[2],
        sc.duration
    );
    println!(
        "  solve {:.3} ms mean ({:.3} max), {} control steps, runtime {:.2} s",
        s.solve_ms.mean,
        s.solve_ms.max,
        s.ctrl_steps,
        s.runtime_s
    );
    println!(
        "  bound violations {:?}, fallbacks {:?}, thrust clamps {}, max |a_d|/bound {:.4}",
        s.bound_violations, s.fallbacks, s.thrust_clamps, s.max_ad_ratio
    );
}

fn check_command(scenario: &Path) -> Result<()> {
    let sc = load(scenario)?;
    let plan = plan_scenario(&sc).context("planning scenario")?;

    let (holds, margin) = feasibility_condition(&plan.schedule, sc.h, sc.gamma)
        .context("evaluating the shrink condition")?;

    println!(
        "reference feasible over {:.1} s + horizon tail ({} samples)",
        sc.duration,
        plan.report.samples
    );
    println!(
        "  thrust in [{:.3}, {:.3}] m/s^2 (band [{:.3}, {:.3}])",
        plan.report.t_bar_min,
        plan.report.t_bar_max,
        sc.env.eps1,
        sc.env.t_max - sc.env.eps2
    );
    println!(
        "  acceleration bound in [{:.3}, {:.3}] m/s^2 across {} intervals ({})",
        plan.report.delta_min,
        plan.report.delta_max,
        plan.schedule.len(),
        sc.variant.as_str()
    );
    println!(
        "  schedule shrink condition: {} (margin {:.3e})",
        if holds { "holds" } else { "VIOLATED" },
        margin
    );
    for (axis, cert) in plan.certs.iter().enumerate() {
        println!(
            "  axis {axis}: kappa {:.4}, lambda {:.4}, theta {:.4}, L_u {:.4}, delta* {:.4}",
            cert.kappa, cert.lambda, cert.theta, cert.l_u, cert.delta_star
        );
    }
    if !holds {
        bail!("bound schedule shrinks too fast for recursive feasibility");
    }
    Ok(())
}

fn sweep_command(dir: &Path) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "scn"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .scn files in {}", dir.display());
    }

    let mut failures = 0usize;
    for path in &files {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        match load(path).and_then(|sc| Ok((run_scenario(&sc).context("running")?, sc))) {
            Ok((res, sc)) => {
                let s = &res.summary;
                let clean = s.bound_violations == [0, 0, 0]
                    && s.fallbacks == [0, 0, 0]
                    && s.thrust_clamps == 0;
                println!(
                    "{name} [{}]: rmse [{:.4}, {:.4}, {:.4}] m, solve {:.3} ms mean, {}",
                    sc.variant.as_str(),
                    res.rmse[0],
                    res.rmse[1],
                    res.rmse[2],
                    s.solve_ms.mean,
                    if clean { "clean" } else { "WITH INCIDENTS" }
                );
            }
            Err(e) => {
                failures += 1;
                println!("{name}: ERROR {e:#}");
            }
        }
    }
    if failures > 0 {
        bail!("{failures} of {} scenarios failed", files.len());
    }
    Ok(())
}
