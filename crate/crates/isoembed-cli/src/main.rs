//! `isoembed` command-line driver.

use clap::{Parser, Subcommand};
use isoembed::pipeline::{self, RunConfig};
use isoembed::poisson::regularity_diagnostic;
use isoembed::{holder::HolderOptions, Error};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "isoembed", version, about = "Isometric embedding pipeline on the unit ball")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full embedding run: decomposition, oscillatory steps, perturbation solves.
    Embed(Args),
    /// Perturbation solves for the family `t h` over a time window.
    Family(Args),
    /// Primitive decomposition of the metric increment.
    Decompose(Args),
    /// Oscillatory step for the first primitive.
    Oscillate(Args),
    /// Perturbation of the base map by the metric increment.
    Perturb(Args),
    /// Poisson refinement ladder and empirical order.
    PoissonCheck(Args),
    /// Pullback check of a saved map against the target metric.
    Verify {
        #[command(flatten)]
        args: Args,
        /// Map values to check (defaults to `F.csv` in the output directory).
        #[arg(long)]
        map: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> isoembed::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config { .. } => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn poisson_check(cfg: &RunConfig) -> isoembed::Result<()> {
    let n = cfg.n as f64;
    let coarse = (cfg.npts - 1) / 4 + 1;
    let mid = (cfg.npts - 1) / 2 + 1;
    let ladder: Vec<usize> = [coarse, mid, cfg.npts].into_iter().filter(|&m| m >= 5 && m % 2 == 1).collect();
    let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let exact = move |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (r2 * r2 - 1.0) / (4.0 * (n + 2.0))
    };
    let rep = regularity_diagnostic(
        cfg.n,
        &ladder,
        &f,
        Some(&exact),
        cfg.alpha,
        HolderOptions {
            seed: cfg.seed,
            ..Default::default()
        },
    )?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    rep.write_csv(cfg.out_dir.join("ladder.csv"))?;
    write_json(&cfg.out_dir, "report.json", &rep)
}

fn run(cmd: Command) -> isoembed::Result<()> {
    let cfg_path = match &cmd {
        Command::Embed(a)
        | Command::Family(a)
        | Command::Decompose(a)
        | Command::Oscillate(a)
        | Command::Perturb(a)
        | Command::PoissonCheck(a) => &a.config,
        Command::Verify { args, .. } => &args.config,
    };
    let cfg = RunConfig::load(cfg_path)?;
    let out = cfg.out_dir.clone();
    match cmd {
        Command::Embed(_) => match pipeline::run_embed(&cfg) {
            Ok(run) => run.write(&out),
            Err(fail) => {
                fail.report.write(&out)?;
                Err(fail.error)
            }
        },
        Command::Family(_) => match pipeline::run_family(&cfg) {
            Ok(run) => run.write(&out),
            Err(fail) => {
                fail.report.write(&out)?;
                Err(fail.error)
            }
        },
        Command::Decompose(_) => pipeline::decompose_metric(&cfg, Some(&out)).map(|_| ()),
        Command::Oscillate(_) => {
            let rep = pipeline::oscillate_first(&cfg, Some(&out))?;
            write_json(&out, "report.json", &rep)
        }
        Command::Perturb(_) => {
            let rep = pipeline::perturb_base(&cfg, Some(&out))?;
            write_json(&out, "report.json", &rep)
        }
        Command::PoissonCheck(_) => poisson_check(&cfg),
        Command::Verify { map, .. } => {
            let map = map.unwrap_or_else(|| out.join("F.csv"));
            let rep = pipeline::verify_saved(&cfg, &map, Some(&out))?;
            write_json(&out, "verify.json", &rep)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
