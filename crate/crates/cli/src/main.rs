use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use prnpe_cli::{dump_designs, parse_config, plot_report, pseudo_truth, run_experiment, to_rounded_json, RunConfig};
use prnpe_core::pipeline::{design_diagnostics, Preconditioner};

/// Preconditioned robust neural posterior estimation experiments.
#[derive(Parser)]
#[command(name = "prnpe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (TOML, or JSON when the extension is .json). Defaults
    /// apply to every key it leaves out.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides such as `smc.alpha=0.3` or `methods=["npe","prnpe-rf"]`;
    /// they win over the file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        parse_config(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method on every replicate. Writes
    /// `<outdir>/<task>/<method>/<seed>.json` and `<outdir>/<task>/summary.csv`.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; otherwise `output_dir` from the config, then
        /// $PRNPE_OUTDIR, then `results`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Render posterior density and predictive scatter SVGs from reports.
    Plot {
        /// Replicate report files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Directory for the SVGs; defaults to each report's directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the configured task's pseudo-true parameter as JSON.
    PseudoTruth {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print gap moments and ESS of each preconditioned design for the
    /// observation of `seed`.
    Diagnostics {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write each design to `<dir>/<preconditioner>.csv`.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run { config, out } => {
            let mut cfg = config.load()?;
            cfg.resolve_output_dir(out);
            let outcome = run_experiment(&cfg)?;
            for (m, seed, e) in &outcome.failures {
                eprintln!("{m} seed {seed} failed: {e}");
            }
            println!("{}", outcome.task_dir.join("summary.csv").display());
            Ok(outcome.success())
        }
        Command::Plot { reports, out } => {
            let mut ok = true;
            for r in &reports {
                match plot_report(r, out.as_deref()) {
                    Ok(files) => files.iter().for_each(|f| println!("{}", f.display())),
                    Err(e) => {
                        eprintln!("error: {e:#}");
                        ok = false;
                    }
                }
            }
            if !ok {
                bail!("some reports could not be plotted");
            }
            Ok(true)
        }
        Command::PseudoTruth { config } => {
            let cfg = config.load()?;
            print!("{}", to_rounded_json(&pseudo_truth(&cfg))?);
            Ok(true)
        }
        Command::Diagnostics { config, dump } => {
            let cfg = config.load()?;
            let task = cfg.build_task();
            let designs = design_diagnostics(task.as_ref(), &Preconditioner::ALL, &cfg.pipeline(), cfg.seed)?;
            let summaries: Vec<_> = designs.iter().map(|d| &d.summary).collect();
            print!("{}", to_rounded_json(&summaries)?);
            if let Some(dir) = dump {
                for f in dump_designs(&designs, &dir)? {
                    eprintln!("wrote {}", f.display());
                }
            }
            Ok(true)
        }
    }
}
