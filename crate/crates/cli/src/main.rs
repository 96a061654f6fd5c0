use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use smc_core::harness::{self, ExperimentConfig, RunOptions, ERROR_FILE, OUT_ROOT_ENV};
use smc_core::symbolic::{MergeRule, Weighting};
use smc_core::Error;

#[derive(Parser)]
#[command(name = "smc", version, about = "Run semantic multiverse experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a JSON config.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root for relative output directories.
        #[arg(long, env = OUT_ROOT_ENV)]
        out_root: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Build the symbolic graph of saved actors.
    Extract {
        actors_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Merge message tuples within this Chebyshev radius; exact cells when absent.
        #[arg(long)]
        radius: Option<usize>,
        #[arg(long, value_enum, default_value_t = WeightingArg::Support)]
        weighting: WeightingArg,
    },
    /// Summarize a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Uniform,
    Support,
}

fn fail(err: &Error, dir: Option<&Path>) -> ExitCode {
    let text = harness::error_json(err);
    if let Some(dir) = dir {
        if fs::create_dir_all(dir).is_ok() {
            // Best effort: the error is also printed below.
            let _ = fs::write(dir.join(ERROR_FILE), &text);
        }
    }
    eprint!("{text}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            out_root,
        } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e, None),
            };
            let opts = RunOptions { seed, out, out_root };
            match harness::run_scenario(&cfg, &opts) {
                Ok(run) => {
                    println!("{}", run.dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e, Some(&harness::resolve_output_dir(&cfg, &opts))),
            }
        }
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(cfg) => {
                println!("ok: {} with {} seed(s)", cfg.scenario_name(), cfg.seeds.len());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, None),
        },
        Command::Extract {
            actors_dir,
            out,
            radius,
            weighting,
        } => {
            let rule = radius.map_or(MergeRule::ExactCell, |r| MergeRule::Radius { r });
            let weighting = match weighting {
                WeightingArg::Uniform => Weighting::Uniform,
                WeightingArg::Support => Weighting::Support,
            };
            match harness::extract(&actors_dir, &out, rule, weighting) {
                Ok(dir) => {
                    println!("{}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e, Some(&out)),
            }
        }
        Command::Report { run_dir } => match harness::report(&run_dir) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, None),
        },
    }
}
