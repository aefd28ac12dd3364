//! `megkws` command-line driver.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use megkws::harness::{self, KeywordSelection, RunConfig};
use megkws::Error;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "megkws", version, about = "Event-referenced keyword spotting workbench")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config (comments allowed). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.max_epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    set: Vec<String>,
    /// Corpus directory (overrides config and MEGKWS_DATA_ROOT).
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Output directory for runs and reports.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus into the data root.
    Synth,
    /// Train every configured seed.
    Train,
    /// Evaluate trained seeds on the test session against permutation baselines.
    Evaluate,
    /// Train on nested fractions of the training sessions.
    SweepScaling {
        /// Comma-separated fractions in (0, 1].
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Train over a grid of pre/post-onset buffers.
    SweepOffsets {
        #[arg(long, value_delimiter = ',')]
        neg_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        pos_grid: Option<Vec<f64>>,
    },
    /// Per-keyword detection metrics; `auto` picks the most frequent word per length.
    SweepKeywords {
        #[arg(long, value_delimiter = ',')]
        keywords: Option<Vec<String>>,
    },
    /// Operating-point roster from score files or the trained seeds.
    OperatingPoints {
        /// Scores CSV, one per seed (presentation mode). Repeatable.
        #[arg(long)]
        scores: Vec<PathBuf>,
        /// Window length in seconds for FP/h coverage.
        #[arg(long)]
        window_s: Option<f64>,
    },
    /// Collect existing outputs into report.md.
    Report {
        /// Skip SVG charts.
        #[arg(long)]
        no_svg: bool,
    },
}

fn print<T: Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn config(common: &Common) -> Result<RunConfig, Error> {
    let mut sets = common.set.clone();
    for (key, path) in [("data_root", &common.data_root), ("output_dir", &common.output_dir)] {
        if let Some(p) = path {
            sets.push(format!("{key}={}", serde_json::to_string(&p.to_string_lossy())?));
        }
    }
    RunConfig::resolve(common.config.as_deref(), &sets)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::Synth => print(&harness::cmd_synth(&cfg)?),
        Command::Train => print(&harness::cmd_train(&cfg)?),
        Command::Evaluate => print(&harness::cmd_evaluate(&cfg)?.table),
        Command::SweepScaling { fractions } => {
            let fractions = fractions.unwrap_or_else(|| cfg.sweeps.fractions.clone());
            print(&harness::cmd_sweep_scaling(&cfg, &fractions)?.summary)
        }
        Command::SweepOffsets { neg_grid, pos_grid } => {
            let neg = neg_grid.unwrap_or_else(|| cfg.sweeps.neg_grid.clone());
            let pos = pos_grid.unwrap_or_else(|| cfg.sweeps.pos_grid.clone());
            print(&harness::cmd_sweep_offsets(&cfg, &neg, &pos)?.summary)
        }
        Command::SweepKeywords { keywords } => {
            let selection = match keywords {
                Some(list) if !(list.len() == 1 && list[0] == "auto") => KeywordSelection::List(list),
                Some(_) => KeywordSelection::Auto(harness::AutoKeywords::Auto),
                None => cfg.sweeps.keywords.clone(),
            };
            print(&harness::cmd_sweep_keywords(&cfg, &selection)?.summary)
        }
        Command::OperatingPoints { scores, window_s } => {
            print(&harness::cmd_operating_points(&cfg, &scores, window_s)?.rows)
        }
        Command::Report { no_svg } => {
            let path = harness::cmd_report(&cfg, !no_svg)?;
            let _ = writeln!(std::io::stdout().lock(), "{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
