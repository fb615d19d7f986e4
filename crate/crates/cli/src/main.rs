use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lvflex_cli::config::{OracleConfig, StudyConfig};
use lvflex_cli::plot;
use lvflex_cli::run::{self, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "lvflex",
    about = "Aggregated P-Q flexibility areas of unbalanced LV networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a study grid from a JSON config and write all artifacts.
    Run(RunArgs),
    /// Render one or more boundary JSON files into a single SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Study configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the case path from the config.
    #[arg(long)]
    case: Option<PathBuf>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of parallel worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Record degenerate boundaries instead of failing the run.
    #[arg(long)]
    allow_degenerate: bool,
    /// Enable per-cell oracle verification, e.g. `n=1000,seed=7`.
    #[arg(long)]
    oracle: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Boundary JSON files, drawn in the given order.
    #[arg(required = true)]
    boundaries: Vec<PathBuf>,
    /// Output SVG path.
    #[arg(long, short)]
    out: PathBuf,
}

fn parse_oracle_flag(s: &str) -> Result<OracleConfig, String> {
    let mut n = None;
    let mut seed = None;
    for part in s.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("bad --oracle component {part:?} (expected key=value)"))?;
        match key.trim() {
            "n" => n = Some(value.trim().parse::<usize>().map_err(|e| e.to_string())?),
            "seed" => seed = Some(value.trim().parse::<u64>().map_err(|e| e.to_string())?),
            other => return Err(format!("unknown --oracle key {other:?}")),
        }
    }
    match n {
        Some(n) if n > 0 => Ok(OracleConfig {
            n,
            seed: seed.unwrap_or(0),
        }),
        _ => Err("--oracle requires n=<positive>".into()),
    }
}

fn run_command(args: &RunArgs) -> i32 {
    let mut config = match StudyConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(case) = &args.case {
        config.case_path = case.clone();
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(flag) = &args.oracle {
        match parse_oracle_flag(flag) {
            Ok(oracle) => config.oracle = Some(oracle),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        }
    }
    match run::run(&config, args.jobs, args.allow_degenerate) {
        Ok(table) => {
            print!("{table}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn plot_command(args: &PlotArgs) -> i32 {
    match plot::plot(&args.boundaries, &args.out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Plot(args) => plot_command(args),
    };
    ExitCode::from(code as u8)
}
