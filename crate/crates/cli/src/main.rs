use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use sal_cli::{run, Overrides, PipelineInvocation, Subcommand};

#[derive(Parser)]
#[command(name = "sal", version, about = "Perturb datasets, evaluate SLAM, diagnose tracking, search robustness boundaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Generate the perturbed copies listed in the config
    Perturb(Common),
    /// Run SLAM on clean and perturbed sequences and score the trajectories
    SlamEval(Common),
    /// Feature-tracking statistics on clean and perturbed sequences
    Odometry(Common),
    /// Bisection search for the parameter value where SLAM starts failing
    Boundary(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (YAML)
    #[arg(long, short)]
    config: PathBuf,
    /// Replace output.base_dir
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Number of SLAM runs per sequence
    #[arg(long)]
    runs: Option<usize>,
    /// Replace experiment.master_seed
    #[arg(long)]
    seed: Option<u64>,
    /// `mock` or a wrapper spec file; repeatable
    #[arg(long = "wrapper")]
    wrappers: Vec<String>,
    /// Regenerate outputs that are up to date
    #[arg(long)]
    force: bool,
    /// Print the planned actions and touch nothing
    #[arg(long)]
    dry_run: bool,
    /// Generate missing perturbed data instead of failing
    #[arg(long)]
    auto_perturb: bool,
    /// Directory of `<setting>.json` feature tracks (odometry)
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// JSON tracker parameters (odometry)
    #[arg(long)]
    tracker_params: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (subcommand, c) = match cli.command {
        Command::Perturb(c) => (Subcommand::Perturb, c),
        Command::SlamEval(c) => (Subcommand::SlamEval, c),
        Command::Odometry(c) => (Subcommand::Odometry, c),
        Command::Boundary(c) => (Subcommand::Boundary, c),
    };
    let inv = PipelineInvocation {
        subcommand,
        config: c.config,
        overrides: Overrides {
            output_dir: c.output_dir,
            runs: c.runs,
            seed: c.seed,
            wrappers: c.wrappers,
            force: c.force,
            dry_run: c.dry_run,
            auto_perturb: c.auto_perturb,
            tracks: c.tracks,
            tracker_params: c.tracker_params,
        },
    };
    match run(&inv) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            for l in &e.lines {
                println!("{l}");
            }
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
