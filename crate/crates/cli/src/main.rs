use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use planefilter_cli::commands::{self, EvalArgs, EvalMode, FilterArgs, RefineArgs};
use planefilter_cli::CliError;

#[derive(Parser)]
#[command(name = "planefilter", version, about = "Planar match filtering, NCC refinement and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pose,
    Homography,
}

#[derive(Subcommand)]
enum Command {
    /// Drop matches that no plane supports.
    Filter {
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit midpoint homography pairs instead of single homographies.
        #[arg(long)]
        miho: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Upper bound on RANSAC iterations per plane.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Relaxed inlier threshold in pixels (the strict one is half).
        #[arg(long = "tl")]
        t_l: Option<f64>,
        /// Minimum inliers for a plane.
        #[arg(long)]
        n_min: Option<usize>,
    },
    /// Refine keypoint positions by NCC template matching.
    Refine {
        #[arg(long, required_unless_present = "from_result")]
        matches: Option<PathBuf>,
        #[arg(long)]
        img1: PathBuf,
        #[arg(long)]
        img2: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Filter result whose kept matches and planes drive the warps.
        #[arg(long)]
        from_result: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        radius: usize,
    },
    /// Score a match set against ground truth.
    Eval {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene with ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    planefilter_cli::configure_threads()?;
    match cli.command {
        Command::Filter {
            matches,
            out,
            miho,
            seed,
            max_iters,
            t_l,
            n_min,
        } => commands::cmd_filter(&FilterArgs {
            matches,
            out,
            miho,
            seed,
            max_iters,
            t_l,
            n_min,
        }),
        Command::Refine {
            matches,
            img1,
            img2,
            out,
            from_result,
            radius,
        } => commands::cmd_refine(&RefineArgs {
            matches,
            img1,
            img2,
            out,
            from_result,
            radius,
        }),
        Command::Eval {
            base,
            pred,
            gt,
            mode,
            out,
        } => commands::cmd_eval(&EvalArgs {
            base,
            pred,
            gt,
            mode: match mode {
                Mode::Pose => EvalMode::Pose,
                Mode::Homography => EvalMode::Homography,
            },
            out,
        }),
        Command::Synth { spec, out_dir } => commands::cmd_synth(&spec, &out_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("planefilter: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
