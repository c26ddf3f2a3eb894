use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use defectnet::cam::{DEFAULT_ALPHA, DEFAULT_THRESHOLD};
use defectnet::data::TILE;
use defectnet_cli::commands::{self, CamClass, CamOptions, EXIT_CONFIG};
use defectnet_cli::{CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "defectnet", version, about = "Building-defect classifier with class activation maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Slice survey photos into square tiles, keeping class directories.
    Prepare {
        src: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = TILE)]
        tile: usize,
    },
    /// Train from a `key = value` config file.
    Train { config: PathBuf },
    /// Print a classification report for a model on a test tree, or for
    /// replayed confusion counts.
    Eval {
        #[arg(required_unless_present = "counts")]
        model: Option<PathBuf>,
        #[arg(required_unless_present = "counts")]
        test_dir: Option<PathBuf>,
        /// CSV of confusion counts, rows true and columns predicted.
        #[arg(long, conflicts_with_all = ["model", "test_dir"])]
        counts: Option<PathBuf>,
        /// Where to write the confusion matrix CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = TILE)]
        input_size: usize,
    },
    /// Classify one PPM image.
    Predict {
        model: PathBuf,
        image: PathBuf,
        #[arg(long, default_value_t = TILE)]
        input_size: usize,
    },
    /// Render a class activation map overlay.
    Cam {
        model: PathBuf,
        image: PathBuf,
        out: PathBuf,
        /// `auto` for the predicted class, or a label name.
        #[arg(long, default_value = "auto")]
        class: CamClass,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f32,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long, default_value_t = TILE)]
        input_size: usize,
    },
}

fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Prepare { src, out: dst, tile } => commands::cmd_prepare(&src, &dst, tile, out, err).map(drop),
        Command::Train { config } => {
            let cfg = RunConfig::load(&config).map_err(|m| commands::CliError::new(EXIT_CONFIG, m))?;
            commands::cmd_train(&cfg, out, err).map(drop)
        }
        Command::Eval {
            model,
            test_dir,
            counts,
            out: csv,
            input_size,
        } => match (counts, model, test_dir) {
            (Some(c), _, _) => commands::cmd_eval_counts(&c, csv.as_deref(), out).map(drop),
            (None, Some(m), Some(t)) => commands::cmd_eval(&m, &t, input_size, csv.as_deref(), out, err).map(drop),
            _ => unreachable!("clap enforces model and test_dir without --counts"),
        },
        Command::Predict {
            model,
            image,
            input_size,
        } => commands::cmd_predict(&model, &image, input_size, out).map(drop),
        Command::Cam {
            model,
            image,
            out: dst,
            class,
            alpha,
            threshold,
            input_size,
        } => {
            let opts = CamOptions {
                class,
                alpha,
                threshold,
                input_size,
            };
            commands::cmd_cam(&model, &image, &dst, &opts, out).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (stdout, stderr) = (io::stdout(), io::stderr());
    match run(cli, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
