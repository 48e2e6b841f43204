//! `ifgan`: synthesize a corpus, train, evaluate, transfer expressions and
//! check gradients.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! format error, 3 numerical failure.

mod commands;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ifgan::training::Precision;

#[derive(Parser, Debug)]
#[command(name = "ifgan", version, about = "Identity-free expression recognition with a conditional GAN")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Training configuration (JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic face corpus as PGM images plus a manifest.
    SynthData {
        #[arg(long, default_value_t = 20)]
        identities: usize,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 4)]
        levels: u8,
        #[arg(long, default_value_t = 64)]
        side: usize,
    },
    /// Train one cross-validation fold.
    Train {
        /// Corpus directory (overrides `data_dir` in the config).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a checkpoint written with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Test accuracy, confusion matrix and identity probes of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Re-render input faces onto the average identity as a PGM grid.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input PGM images, each with a `<image>.keypoints.json` sidecar
        /// unless `--manifest` is given.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Corpus directory whose manifest supplies the keypoints.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every primitive and the joint objective.
    Gradcheck {
        /// Multiplies the number of checked elements.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        /// Corrupt one backward rule (by op name) to test the checker.
        #[arg(long)]
        fault: Option<String>,
    },
    /// Print the subject-exclusive fold plan.
    Folds {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of identities 0..n when no corpus is given.
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        n_folds: Option<usize>,
    },
    /// Train and test IF-GAN and the raw-image baseline on every fold.
    CrossValidate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Subset of folds to run (all by default).
        #[arg(long, value_delimiter = ',')]
        folds: Vec<usize>,
        #[arg(long)]
        steps: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let g = &cli.global;
    let result = match cli.command {
        Command::SynthData {
            identities,
            classes,
            levels,
            side,
        } => commands::synth_data(g, identities, classes, levels, side),
        Command::Train {
            data,
            fold,
            steps,
            resume,
        } => commands::train(g, data, fold, steps, resume),
        Command::Eval { checkpoint, data, fold } => commands::eval(g, &checkpoint, data, fold),
        Command::Transfer {
            checkpoint,
            input,
            manifest,
            out,
        } => commands::transfer(&checkpoint, &input, manifest.as_deref(), &out),
        Command::Gradcheck { scale, fault } => commands::gradcheck(g, scale, fault.as_deref()),
        Command::Folds {
            data,
            identities,
            n_folds,
        } => commands::folds(g, data, identities, n_folds),
        Command::CrossValidate { data, folds, steps } => commands::cross_validate(g, data, &folds, steps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
