use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

mod commands;

/// Deformable tri-plane volume generation toolkit.
#[derive(Debug, Parser)]
#[command(name = "tridef", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed; overrides every seed field of the config when given.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Progress messages on stderr; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a generated sample under a deformed geometry.
    Render(commands::RenderArgs),
    /// Map points from an observation mesh to a canonical mesh.
    Deform(commands::DeformArgs),
    /// Compare the Jacobian-norm estimators on a random linear map.
    EstimateJnorm(commands::JnormArgs),
    /// Recover the style vector of a target image.
    Invert(commands::InvertArgs),
    /// Build the embedding cache of a dataset by inversion and neutral re-rendering.
    Canonize(commands::CanonizeArgs),
    /// Run or resume a training stage.
    Train(commands::TrainArgs),
    /// Paired collapse experiment with and without the Jacobian penalty.
    CollapseDemo(commands::CollapseArgs),
    /// Similarity of image embeddings to main and noise prompt embeddings.
    EmbedAnalyze(commands::AnalyzeArgs),
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERIC: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|e| e.downcast_ref::<tridef::Error>())
        .any(tridef::Error::is_numeric);
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
