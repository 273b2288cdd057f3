use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;

/// Object-goal navigation in gridworlds with an implicit obstacle map and
/// attention over target memory.
#[derive(Parser)]
#[command(name = "iomnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override config file values.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Global seed for all randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus root containing train/, val/ and test/.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
}

/// Model ablation switches.
#[derive(Args, Clone, Debug, Default)]
pub struct Ablations {
    /// Replace the obstacle embedding with zeros.
    #[arg(long)]
    pub no_iom: bool,
    /// Average encoded memory rows instead of attending over them.
    #[arg(long)]
    pub no_ntma: bool,
    /// Reward scheme: rm or sparse.
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene corpus with train/val/test splits.
    GenScenes {
        #[command(flatten)]
        common: Common,
        /// Output directory (defaults to the configured scene root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Behavior cloning on shortest-path expert demonstrations.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablations: Ablations,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Actor-critic training on the train split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablations: Ablations,
        #[arg(long)]
        out: PathBuf,
        /// Initial parameters, e.g. a pretrained checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy evaluation; writes metrics, collision CSV and traces.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablations: Ablations,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Keep detector noise on during evaluation.
        #[arg(long)]
        noisy: bool,
    },
    /// Train and evaluate the 2x2x2 grid of IOM / attention / reward toggles.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Dump the obstacle map after every step of an evaluated episode.
    InspectIom {
        #[command(flatten)]
        common: Common,
        /// Rerun the policy greedily instead of following the stored trace.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Episode index written by `eval`.
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute persisted traces and verify rewards and metrics.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Episode index written by `eval`.
        #[arg(long)]
        episodes: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenScenes { common, out } => commands::gen_scenes(&common, out),
        Command::Pretrain {
            common,
            ablations,
            out,
            epochs,
        } => commands::pretrain(&common, &ablations, &out, epochs),
        Command::Train {
            common,
            ablations,
            out,
            init,
            workers,
            episodes,
            resume,
        } => commands::train(&common, &ablations, &out, init, workers, episodes, resume),
        Command::Eval {
            common,
            ablations,
            checkpoint,
            out,
            split,
            repetitions,
            noisy,
        } => commands::eval(&common, &ablations, &checkpoint, &out, &split, repetitions, noisy),
        Command::Ablate {
            common,
            out,
            seeds,
            episodes,
        } => commands::ablate(&common, &out, seeds, episodes),
        Command::InspectIom {
            common,
            checkpoint,
            episodes,
            index,
            out,
        } => commands::inspect_iom(&common, checkpoint.as_deref(), &episodes, index, out),
        Command::Replay { common, episodes } => commands::replay(&common, &episodes),
    }
}
